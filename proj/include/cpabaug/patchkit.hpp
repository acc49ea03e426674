#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "cpabaug/image.hpp"

namespace cpabaug {

/// Half-open pixel box [row0, row1) x [col0, col1).
struct BBox {
  int row0 = 0;
  int col0 = 0;
  int row1 = 0;
  int col1 = 0;

  int height() const { return row1 - row0; }
  int width() const { return col1 - col0; }
  bool contains(int row, int col) const { return row >= row0 && row < row1 && col >= col0 && col < col1; }
  bool operator==(const BBox&) const = default;
};

struct PatchRecord {
  Image patch;       // S x S, zero outside patch_mask
  Mask patch_mask;   // S x S, 0/1
  BBox bbox;         // in source coordinates
  std::string source_id;
  int original_h = 0;
  int original_w = 0;
  int label = 1;
  Mask object_mask;  // bbox-sized 0/1 mask of the component (not serialized)
};

struct PatchPair {
  int src_index = 0;
  int tgt_index = 0;
  double distance = 0.0;
  bool operator==(const PatchPair&) const = default;
};

struct ExtractOptions {
  int patch_size = 30;
  int min_area = 16;
};

/// One record per 4-connected component of {mask == label} with at least
/// min_area pixels, in row-major order of each component's first pixel.
std::vector<PatchRecord> extract_objects(const Image& image, const Mask& mask, int label,
                                         const ExtractOptions& opts = {}, const std::string& source_id = {});

/// 4-connected components of {mask == label}: one list of (row, col) per
/// component in scan order.
std::vector<std::vector<std::pair<int, int>>> connected_components(const Mask& mask, int label);

/// Euclidean distance between two patches' flattened intensities.
double patch_distance(const Image& a, const Image& b);

/// Each patch paired with its K nearest others (ties to the lower index).
/// Throws TooFewPatches for fewer than 2 patches.
std::vector<PatchPair> pair_patches(const std::vector<PatchRecord>& patches, int k);

/// On-disk training set: 8-bit patch PGMs plus a JSON manifest.
struct PairSet {
  int patch_size = 30;
  std::vector<PatchRecord> patches;
  std::vector<PatchPair> pairs;
};

inline constexpr const char* kPairsetSchema = "pairset-v1";

/// Writes `<dir>/manifest.json` and `<dir>/patches/`. Patch intensities are
/// stored 8-bit, so callers that need an exact round trip pass patches
/// already snapped with quantize8.
void write_pairset(const std::filesystem::path& dir, const PairSet& set);

/// Reads a manifest written by write_pairset (path to the manifest file or
/// its directory). Throws SchemaError on a malformed manifest and IoError
/// naming the path of any missing patch file.
PairSet read_pairset(const std::filesystem::path& path);

}  // namespace cpabaug
