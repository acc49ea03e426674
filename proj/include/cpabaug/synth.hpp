#pragma once

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <string>
#include <vector>

#include "cpabaug/image.hpp"

namespace cpabaug {

/// Parameters of the synthetic blob corpus.
///
/// Each blob is star-convex around its center with radius
///   r(phi) = r0 * (1 + sum_{k=1..H} a_k cos(k phi + psi_k)),
/// a_k uniform in +-amplitude / k and psi_k uniform in [0, 2 pi).
struct SyntheticCorpusSpec {
  int n_images = 200;
  int width = 96;
  int height = 96;
  int blobs_min = 1;
  int blobs_max = 3;
  int harmonics = 3;
  double radius_min = 7.0;
  double radius_max = 13.0;
  double amplitude = 0.3;
  double background = 0.15;
  double background_noise = 0.05;
  double blob_intensity_min = 0.55;
  double blob_intensity_max = 0.9;
  double texture_amplitude = 0.12;
  double texture_period_min = 5.0;
  double texture_period_max = 10.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SyntheticImage {
  std::string id;
  Image image;
  Mask mask;  // label 1 inside blobs
  int blobs = 0;
};

/// Image `index` of the corpus; depends only on (spec, index).
SyntheticImage generate_image(const SyntheticCorpusSpec& spec, int index);

struct CorpusEntry {
  std::string id;
  std::string image;  // relative to the corpus directory
  std::string mask;
};

inline constexpr const char* kCorpusSchema = "corpus-v1";

/// Writes images/<id>.pgm, masks/<id>.pgm and manifest.json.
void write_corpus(const std::filesystem::path& dir, const SyntheticCorpusSpec& spec);

/// Corpus manifest entries (path to manifest.json or its directory).
std::vector<CorpusEntry> read_corpus(const std::filesystem::path& path);

/// Writes a manifest for already-written image/mask files.
void write_corpus_manifest(const std::filesystem::path& dir, const std::vector<CorpusEntry>& entries,
                           const nlohmann::ordered_json& extra = nlohmann::ordered_json::object());

nlohmann::ordered_json to_json(const SyntheticCorpusSpec& spec);

}  // namespace cpabaug
