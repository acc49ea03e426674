#include "cpabaug/patchkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <numeric>

#include "cpabaug/errors.hpp"
#include "cpabaug/warp.hpp"

namespace cpabaug {

using ojson = nlohmann::ordered_json;

std::vector<std::vector<std::pair<int, int>>> connected_components(const Mask& mask, int label) {
  const int w = mask.width(), h = mask.height();
  std::vector<unsigned char> seen(static_cast<std::size_t>(w) * h, 0);
  std::vector<std::vector<std::pair<int, int>>> comps;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const std::size_t start = static_cast<std::size_t>(r) * w + c;
      if (seen[start] || mask.at(r, c) != label) continue;
      std::vector<std::pair<int, int>> comp{{r, c}};
      seen[start] = 1;
      for (std::size_t head = 0; head < comp.size(); ++head) {
        const auto [cr, cc] = comp[head];
        const int nbr[4][2] = {{cr - 1, cc}, {cr + 1, cc}, {cr, cc - 1}, {cr, cc + 1}};
        for (const auto& n : nbr) {
          if (n[0] < 0 || n[0] >= h || n[1] < 0 || n[1] >= w) continue;
          const std::size_t idx = static_cast<std::size_t>(n[0]) * w + n[1];
          if (seen[idx] || mask.at(n[0], n[1]) != label) continue;
          seen[idx] = 1;
          comp.emplace_back(n[0], n[1]);
        }
      }
      comps.push_back(std::move(comp));
    }
  }
  return comps;
}

std::vector<PatchRecord> extract_objects(const Image& image, const Mask& mask, int label, const ExtractOptions& opts,
                                         const std::string& source_id) {
  if (image.width() != mask.width() || image.height() != mask.height()) {
    throw ShapeMismatch("image and mask shapes differ");
  }
  if (opts.patch_size < 4) throw ValidationError("patch size must be >= 4");

  std::vector<PatchRecord> records;
  for (const auto& comp : connected_components(mask, label)) {
    if (static_cast<int>(comp.size()) < opts.min_area) continue;
    BBox box{comp[0].first, comp[0].second, comp[0].first + 1, comp[0].second + 1};
    for (const auto& [r, c] : comp) {
      box.row0 = std::min(box.row0, r);
      box.col0 = std::min(box.col0, c);
      box.row1 = std::max(box.row1, r + 1);
      box.col1 = std::max(box.col1, c + 1);
    }

    Mask object(box.width(), box.height());
    for (const auto& [r, c] : comp) object.set(r - box.row0, c - box.col0, 1);
    Image crop(box.width(), box.height());
    for (int r = 0; r < box.height(); ++r) {
      for (int c = 0; c < box.width(); ++c) {
        if (object.at(r, c)) crop.set(r, c, image.at(box.row0 + r, box.col0 + c));
      }
    }

    PatchRecord rec;
    rec.patch_mask = resize_nearest(object, opts.patch_size, opts.patch_size);
    rec.patch = resize(crop, opts.patch_size, opts.patch_size);
    for (int r = 0; r < opts.patch_size; ++r) {
      for (int c = 0; c < opts.patch_size; ++c) {
        if (!rec.patch_mask.at(r, c)) rec.patch.set(r, c, 0.0);
      }
    }
    rec.bbox = box;
    rec.source_id = source_id;
    rec.original_h = box.height();
    rec.original_w = box.width();
    rec.label = label;
    rec.object_mask = std::move(object);
    records.push_back(std::move(rec));
  }
  return records;
}

double patch_distance(const Image& a, const Image& b) {
  if (a.width() != b.width() || a.height() != b.height()) throw ShapeMismatch("patch shapes differ");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.pixels()[i] - b.pixels()[i];
    s += d * d;
  }
  return std::sqrt(s);
}

std::vector<PatchPair> pair_patches(const std::vector<PatchRecord>& patches, int k) {
  if (k < 1) throw ValidationError("K must be >= 1");
  const int n = static_cast<int>(patches.size());
  if (n < 2) throw TooFewPatches("pairing needs at least 2 patches, got " + std::to_string(n));

  std::vector<double> dist(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const double d = patch_distance(patches[i].patch, patches[j].patch);
      dist[static_cast<std::size_t>(i) * n + j] = d;
      dist[static_cast<std::size_t>(j) * n + i] = d;
    }
  }

  std::vector<PatchPair> pairs;
  const int take = std::min(k, n - 1);
  std::vector<int> others;
  for (int i = 0; i < n; ++i) {
    others.clear();
    for (int j = 0; j < n; ++j) {
      if (j != i) others.push_back(j);
    }
    const double* row = &dist[static_cast<std::size_t>(i) * n];
    std::partial_sort(others.begin(), others.begin() + take, others.end(), [row](int a, int b) {
      return row[a] < row[b] || (row[a] == row[b] && a < b);
    });
    for (int r = 0; r < take; ++r) pairs.push_back({i, others[r], row[others[r]]});
  }
  return pairs;
}

namespace {

std::string indexed_name(const char* stem, std::size_t i) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_%05zu.pgm", stem, i);
  return buf;
}

template <typename T>
T required(const ojson& obj, const char* key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key)) throw SchemaError(where + ": missing key '" + key + "'");
  try {
    return obj.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(where + ": bad value for '" + key + "': " + e.what());
  }
}

}  // namespace

void write_pairset(const std::filesystem::path& dir, const PairSet& set) {
  std::error_code ec;
  std::filesystem::create_directories(dir / "patches", ec);
  if (ec) throw IoError("cannot create " + (dir / "patches").string() + ": " + ec.message());

  ojson doc;
  doc["schema"] = kPairsetSchema;
  doc["patch_size"] = set.patch_size;
  ojson patches = ojson::array();
  for (std::size_t i = 0; i < set.patches.size(); ++i) {
    const PatchRecord& rec = set.patches[i];
    const std::string file = "patches/" + indexed_name("patch", i);
    const std::string mask_file = "patches/" + indexed_name("mask", i);
    write_pgm(dir / file, rec.patch);
    write_binary_pgm(dir / mask_file, rec.patch_mask);
    ojson p;
    p["file"] = file;
    p["mask_file"] = mask_file;
    p["bbox"] = {rec.bbox.row0, rec.bbox.col0, rec.bbox.row1, rec.bbox.col1};
    p["source_id"] = rec.source_id;
    p["original_h"] = rec.original_h;
    p["original_w"] = rec.original_w;
    p["label"] = rec.label;
    patches.push_back(std::move(p));
  }
  doc["patches"] = std::move(patches);
  ojson pairs = ojson::array();
  for (const auto& pr : set.pairs) pairs.push_back({{"src", pr.src_index}, {"tgt", pr.tgt_index}, {"distance", pr.distance}});
  doc["pairs"] = std::move(pairs);

  std::ofstream out(dir / "manifest.json", std::ios::binary);
  if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
  out << doc.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + (dir / "manifest.json").string());
}

PairSet read_pairset(const std::filesystem::path& path) {
  const std::filesystem::path manifest = std::filesystem::is_directory(path) ? path / "manifest.json" : path;
  const std::filesystem::path dir = manifest.parent_path();
  std::ifstream in(manifest, std::ios::binary);
  if (!in) throw IoError("cannot open pairset manifest " + manifest.string());

  ojson doc;
  try {
    doc = ojson::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError(manifest.string() + ": invalid JSON at byte " + std::to_string(e.byte) + ": " + e.what());
  }
  const std::string where = manifest.string();
  const auto schema = required<std::string>(doc, "schema", where);
  if (schema != kPairsetSchema) {
    throw SchemaError(where + ": unsupported schema version '" + schema + "' (expected " + kPairsetSchema + ")");
  }

  PairSet set;
  set.patch_size = required<int>(doc, "patch_size", where);
  if (set.patch_size < 4) throw SchemaError(where + ": patch_size must be >= 4");
  if (!doc.contains("patches") || !doc["patches"].is_array()) throw SchemaError(where + ": 'patches' must be an array");
  if (!doc.contains("pairs") || !doc["pairs"].is_array()) throw SchemaError(where + ": 'pairs' must be an array");

  for (const auto& p : doc["patches"]) {
    const std::string pw = where + ": patch " + std::to_string(set.patches.size());
    PatchRecord rec;
    const auto file = dir / required<std::string>(p, "file", pw);
    const auto mask_file = dir / required<std::string>(p, "mask_file", pw);
    if (!std::filesystem::exists(file)) throw IoError("pairset references missing patch file " + file.string());
    if (!std::filesystem::exists(mask_file)) throw IoError("pairset references missing mask file " + mask_file.string());
    rec.patch = read_pgm_image(file);
    rec.patch_mask = read_binary_pgm(mask_file);
    if (rec.patch.width() != set.patch_size || rec.patch.height() != set.patch_size ||
        rec.patch_mask.width() != set.patch_size || rec.patch_mask.height() != set.patch_size) {
      throw SchemaError(pw + ": patch files are not " + std::to_string(set.patch_size) + "x" +
                        std::to_string(set.patch_size));
    }
    const auto bbox = required<std::vector<int>>(p, "bbox", pw);
    if (bbox.size() != 4 || bbox[2] <= bbox[0] || bbox[3] <= bbox[1]) throw SchemaError(pw + ": bad bbox");
    rec.bbox = {bbox[0], bbox[1], bbox[2], bbox[3]};
    rec.source_id = required<std::string>(p, "source_id", pw);
    rec.original_h = required<int>(p, "original_h", pw);
    rec.original_w = required<int>(p, "original_w", pw);
    rec.label = required<int>(p, "label", pw);
    if (rec.original_h != rec.bbox.height() || rec.original_w != rec.bbox.width()) {
      throw SchemaError(pw + ": original size disagrees with bbox");
    }
    set.patches.push_back(std::move(rec));
  }

  const int n = static_cast<int>(set.patches.size());
  for (const auto& q : doc["pairs"]) {
    const std::string qw = where + ": pair " + std::to_string(set.pairs.size());
    PatchPair pr{required<int>(q, "src", qw), required<int>(q, "tgt", qw), required<double>(q, "distance", qw)};
    if (pr.src_index < 0 || pr.src_index >= n || pr.tgt_index < 0 || pr.tgt_index >= n) {
      throw SchemaError(qw + ": index out of range");
    }
    if (pr.src_index == pr.tgt_index) throw SchemaError(qw + ": self pair");
    if (!(pr.distance >= 0.0)) throw SchemaError(qw + ": negative distance");
    set.pairs.push_back(pr);
  }
  return set;
}

}  // namespace cpabaug
