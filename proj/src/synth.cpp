#include "cpabaug/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "cpabaug/errors.hpp"
#include "cpabaug/patchkit.hpp"
#include "cpabaug/rng.hpp"

namespace cpabaug {

using ojson = nlohmann::ordered_json;

void SyntheticCorpusSpec::validate() const {
  if (n_images < 0) throw ValidationError("synth.n_images must be non-negative");
  if (width < 8 || height < 8) throw ValidationError("synth image size must be at least 8x8");
  if (blobs_min < 0 || blobs_max < blobs_min) throw ValidationError("synth needs 0 <= blobs_min <= blobs_max");
  if (harmonics < 0) throw ValidationError("synth.harmonics must be non-negative");
  if (!(radius_min > 0.0 && radius_min <= radius_max)) throw ValidationError("synth needs 0 < radius_min <= radius_max");
  if (!(amplitude >= 0.0 && amplitude < 0.5)) throw ValidationError("synth.amplitude must lie in [0, 0.5)");
  if (!(blob_intensity_min >= 0.0 && blob_intensity_min <= blob_intensity_max && blob_intensity_max <= 1.0))
    throw ValidationError("synth blob intensity range must lie in [0, 1]");
  if (!(background >= 0.0 && background <= 1.0 && background_noise >= 0.0))
    throw ValidationError("synth background must lie in [0, 1] with non-negative noise");
  if (!(texture_amplitude >= 0.0)) throw ValidationError("synth.texture_amplitude must be non-negative");
  if (!(texture_period_min > 0.0 && texture_period_min <= texture_period_max))
    throw ValidationError("synth needs 0 < texture_period_min <= texture_period_max");
}

namespace {

std::string image_id(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "img_%05d", index);
  return buf;
}

struct Blob {
  double cx, cy, r0, reach;
  std::vector<double> a, psi;
};

double blob_radius(const Blob& b, double phi) {
  double s = 1.0;
  for (std::size_t k = 0; k < b.a.size(); ++k) s += b.a[k] * std::cos((k + 1) * phi + b.psi[k]);
  return b.r0 * s;
}

// Smallest component area that still counts as an object downstream.
constexpr int kMinBlobArea = 16;

}  // namespace

SyntheticImage generate_image(const SyntheticCorpusSpec& spec, int index) {
  spec.validate();
  SyntheticImage out;
  out.id = image_id(index);
  Rng rng(derive_seed(spec.seed, out.id));
  const int W = spec.width, H = spec.height;

  std::vector<double> px(static_cast<std::size_t>(W) * H);
  for (double& v : px) v = spec.background + spec.background_noise * (2.0 * rng.uniform() - 1.0);
  out.mask = Mask(W, H);

  const int n_blobs = spec.blobs_min + static_cast<int>(rng.below(spec.blobs_max - spec.blobs_min + 1));
  std::vector<Blob> placed;
  for (int bi = 0; bi < n_blobs; ++bi) {
    Blob b;
    b.r0 = rng.uniform(spec.radius_min, spec.radius_max);
    double sum_abs = 0.0;
    for (int k = 1; k <= spec.harmonics; ++k) {
      b.a.push_back(rng.uniform(-spec.amplitude, spec.amplitude) / k);
      b.psi.push_back(rng.uniform(0.0, 2.0 * std::numbers::pi));
      sum_abs += std::abs(b.a.back());
    }
    b.reach = b.r0 * (1.0 + sum_abs);
    const double base = rng.uniform(spec.blob_intensity_min, spec.blob_intensity_max);
    const double tex_angle = rng.uniform(0.0, std::numbers::pi);
    const double tex_period = rng.uniform(spec.texture_period_min, spec.texture_period_max);
    const double tex_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);

    const double lo_x = b.reach + 1.0, hi_x = W - b.reach - 1.0;
    const double lo_y = b.reach + 1.0, hi_y = H - b.reach - 1.0;
    if (lo_x > hi_x || lo_y > hi_y) continue;
    bool ok = false;
    for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
      b.cx = rng.uniform(lo_x, hi_x);
      b.cy = rng.uniform(lo_y, hi_y);
      ok = std::all_of(placed.begin(), placed.end(), [&](const Blob& o) {
        return std::hypot(b.cx - o.cx, b.cy - o.cy) > b.reach + o.reach + 3.0;
      });
    }
    if (!ok) continue;

    // Rasterize into a local mask, keep the largest 4-connected piece.
    Mask local(W, H);
    for (int r = 0; r < H; ++r) {
      for (int c = 0; c < W; ++c) {
        const double dx = c + 0.5 - b.cx, dy = r + 0.5 - b.cy;
        const double rho = std::hypot(dx, dy);
        if (rho <= blob_radius(b, std::atan2(dy, dx))) local.set(r, c, 1);
      }
    }
    auto comps = connected_components(local, 1);
    if (comps.empty()) continue;
    const auto& best = *std::max_element(comps.begin(), comps.end(),
                                         [](const auto& x, const auto& y) { return x.size() < y.size(); });
    if (static_cast<int>(best.size()) < kMinBlobArea) continue;
    for (auto [r, c] : best) {
      const double dx = c + 0.5 - b.cx, dy = r + 0.5 - b.cy;
      const double rel = std::hypot(dx, dy) / blob_radius(b, std::atan2(dy, dx));
      const double along = dx * std::cos(tex_angle) + dy * std::sin(tex_angle);
      const double v = base * (1.0 - 0.35 * rel * rel) +
                       spec.texture_amplitude * std::sin(2.0 * std::numbers::pi * along / tex_period + tex_phase);
      px[static_cast<std::size_t>(r) * W + c] = v;
      out.mask.set(r, c, 1);
    }
    placed.push_back(b);
  }
  for (double& v : px) v = std::clamp(v, 0.0, 1.0);
  out.image = quantize8(Image(W, H, std::move(px)));
  out.blobs = static_cast<int>(placed.size());
  return out;
}

ojson to_json(const SyntheticCorpusSpec& s) {
  ojson j;
  j["n_images"] = s.n_images;
  j["width"] = s.width;
  j["height"] = s.height;
  j["blobs_min"] = s.blobs_min;
  j["blobs_max"] = s.blobs_max;
  j["harmonics"] = s.harmonics;
  j["radius_min"] = s.radius_min;
  j["radius_max"] = s.radius_max;
  j["amplitude"] = s.amplitude;
  j["background"] = s.background;
  j["background_noise"] = s.background_noise;
  j["blob_intensity_min"] = s.blob_intensity_min;
  j["blob_intensity_max"] = s.blob_intensity_max;
  j["texture_amplitude"] = s.texture_amplitude;
  j["texture_period_min"] = s.texture_period_min;
  j["texture_period_max"] = s.texture_period_max;
  j["seed"] = s.seed;
  return j;
}

void write_corpus_manifest(const std::filesystem::path& dir, const std::vector<CorpusEntry>& entries,
                           const ojson& extra) {
  ojson doc;
  doc["schema"] = kCorpusSchema;
  for (const auto& [k, v] : extra.items()) doc[k] = v;
  ojson list = ojson::array();
  for (const auto& e : entries) list.push_back({{"id", e.id}, {"image", e.image}, {"mask", e.mask}});
  doc["images"] = std::move(list);
  const auto path = dir / "manifest.json";
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << doc.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

void write_corpus(const std::filesystem::path& dir, const SyntheticCorpusSpec& spec) {
  spec.validate();
  std::error_code ec;
  std::filesystem::create_directories(dir / "images", ec);
  if (!ec) std::filesystem::create_directories(dir / "masks", ec);
  if (ec) throw IoError("cannot create corpus directory " + dir.string() + ": " + ec.message());
  std::vector<CorpusEntry> entries;
  for (int i = 0; i < spec.n_images; ++i) {
    const SyntheticImage s = generate_image(spec, i);
    CorpusEntry e{s.id, "images/" + s.id + ".pgm", "masks/" + s.id + ".pgm"};
    write_pgm(dir / e.image, s.image);
    write_pgm(dir / e.mask, s.mask);
    entries.push_back(std::move(e));
  }
  write_corpus_manifest(dir, entries, {{"generator", to_json(spec)}});
}

std::vector<CorpusEntry> read_corpus(const std::filesystem::path& path) {
  const std::filesystem::path manifest = std::filesystem::is_directory(path) ? path / "manifest.json" : path;
  std::ifstream in(manifest, std::ios::binary);
  if (!in) throw IoError("cannot open corpus manifest " + manifest.string());
  ojson doc;
  try {
    doc = ojson::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError(manifest.string() + ": invalid JSON at byte " + std::to_string(e.byte) + ": " + e.what());
  }
  if (!doc.is_object() || doc.value("schema", std::string()) != kCorpusSchema)
    throw SchemaError(manifest.string() + ": expected schema '" + kCorpusSchema + "'");
  if (!doc.contains("images") || !doc["images"].is_array())
    throw SchemaError(manifest.string() + ": 'images' must be an array");
  std::vector<CorpusEntry> out;
  for (std::size_t i = 0; i < doc["images"].size(); ++i) {
    const ojson& e = doc["images"][i];
    const std::string where = manifest.string() + ": images[" + std::to_string(i) + "]";
    try {
      out.push_back({e.at("id").get<std::string>(), e.at("image").get<std::string>(), e.at("mask").get<std::string>()});
    } catch (const nlohmann::json::exception& ex) {
      throw SchemaError(where + ": " + ex.what());
    }
  }
  return out;
}

}  // namespace cpabaug
