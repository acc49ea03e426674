#include <doctest.h>

#include <set>

#include "cpabaug/augmentor.hpp"
#include "cpabaug/errors.hpp"
#include "cpabaug/synth.hpp"
#include "cpabaug/warp.hpp"
#include "support.hpp"

using namespace cpabaug;
using ojson = nlohmann::ordered_json;

namespace {

// Desk model whose decoder produces non-trivial theta.
GenModel random_model(std::uint64_t seed, double last_scale = 0.3) {
  GenModel m = make_model(Preset::Desk, 16, 4, {}, {});
  Rng rng(seed);
  initialize_params(m, rng);
  const auto& last = m.decoder.layers().back();
  for (std::size_t i = last.weight_offset; i < last.bias_offset + last.out_c; ++i) m.params[i] = last_scale * rng.normal();
  return m;
}

DisplacementField random_field(int w, int h, Rng& rng, double amp) {
  DisplacementField f = DisplacementField::zeros(w, h);
  for (std::size_t i = 0; i < f.dx.size(); ++i) {
    f.dx[i] = rng.uniform(-amp, amp);
    f.dy[i] = rng.uniform(-amp, amp);
  }
  return f;
}

BBox dilate(const BBox& b, int r, int w, int h) {
  return {std::max(0, b.row0 - r), std::max(0, b.col0 - r), std::min(h, b.row1 + r), std::min(w, b.col1 + r)};
}

BBox bbox_from(const ojson& j) { return {j[0].get<int>(), j[1].get<int>(), j[2].get<int>(), j[3].get<int>()}; }

std::set<int> label_set(const Mask& m) { return {m.labels().begin(), m.labels().end()}; }

// Two well separated blobs on a textured background.
std::pair<Image, Mask> two_blobs() {
  Image img(64, 48);
  Mask mask(64, 48);
  for (int r = 0; r < 48; ++r) {
    for (int c = 0; c < 64; ++c) {
      img.set(r, c, 0.2 + 0.1 * std::sin(0.3 * c) * std::cos(0.2 * r));
      const bool a = std::hypot(r - 14, c - 14) < 7.5;
      const bool b = std::hypot((r - 32) / 1.3, c - 46) < 7.0;
      if (a || b) {
        mask.set(r, c, 1);
        img.set(r, c, 0.7 + 0.2 * std::sin(0.9 * c + 0.4 * r));
      }
    }
  }
  return {img, mask};
}

}  // namespace

TEST_CASE("blend config validation") {
  CHECK_NOTHROW((BlendConfig{0, 0.5}.validate()));
  CHECK_THROWS_AS((BlendConfig{-1, 0.5}.validate()), ValidationError);
  CHECK_THROWS_AS((BlendConfig{5, 0.0}.validate()), ValidationError);
  CHECK_THROWS_AS((BlendConfig{5, 1.0}.validate()), ValidationError);
  CHECK(BlendConfig{}.rings == 5);
  CHECK(BlendConfig{}.decay == 0.5);
}

TEST_CASE("ring_index is the Chebyshev distance to the box") {
  const BBox b{10, 20, 15, 30};
  CHECK(ring_index(b, 10, 20) == 0);
  CHECK(ring_index(b, 14, 29) == 0);
  CHECK(ring_index(b, 9, 25) == 1);
  CHECK(ring_index(b, 15, 30) == 1);
  CHECK(ring_index(b, 7, 17) == 3);
  CHECK(ring_index(b, 12, 34) == 5);
}

TEST_CASE("blend_field: constant field decays by gamma per ring") {
  const BBox b{10, 10, 20, 20};
  DisplacementField pf = DisplacementField::zeros(10, 10);
  for (double& v : pf.dx) v = 2.0;
  for (double& v : pf.dy) v = -1.0;
  const BlendConfig cfg{5, 0.5};
  const DisplacementField f = blend_field(pf, b, 40, 40, cfg);
  // Ring 1 next to the middle of the top edge sees only in-box neighbours.
  CHECK(f.dx[f.index(9, 15)] == 1.0);
  CHECK(f.dy[f.index(9, 15)] == -0.5);
  CHECK(f.dx[f.index(8, 15)] == 0.5);
  for (int r = 0; r < 40; ++r) {
    for (int c = 0; c < 40; ++c) {
      if (ring_index(b, r, c) > 5) {
        CHECK(f.dx[f.index(r, c)] == 0.0);
        CHECK(f.dy[f.index(r, c)] == 0.0);
      }
    }
  }
}

TEST_CASE("blend_field: copy inside, monotone ring maxima, continuity bound") {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const int w = 50, h = 40;
    const int bh = 2 + static_cast<int>(rng.below(15)), bw = 2 + static_cast<int>(rng.below(15));
    const int r0 = static_cast<int>(rng.below(h - bh + 1)), c0 = static_cast<int>(rng.below(w - bw + 1));
    const BBox b{r0, c0, r0 + bh, c0 + bw};
    const BlendConfig cfg{static_cast<int>(rng.below(7)), rng.uniform(0.1, 0.9)};
    const DisplacementField pf = random_field(bw, bh, rng, 3.0);
    const DisplacementField f = blend_field(pf, b, w, h, cfg);

    std::vector<double> ring_max(cfg.rings + 2, 0.0);
    double patch_max = 0.0, patch_jump = 0.0, full_jump = 0.0;
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) {
        const std::size_t i = f.index(r, c);
        CHECK(std::isfinite(f.dx[i]));
        const int k = ring_index(b, r, c);
        if (k == 0) {
          const std::size_t j = pf.index(r - r0, c - c0);
          CHECK(f.dx[i] == pf.dx[j]);
          CHECK(f.dy[i] == pf.dy[j]);
        }
        const double m = std::hypot(f.dx[i], f.dy[i]);
        ring_max[std::min(k, cfg.rings + 1)] = std::max(ring_max[std::min(k, cfg.rings + 1)], m);
        if (k == 0) patch_max = std::max(patch_max, m);
        for (int dr = -1; dr <= 1; ++dr) {
          for (int dc = -1; dc <= 1; ++dc) {
            const int rr = r + dr, cc = c + dc;
            if (rr < 0 || cc < 0 || rr >= h || cc >= w) continue;
            const std::size_t j = f.index(rr, cc);
            const double jump = std::hypot(f.dx[i] - f.dx[j], f.dy[i] - f.dy[j]);
            full_jump = std::max(full_jump, jump);
            if (k == 0 && ring_index(b, rr, cc) == 0) patch_jump = std::max(patch_jump, jump);
          }
        }
      }
    }
    for (std::size_t k = 1; k < ring_max.size(); ++k) CHECK(ring_max[k] <= ring_max[k - 1]);
    CHECK(ring_max.back() == 0.0);
    CHECK(full_jump <= patch_jump + patch_max + 1e-12);
  }
}

TEST_CASE("blend_field errors") {
  const DisplacementField pf = DisplacementField::zeros(4, 4);
  CHECK_THROWS_AS(blend_field(pf, {0, 0, 4, 4}, 3, 10, {}), BboxOutOfImage);
  CHECK_THROWS_AS(blend_field(pf, {-1, 0, 3, 4}, 10, 10, {}), BboxOutOfImage);
  CHECK_THROWS_AS(blend_field(pf, {0, 0, 4, 5}, 10, 10, {}), ShapeMismatch);
}

TEST_CASE("deform_in_place: identity at theta = 0") {
  const auto [img, mask] = two_blobs();
  const GenModel m = random_model(2);
  for (const auto& rec : extract_objects(img, mask, 1, {16, 16})) {
    const ImageMask out = deform_in_place(img, mask, rec, Eigen::VectorXd::Zero(m.theta_dim()), m, {});
    CHECK(out.image == img);
    CHECK(out.mask == mask);
  }
}

TEST_CASE("deform_in_place: changes the object, leaves the far field untouched") {
  const auto [img, mask] = two_blobs();
  const GenModel m = random_model(3);
  Rng rng(3);
  const auto recs = extract_objects(img, mask, 1, {16, 16});
  REQUIRE(recs.size() == 2);
  int area_changes = 0;
  for (int trial = 0; trial < 10; ++trial) {
    const PatchRecord& rec = recs[trial % 2];
    const Eigen::VectorXd th = testing::random_theta(rng, m.theta_dim(), 4.0, 6.0);
    const ImageMask out = deform_in_place(img, mask, rec, th, m, {});
    int area0 = 0, area1 = 0;
    double outside_in = 0.0, outside_out = 0.0;
    for (int r = 0; r < 48; ++r) {
      for (int c = 0; c < 64; ++c) {
        area0 += mask.at(r, c) != 0;
        area1 += out.mask.at(r, c) != 0;
        if (ring_index(rec.bbox, r, c) > 5) {
          CHECK(out.image.at(r, c) == img.at(r, c));
          CHECK(out.mask.at(r, c) == mask.at(r, c));
          outside_in += img.at(r, c);
          outside_out += out.image.at(r, c);
        }
      }
    }
    CHECK(outside_in == outside_out);
    area_changes += area0 != area1;
    CHECK(label_set(out.mask) == label_set(mask));
  }
  CHECK(area_changes > 0);
}

TEST_CASE("deform_in_place: field is built at the bbox resolution") {
  // A 1-wide object cannot be deformed; any larger box must be accepted.
  const auto [img, mask] = two_blobs();
  const GenModel m = random_model(4);
  PatchRecord rec = extract_objects(img, mask, 1, {16, 16})[0];
  rec.bbox = {0, 0, 48, 64};
  rec.original_h = 48;
  rec.original_w = 64;
  CHECK_NOTHROW(deform_in_place(img, mask, rec, Eigen::VectorXd::Ones(m.theta_dim()) * 0.1, m, {}));
  rec.bbox = {0, 0, 49, 64};
  CHECK_THROWS_AS(deform_in_place(img, mask, rec, Eigen::VectorXd::Zero(m.theta_dim()), m, {}), BboxOutOfImage);
}

TEST_CASE("copy-paste config validation") {
  CHECK_NOTHROW(CopyPasteConfig{}.validate());
  CopyPasteConfig c;
  c.scale_min = 1.5;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = {};
  c.probability = 1.5;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = {};
  c.max_attempts = 0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
}

TEST_CASE("crop, jitter and paste") {
  const auto [img, mask] = two_blobs();
  const auto recs = extract_objects(img, mask, 1, {16, 16});
  const ObjectCrop crop = crop_object(img, mask, recs[0]);
  CHECK(crop.pixels.width() == recs[0].bbox.width());
  CHECK(crop.mask.height() == recs[0].bbox.height());

  const ObjectCrop same = jitter_object(crop, false, false, 0.0, 1.0);
  CHECK(same.pixels == crop.pixels);
  CHECK(same.mask == crop.mask);

  const ObjectCrop flipped = jitter_object(crop, true, false, 0.0, 1.0);
  REQUIRE(flipped.mask.width() == crop.mask.width());
  for (int r = 0; r < crop.mask.height(); ++r) {
    for (int c = 0; c < crop.mask.width(); ++c) CHECK(flipped.mask.at(r, c) == crop.mask.at(r, crop.mask.width() - 1 - c));
  }
  int area = 0, area2 = 0;
  for (int v : crop.mask.labels()) area += v;
  const ObjectCrop doubled = jitter_object(crop, false, false, 0.0, 2.0);
  for (int v : doubled.mask.labels()) area2 += v;
  CHECK(area2 > 3 * area);
  CHECK(area2 < 5 * area);

  // Pasting a crop back where it came from changes nothing.
  Image im2 = img;
  Mask m2 = mask;
  paste_object(im2, m2, crop, recs[0].bbox.row0, recs[0].bbox.col0, 1);
  CHECK(im2 == img);
  CHECK(m2 == mask);
}

TEST_CASE("copy_paste: uniform background keeps object pixels exactly") {
  Image img(60, 60, 0.1);
  Mask mask(60, 60);
  for (int r = 5; r < 15; ++r) {
    for (int c = 5; c < 13; ++c) {
      if ((r - 10) * (r - 10) + (c - 9) * (c - 9) <= 16) {
        mask.set(r, c, 1);
        img.set(r, c, 0.3 + 0.05 * (r + c) / 5.0);
      }
    }
  }
  const auto rec = extract_objects(img, mask, 1, {16, 4})[0];
  const ObjectCrop crop = crop_object(img, mask, rec);
  CopyPasteConfig cfg;
  cfg.flip_prob = 0.0;
  cfg.rotation_deg = 0.0;
  cfg.scale_min = cfg.scale_max = 1.0;
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const PasteResult p = copy_paste(img, mask, rec, rng, cfg);
    const BBox& b = p.record.bbox;
    CHECK(b.width() == rec.bbox.width());
    for (int r = 0; r < b.height(); ++r) {
      for (int c = 0; c < b.width(); ++c) {
        if (crop.mask.at(r, c)) {
          CHECK(p.out.image.at(b.row0 + r, b.col0 + c) == crop.pixels.at(r, c));
          CHECK(p.out.mask.at(b.row0 + r, b.col0 + c) == 1);
        }
      }
    }
    // The source object is untouched.
    for (int r = rec.bbox.row0; r < rec.bbox.row1; ++r) {
      for (int c = rec.bbox.col0; c < rec.bbox.col1; ++c) CHECK(p.out.image.at(r, c) == img.at(r, c));
    }
  }
}

TEST_CASE("copy_paste: 50 seeded pastes stay inside the image and the target region") {
  const auto [img, mask] = two_blobs();
  const auto recs = extract_objects(img, mask, 1, {16, 16});
  Mask region(64, 48);
  for (int r = 20; r < 48; ++r) {
    for (int c = 0; c < 36; ++c) region.set(r, c, 1);
  }
  CopyPasteConfig cfg;
  cfg.enabled = true;
  Rng rng(6);
  for (int i = 0; i < 50; ++i) {
    const PasteResult p = copy_paste(img, mask, recs[i % 2], rng, cfg, &region);
    const BBox& b = p.record.bbox;
    CHECK(b.row0 >= 0);
    CHECK(b.col0 >= 0);
    CHECK(b.row1 <= 48);
    CHECK(b.col1 <= 64);
    for (int r = b.row0; r < b.row1; ++r) {
      for (int c = b.col0; c < b.col1; ++c) CHECK(region.at(r, c) == 1);
    }
    CHECK(p.scale >= cfg.scale_min);
    CHECK(p.scale <= cfg.scale_max);
    CHECK(std::abs(p.rotation_deg) <= cfg.rotation_deg);
    CHECK(p.record.original_h == b.height());
  }
}

TEST_CASE("copy_paste: no room gives NoValidTarget") {
  const auto [img, mask] = two_blobs();
  const auto recs = extract_objects(img, mask, 1, {16, 16});
  Mask tiny(64, 48);
  tiny.set(0, 0, 1);
  Rng rng(7);
  CHECK_THROWS_AS(copy_paste(img, mask, recs[0], rng, CopyPasteConfig{}, &tiny), NoValidTarget);
  CHECK_THROWS_AS(copy_paste(img, mask, recs[0], rng, CopyPasteConfig{}, &mask), NoValidTarget);
}

TEST_CASE("augment: zero decoder without copy-paste is the identity") {
  const auto [img, mask] = two_blobs();
  const GenModel zero = make_model(Preset::Desk, 16, 4, {}, {});
  AugmentationPlan plan;
  plan.model = &zero;
  std::vector<ojson> log;
  const ImageMask out = augment(img, mask, plan, "x", [&](const ojson& j) { log.push_back(j); });
  CHECK(out.image == img);
  CHECK(out.mask == mask);
  CHECK(log.size() == 2);
  for (const auto& e : log) {
    CHECK(e["event"] == "deform");
    CHECK(e["theta_norm"] == 0.0);
    CHECK(e["stream_seed"] == derive_seed(0, "x"));
  }
  plan.model = nullptr;
  CHECK_THROWS_AS(augment(img, mask, plan, "x"), ValidationError);
}

TEST_CASE("augment: deterministic per (seed, image id)") {
  const auto [img, mask] = two_blobs();
  const GenModel m = random_model(8);
  AugmentationPlan plan;
  plan.model = &m;
  plan.seed = 42;
  plan.copy_paste.enabled = true;
  const ImageMask a = augment(img, mask, plan, "img_a");
  const ImageMask b = augment(img, mask, plan, "img_a");
  CHECK(a.image == b.image);
  CHECK(a.mask == b.mask);
  const ImageMask c = augment(img, mask, plan, "img_b");
  CHECK(!(c.image == a.image));
  plan.seed = 43;
  CHECK(!(augment(img, mask, plan, "img_a").image == a.image));
}

TEST_CASE("augment with copy-paste: component count, audit and locality") {
  const auto [img, mask] = two_blobs();
  const GenModel m = random_model(9);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    AugmentationPlan plan;
    plan.model = &m;
    plan.seed = seed;
    plan.copy_paste.enabled = true;
    plan.copy_paste.probability = 0.7;
    std::vector<ojson> log;
    const ImageMask out = augment(img, mask, plan, "blobs", [&](const ojson& j) { log.push_back(j); });

    int pastes = 0, deforms = 0;
    std::vector<BBox> touched;
    for (const auto& e : log) {
      CHECK(e["image_id"] == "blobs");
      CHECK(e["seed"] == seed);
      if (e["event"] == "paste") ++pastes;
      if (e["event"] == "deform") ++deforms;
      if (e.contains("bbox")) touched.push_back(bbox_from(e["bbox"]));
    }
    CHECK(deforms == 2 + pastes);
    const auto comps = connected_components(out.mask, 1);
    CHECK(comps.size() >= 2);
    CHECK(comps.size() <= 4);
    CHECK(label_set(out.mask) == label_set(mask));

    for (int r = 0; r < 48; ++r) {
      for (int c = 0; c < 64; ++c) {
        bool near = false;
        for (const auto& b : touched) near |= dilate(b, 5, 64, 48).contains(r, c);
        if (!near) {
          CHECK(out.image.at(r, c) == img.at(r, c));
          CHECK(out.mask.at(r, c) == mask.at(r, c));
        }
      }
    }
  }
}

TEST_CASE("augment skips objects below min_area") {
  Image img(30, 30, 0.2);
  Mask mask(30, 30);
  for (int r = 10; r < 13; ++r) {
    for (int c = 10; c < 13; ++c) mask.set(r, c, 1);
  }
  const GenModel m = random_model(10);
  AugmentationPlan plan;
  plan.model = &m;
  std::vector<ojson> log;
  const ImageMask out = augment(img, mask, plan, "small", [&](const ojson& j) { log.push_back(j); });
  CHECK(log.empty());
  CHECK(out.image == img);
  CHECK(out.mask == mask);
}

TEST_CASE("sampled fields from a random model do not fold") {
  const GenModel m = random_model(11, 0.1);
  Rng rng(11);
  for (int i = 0; i < 100; ++i) {
    const Eigen::VectorXd th = sample_theta(m, rng);
    const auto dets = jacobian_determinants(transform_grid(theta_to_field(m.basis, th), m.tess, 30, 30, m.integration));
    for (double d : dets) {
      CHECK(std::isfinite(d));
      CHECK(d > 0.0);
    }
  }
}
