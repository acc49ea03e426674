#include "cpabaug/augmentor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "cpabaug/errors.hpp"
#include "cpabaug/warp.hpp"

namespace cpabaug {

void BlendConfig::validate() const {
  if (rings < 0) throw ValidationError("blend.rings must be non-negative");
  if (!(decay > 0.0 && decay < 1.0)) throw ValidationError("blend.decay must lie in (0, 1)");
}

void CopyPasteConfig::validate() const {
  if (!(probability >= 0.0 && probability <= 1.0)) throw ValidationError("copy_paste.probability must lie in [0, 1]");
  if (!(flip_prob >= 0.0 && flip_prob <= 1.0)) throw ValidationError("copy_paste.flip_prob must lie in [0, 1]");
  if (!(rotation_deg >= 0.0 && rotation_deg <= 180.0))
    throw ValidationError("copy_paste.rotation_deg must lie in [0, 180]");
  if (!(scale_min > 0.0 && scale_min <= scale_max)) throw ValidationError("copy_paste needs 0 < scale_min <= scale_max");
  if (max_attempts < 1) throw ValidationError("copy_paste.max_attempts must be at least 1");
}

int ring_index(const BBox& bbox, int row, int col) {
  const int dr = row < bbox.row0 ? bbox.row0 - row : (row >= bbox.row1 ? row - bbox.row1 + 1 : 0);
  const int dc = col < bbox.col0 ? bbox.col0 - col : (col >= bbox.col1 ? col - bbox.col1 + 1 : 0);
  return std::max(dr, dc);
}

namespace {

void check_bbox(const BBox& b, int w, int h) {
  if (b.row0 < 0 || b.col0 < 0 || b.row1 > h || b.col1 > w || b.row0 >= b.row1 || b.col0 >= b.col1) {
    throw BboxOutOfImage("bbox [" + std::to_string(b.row0) + "," + std::to_string(b.row1) + ")x[" +
                         std::to_string(b.col0) + "," + std::to_string(b.col1) + ") is not inside a " +
                         std::to_string(w) + "x" + std::to_string(h) + " image");
  }
}

}  // namespace

DisplacementField blend_field(const DisplacementField& patch_field, const BBox& bbox, int image_w, int image_h,
                              const BlendConfig& cfg) {
  cfg.validate();
  check_bbox(bbox, image_w, image_h);
  if (patch_field.width != bbox.width() || patch_field.height != bbox.height()) {
    throw ShapeMismatch("patch field is " + std::to_string(patch_field.width) + "x" +
                        std::to_string(patch_field.height) + " but the bbox is " + std::to_string(bbox.width()) +
                        "x" + std::to_string(bbox.height()));
  }
  DisplacementField out = DisplacementField::zeros(image_w, image_h);
  std::vector<int> level(static_cast<std::size_t>(image_w) * image_h, -1);
  for (int r = bbox.row0; r < bbox.row1; ++r) {
    for (int c = bbox.col0; c < bbox.col1; ++c) {
      const std::size_t i = out.index(r, c);
      const std::size_t j = patch_field.index(r - bbox.row0, c - bbox.col0);
      out.dx[i] = patch_field.dx[j];
      out.dy[i] = patch_field.dy[j];
      level[i] = 0;
    }
  }
  for (int k = 1; k <= cfg.rings; ++k) {
    const int r0 = std::max(0, bbox.row0 - k), r1 = std::min(image_h, bbox.row1 + k);
    const int c0 = std::max(0, bbox.col0 - k), c1 = std::min(image_w, bbox.col1 + k);
    for (int r = r0; r < r1; ++r) {
      for (int c = c0; c < c1; ++c) {
        if (ring_index(bbox, r, c) != k) continue;
        double sx = 0.0, sy = 0.0;
        int n = 0;
        for (int dr = -1; dr <= 1; ++dr) {
          for (int dc = -1; dc <= 1; ++dc) {
            const int rr = r + dr, cc = c + dc;
            if ((dr == 0 && dc == 0) || rr < 0 || cc < 0 || rr >= image_h || cc >= image_w) continue;
            const std::size_t j = out.index(rr, cc);
            if (level[j] < 0 || level[j] >= k) continue;
            sx += out.dx[j];
            sy += out.dy[j];
            ++n;
          }
        }
        const std::size_t i = out.index(r, c);
        if (n > 0) {
          out.dx[i] = cfg.decay * sx / n;
          out.dy[i] = cfg.decay * sy / n;
        }
        level[i] = k;
      }
    }
  }
  return out;
}

ImageMask deform_in_place(const Image& image, const Mask& mask, const PatchRecord& record, const Eigen::VectorXd& theta,
                          const GenModel& model, const BlendConfig& cfg) {
  if (image.width() != mask.width() || image.height() != mask.height())
    throw ShapeMismatch("image and mask sizes differ");
  check_bbox(record.bbox, image.width(), image.height());
  if (theta.size() != model.theta_dim())
    throw DimensionMismatch("theta has " + std::to_string(theta.size()) + " entries, model expects " +
                            std::to_string(model.theta_dim()));
  const int w = record.bbox.width(), h = record.bbox.height();
  const CpaField field = theta_to_field(model.basis, theta);
  const DisplacementField local = transform_grid(field, model.tess, w, h, model.integration);
  const DisplacementField full = blend_field(local, record.bbox, image.width(), image.height(), cfg);
  return {warp_image(image, full), warp_mask(mask, full)};
}

ObjectCrop crop_object(const Image& image, const Mask& mask, const PatchRecord& record) {
  check_bbox(record.bbox, image.width(), image.height());
  const BBox& b = record.bbox;
  ObjectCrop crop{Image(b.width(), b.height()), Mask(b.width(), b.height())};
  const bool have_mask = record.object_mask.width() == b.width() && record.object_mask.height() == b.height();
  for (int r = 0; r < b.height(); ++r) {
    for (int c = 0; c < b.width(); ++c) {
      crop.pixels.set(r, c, image.at(b.row0 + r, b.col0 + c));
      const bool inside =
          have_mask ? record.object_mask.at(r, c) != 0 : mask.at(b.row0 + r, b.col0 + c) == record.label;
      crop.mask.set(r, c, inside ? 1 : 0);
    }
  }
  return crop;
}

ObjectCrop jitter_object(const ObjectCrop& crop, bool flip_h, bool flip_v, double rotation_deg, double scale) {
  const int w = crop.pixels.width(), h = crop.pixels.height();
  if (!flip_h && !flip_v && rotation_deg == 0.0 && scale == 1.0) return crop;
  // Output pixel q (relative to the output center) reads the source at
  // center + F * R^-1 * q / scale, where F flips axes.
  const double a = rotation_deg * std::numbers::pi / 180.0;
  const double ca = std::cos(a), sa = std::sin(a);
  const double hw = 0.5 * w * scale, hh = 0.5 * h * scale;
  const double ext_x = std::abs(ca) * hw + std::abs(sa) * hh;
  const double ext_y = std::abs(sa) * hw + std::abs(ca) * hh;
  const int ow = std::max(1, static_cast<int>(std::ceil(2.0 * ext_x - 1e-9)));
  const int oh = std::max(1, static_cast<int>(std::ceil(2.0 * ext_y - 1e-9)));
  Image pix(ow, oh);
  Mask msk(ow, oh);
  const double scx = 0.5 * w, scy = 0.5 * h, ocx = 0.5 * ow, ocy = 0.5 * oh;
  int rmin = oh, rmax = -1, cmin = ow, cmax = -1;
  for (int r = 0; r < oh; ++r) {
    for (int c = 0; c < ow; ++c) {
      const double qx = c + 0.5 - ocx, qy = r + 0.5 - ocy;
      double sx = (ca * qx + sa * qy) / scale;
      double sy = (-sa * qx + ca * qy) / scale;
      if (flip_h) sx = -sx;
      if (flip_v) sy = -sy;
      const double px = scx + sx - 0.5, py = scy + sy - 0.5;  // pixel-center coordinates
      const int nc = static_cast<int>(std::floor(px + 0.5)), nr = static_cast<int>(std::floor(py + 0.5));
      if (nc < 0 || nr < 0 || nc >= w || nr >= h || crop.mask.at(nr, nc) == 0) continue;
      msk.set(r, c, 1);
      pix.set(r, c, bilinear_sample(crop.pixels, px, py));
      rmin = std::min(rmin, r);
      rmax = std::max(rmax, r);
      cmin = std::min(cmin, c);
      cmax = std::max(cmax, c);
    }
  }
  if (rmax < 0) return crop;
  ObjectCrop out{Image(cmax - cmin + 1, rmax - rmin + 1), Mask(cmax - cmin + 1, rmax - rmin + 1)};
  for (int r = rmin; r <= rmax; ++r) {
    for (int c = cmin; c <= cmax; ++c) {
      out.pixels.set(r - rmin, c - cmin, pix.at(r, c));
      out.mask.set(r - rmin, c - cmin, msk.at(r, c));
    }
  }
  return out;
}

void paste_object(Image& image, Mask& mask, const ObjectCrop& crop, int row0, int col0, int label) {
  check_bbox({row0, col0, row0 + crop.mask.height(), col0 + crop.mask.width()}, image.width(), image.height());
  for (int r = 0; r < crop.mask.height(); ++r) {
    for (int c = 0; c < crop.mask.width(); ++c) {
      if (crop.mask.at(r, c) == 0) continue;
      image.set(row0 + r, col0 + c, crop.pixels.at(r, c));
      mask.set(row0 + r, col0 + c, label);
    }
  }
}

namespace {

bool placement_ok(const Mask& mask, const ObjectCrop& crop, int row0, int col0, const CopyPasteConfig& cfg,
                  const Mask* region) {
  const int W = mask.width(), H = mask.height();
  for (int r = 0; r < crop.mask.height(); ++r) {
    for (int c = 0; c < crop.mask.width(); ++c) {
      const int R = row0 + r, C = col0 + c;
      if (region && region->at(R, C) == 0) return false;
      if (crop.mask.at(r, c) == 0 || !cfg.avoid_overlap) continue;
      for (int dr = -1; dr <= 1; ++dr) {
        for (int dc = -1; dc <= 1; ++dc) {
          const int rr = R + dr, cc = C + dc;
          if (rr >= 0 && cc >= 0 && rr < H && cc < W && mask.at(rr, cc) != 0) return false;
        }
      }
    }
  }
  return true;
}

}  // namespace

PasteResult copy_paste(const Image& image, const Mask& mask, const PatchRecord& record, Rng& rng,
                       const CopyPasteConfig& cfg, const Mask* target_region) {
  cfg.validate();
  if (image.width() != mask.width() || image.height() != mask.height())
    throw ShapeMismatch("image and mask sizes differ");
  if (target_region && (target_region->width() != image.width() || target_region->height() != image.height()))
    throw ShapeMismatch("target region and image sizes differ");
  PasteResult res;
  res.flip_h = rng.uniform() < cfg.flip_prob;
  res.flip_v = rng.uniform() < cfg.flip_prob;
  res.rotation_deg = cfg.rotation_deg > 0.0 ? rng.uniform(-cfg.rotation_deg, cfg.rotation_deg) : 0.0;
  res.scale = cfg.scale_max > cfg.scale_min ? rng.uniform(cfg.scale_min, cfg.scale_max) : cfg.scale_min;
  const ObjectCrop crop =
      jitter_object(crop_object(image, mask, record), res.flip_h, res.flip_v, res.rotation_deg, res.scale);
  const int h = crop.mask.height(), w = crop.mask.width();
  if (h <= image.height() && w <= image.width()) {
    for (int attempt = 0; attempt < cfg.max_attempts; ++attempt) {
      const int row0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(image.height() - h + 1)));
      const int col0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(image.width() - w + 1)));
      if (!placement_ok(mask, crop, row0, col0, cfg, target_region)) continue;
      res.out = {image, mask};
      paste_object(res.out.image, res.out.mask, crop, row0, col0, record.label);
      res.record.bbox = {row0, col0, row0 + h, col0 + w};
      res.record.source_id = record.source_id;
      res.record.label = record.label;
      res.record.original_h = h;
      res.record.original_w = w;
      res.record.object_mask = crop.mask;
      return res;
    }
  }
  throw NoValidTarget("no valid paste location after " + std::to_string(cfg.max_attempts) + " attempts");
}

namespace {

nlohmann::ordered_json bbox_json(const BBox& b) { return {b.row0, b.col0, b.row1, b.col1}; }

}  // namespace

ImageMask augment(const Image& image, const Mask& mask, const AugmentationPlan& plan, const std::string& image_id,
                  const AuditSink& audit) {
  if (!plan.model) throw ValidationError("augmentation plan has no model");
  plan.blend.validate();
  plan.copy_paste.validate();
  if (image.width() != mask.width() || image.height() != mask.height())
    throw ShapeMismatch("image and mask sizes differ");
  const std::uint64_t stream = derive_seed(plan.seed, image_id);
  Rng rng(stream);
  ExtractOptions eo;
  eo.patch_size = plan.model->patch_size;
  eo.min_area = plan.min_area;
  std::vector<PatchRecord> objects = extract_objects(image, mask, plan.label, eo, image_id);
  const std::size_t n_original = objects.size();

  ImageMask cur{image, mask};
  std::vector<int> parent(n_original, -1);
  if (plan.copy_paste.enabled) {
    for (std::size_t i = 0; i < n_original; ++i) {
      if (rng.uniform() >= plan.copy_paste.probability) continue;
      nlohmann::ordered_json ev;
      ev["image_id"] = image_id;
      ev["seed"] = plan.seed;
      ev["stream_seed"] = stream;
      ev["event"] = "paste";
      ev["source_object"] = i;
      try {
        PasteResult p = copy_paste(cur.image, cur.mask, objects[i], rng, plan.copy_paste, plan.target_region);
        cur = std::move(p.out);
        ev["object"] = objects.size();
        ev["bbox"] = bbox_json(p.record.bbox);
        ev["flip_h"] = p.flip_h;
        ev["flip_v"] = p.flip_v;
        ev["rotation_deg"] = p.rotation_deg;
        ev["scale"] = p.scale;
        objects.push_back(std::move(p.record));
        parent.push_back(static_cast<int>(i));
      } catch (const NoValidTarget& e) {
        ev["event"] = "paste_skipped";
        ev["reason"] = e.what();
      }
      if (audit) audit(ev);
    }
  }

  if (plan.diffeo) {
    for (std::size_t i = 0; i < objects.size(); ++i) {
      const PatchRecord& rec = objects[i];
      nlohmann::ordered_json ev;
      ev["image_id"] = image_id;
      ev["seed"] = plan.seed;
      ev["stream_seed"] = stream;
      ev["event"] = "deform";
      ev["object"] = i;
      ev["kind"] = i < n_original ? "original" : "pasted";
      if (i >= n_original) ev["source_object"] = parent[i];
      ev["bbox"] = bbox_json(rec.bbox);
      if (rec.bbox.width() < 2 || rec.bbox.height() < 2) {
        ev["event"] = "deform_skipped";
        ev["reason"] = "bbox smaller than 2 pixels";
        if (audit) audit(ev);
        continue;
      }
      const Eigen::VectorXd theta = sample_theta(*plan.model, rng);
      cur = deform_in_place(cur.image, cur.mask, rec, theta, *plan.model, plan.blend);
      ev["theta_norm"] = theta.norm();
      if (audit) audit(ev);
    }
  }
  return cur;
}

}  // namespace cpabaug
