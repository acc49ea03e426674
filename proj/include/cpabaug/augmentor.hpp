#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "cpabaug/cpab.hpp"
#include "cpabaug/genmodel.hpp"
#include "cpabaug/image.hpp"
#include "cpabaug/patchkit.hpp"
#include "cpabaug/rng.hpp"

namespace cpabaug {

struct BlendConfig {
  int rings = 5;       // R
  double decay = 0.5;  // gamma, in (0, 1)

  void validate() const;
};

/// Embeds a bbox-sized displacement field into a full-image field.
///
/// Inside the bbox the patch field is copied. Ring k = 1..R (pixels at
/// Chebyshev distance k from the bbox) takes decay times the mean of its
/// 8-neighbours in rings < k; everything farther out is zero.
DisplacementField blend_field(const DisplacementField& patch_field, const BBox& bbox, int image_w, int image_h,
                              const BlendConfig& cfg);

/// Chebyshev distance from (row, col) to the bbox; 0 inside.
int ring_index(const BBox& bbox, int row, int col);

struct ImageMask {
  Image image;
  Mask mask;
};

/// Deforms one object in place: the CPA flow of theta is evaluated on the
/// bbox at its original resolution, blended into a full-image field, and
/// image and mask are warped once with it.
ImageMask deform_in_place(const Image& image, const Mask& mask, const PatchRecord& record, const Eigen::VectorXd& theta,
                          const GenModel& model, const BlendConfig& cfg);

struct CopyPasteConfig {
  bool enabled = false;
  double probability = 1.0;  // chance that an object gets a pasted copy
  double flip_prob = 0.5;    // per axis
  double rotation_deg = 15.0;
  double scale_min = 0.8;
  double scale_max = 1.2;
  int max_attempts = 100;
  bool avoid_overlap = true;  // keep a 1-pixel gap to existing labels

  void validate() const;
};

/// An object cut out of an image: bbox-sized intensities and a 0/1 mask.
struct ObjectCrop {
  Image pixels;
  Mask mask;
};

ObjectCrop crop_object(const Image& image, const Mask& mask, const PatchRecord& record);

/// Flip / rotate / scale jitter of a crop, trimmed to the tight box of
/// the resulting mask. Identity parameters return the crop unchanged.
ObjectCrop jitter_object(const ObjectCrop& crop, bool flip_h, bool flip_v, double rotation_deg, double scale);

/// Writes the crop's object pixels at (row0, col0) and labels them.
void paste_object(Image& image, Mask& mask, const ObjectCrop& crop, int row0, int col0, int label);

struct PasteResult {
  ImageMask out;
  PatchRecord record;  // the pasted instance, in output coordinates
  bool flip_h = false;
  bool flip_v = false;
  double rotation_deg = 0.0;
  double scale = 1.0;
};

/// Jitters the object and pastes it at a rejection-sampled location whose
/// box lies inside the image and inside
/// `target_region` (if given). Throws NoValidTarget after max_attempts.
PasteResult copy_paste(const Image& image, const Mask& mask, const PatchRecord& record, Rng& rng,
                       const CopyPasteConfig& cfg, const Mask* target_region = nullptr);

struct AugmentationPlan {
  const GenModel* model = nullptr;
  BlendConfig blend;
  bool diffeo = true;
  CopyPasteConfig copy_paste;
  std::uint64_t seed = 0;
  int label = 1;
  int min_area = 16;
  const Mask* target_region = nullptr;
};

using AuditSink = std::function<void(const nlohmann::ordered_json&)>;

/// Extracts the objects of one image, optionally pastes copies, then
/// deforms every instance (original and pasted) with a freshly sampled
/// theta. The random stream is derived from (plan.seed, image_id).
ImageMask augment(const Image& image, const Mask& mask, const AugmentationPlan& plan, const std::string& image_id,
                  const AuditSink& audit = {});

}  // namespace cpabaug
