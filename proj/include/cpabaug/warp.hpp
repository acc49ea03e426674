#pragma once

#include "cpabaug/cpab.hpp"
#include "cpabaug/image.hpp"

namespace cpabaug {

/// Bilinear interpolation at (x, y) = (column, row) in pixel-center
/// coordinates. Coordinates are clamped to the image (border replication).
double bilinear_sample(const Image& img, double x, double y);

struct BilinearGrad {
  double value;
  double d_dx;  // zero where the x coordinate was clamped
  double d_dy;
};

/// Value and coordinate derivatives of bilinear_sample. At integer
/// coordinates the derivative of the cell to the right/below is used.
BilinearGrad bilinear_sample_grad(const Image& img, double x, double y);

/// Backward warp: out(p) = img(p + u(p)). The field says, for every output
/// pixel, where to read in the input.
Image warp_image(const Image& img, const DisplacementField& u);

/// Nearest-neighbour backward warp for label maps.
Mask warp_mask(const Mask& mask, const DisplacementField& u);

/// Bilinear resize with pixel-center alignment.
Image resize(const Image& img, int new_w, int new_h);

/// Nearest-neighbour resize with pixel-center alignment.
Mask resize_nearest(const Mask& mask, int new_w, int new_h);

}  // namespace cpabaug
