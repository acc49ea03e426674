#include "cpabaug/warp.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cpabaug/errors.hpp"

namespace cpabaug {

namespace {

void check_shape(int w, int h, const DisplacementField& u) {
  if (u.width != w || u.height != h) {
    throw ShapeMismatch("field is " + std::to_string(u.width) + "x" + std::to_string(u.height) + ", image is " +
                        std::to_string(w) + "x" + std::to_string(h));
  }
}

int nearest_index(double x, int n) {
  return std::clamp(static_cast<int>(std::floor(x + 0.5)), 0, n - 1);
}

}  // namespace

BilinearGrad bilinear_sample_grad(const Image& img, double x, double y) {
  const int w = img.width(), h = img.height();
  const bool x_in = x >= 0.0 && x <= w - 1;
  const bool y_in = y >= 0.0 && y <= h - 1;
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  const int x0 = std::min(static_cast<int>(std::floor(x)), w - 1);
  const int y0 = std::min(static_cast<int>(std::floor(y)), h - 1);
  const int x1 = std::min(x0 + 1, w - 1);
  const int y1 = std::min(y0 + 1, h - 1);
  const double fx = x - x0, fy = y - y0;

  const double a = img.at(y0, x0), b = img.at(y0, x1);
  const double c = img.at(y1, x0), d = img.at(y1, x1);
  // std::lerp is exact at the ends and for equal values, so constant
  // regions are fixed points of any warp.
  const double top = std::lerp(a, b, fx);
  const double bottom = std::lerp(c, d, fx);

  BilinearGrad g;
  g.value = std::lerp(top, bottom, fy);
  g.d_dx = x_in ? (1.0 - fy) * (b - a) + fy * (d - c) : 0.0;
  g.d_dy = y_in ? bottom - top : 0.0;
  return g;
}

double bilinear_sample(const Image& img, double x, double y) { return bilinear_sample_grad(img, x, y).value; }

Image warp_image(const Image& img, const DisplacementField& u) {
  check_shape(img.width(), img.height(), u);
  Image out(img.width(), img.height());
  for (int r = 0; r < img.height(); ++r) {
    for (int c = 0; c < img.width(); ++c) {
      const std::size_t i = u.index(r, c);
      out.set(r, c, bilinear_sample(img, c + u.dx[i], r + u.dy[i]));
    }
  }
  return out;
}

Mask warp_mask(const Mask& mask, const DisplacementField& u) {
  check_shape(mask.width(), mask.height(), u);
  Mask out(mask.width(), mask.height());
  for (int r = 0; r < mask.height(); ++r) {
    for (int c = 0; c < mask.width(); ++c) {
      const std::size_t i = u.index(r, c);
      out.set(r, c, mask.at(nearest_index(r + u.dy[i], mask.height()), nearest_index(c + u.dx[i], mask.width())));
    }
  }
  return out;
}

Image resize(const Image& img, int new_w, int new_h) {
  if (new_w < 1 || new_h < 1) throw ValidationError("resize target must be at least 1x1");
  if (new_w == img.width() && new_h == img.height()) return img;
  const double sx = static_cast<double>(img.width()) / new_w;
  const double sy = static_cast<double>(img.height()) / new_h;
  Image out(new_w, new_h);
  for (int r = 0; r < new_h; ++r) {
    for (int c = 0; c < new_w; ++c) out.set(r, c, bilinear_sample(img, (c + 0.5) * sx - 0.5, (r + 0.5) * sy - 0.5));
  }
  return out;
}

Mask resize_nearest(const Mask& mask, int new_w, int new_h) {
  if (new_w < 1 || new_h < 1) throw ValidationError("resize target must be at least 1x1");
  const double sx = static_cast<double>(mask.width()) / new_w;
  const double sy = static_cast<double>(mask.height()) / new_h;
  Mask out(new_w, new_h);
  for (int r = 0; r < new_h; ++r) {
    const int sr = std::min(static_cast<int>(std::floor((r + 0.5) * sy)), mask.height() - 1);
    for (int c = 0; c < new_w; ++c) {
      const int sc = std::min(static_cast<int>(std::floor((c + 0.5) * sx)), mask.width() - 1);
      out.set(r, c, mask.at(sr, sc));
    }
  }
  return out;
}

}  // namespace cpabaug
