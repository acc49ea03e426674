#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <boost/numeric/odeint.hpp>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "cpabaug/cpab.hpp"
#include "cpabaug/image.hpp"
#include "cpabaug/rng.hpp"
#include "cpabaug/tessellation.hpp"

namespace testing {

namespace fs = std::filesystem;

// Scratch directory removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    cpabaug::Rng rng(std::random_device{}());
    path_ = fs::temp_directory_path() / ("cpabaug_" + tag + "_" + std::to_string(rng.next_u64() % 1000000007ULL));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& s) const { return path_ / s; }

 private:
  fs::path path_;
};

inline std::vector<char> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::string read_text(const fs::path& p) {
  const auto b = read_bytes(p);
  return {b.begin(), b.end()};
}

// Every regular file under dir, relative path -> bytes, in sorted order.
inline std::vector<std::pair<std::string, std::vector<char>>> snapshot(const fs::path& dir) {
  std::vector<std::pair<std::string, std::vector<char>>> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) out.emplace_back(fs::relative(e.path(), dir).generic_string(), read_bytes(e.path()));
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline cpabaug::Image random_image(int w, int h, cpabaug::Rng& rng) {
  cpabaug::Image img(w, h);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) img.set(r, c, rng.uniform());
  }
  return img;
}

inline Eigen::VectorXd random_direction(cpabaug::Rng& rng, int dim) {
  Eigen::VectorXd v(dim);
  for (int i = 0; i < dim; ++i) v(i) = rng.normal();
  return v / v.norm();
}

// Random theta with norm uniform in [lo, hi].
inline Eigen::VectorXd random_theta(cpabaug::Rng& rng, int dim, double lo, double hi) {
  return random_direction(rng, dim) * rng.uniform(lo, hi);
}

// Point-in-triangle scan over every triangle; first hit wins.
inline int brute_force_locate(const cpabaug::Tessellation& tess, const Eigen::Vector2d& p) {
  const auto& V = tess.vertices();
  for (int t = 0; t < tess.cell_count(); ++t) {
    const auto& tri = tess.triangles()[t];
    const Eigen::Vector2d a = V[tri[0]], b = V[tri[1]], c = V[tri[2]];
    auto cross = [](const Eigen::Vector2d& u, const Eigen::Vector2d& v) { return u.x() * v.y() - u.y() * v.x(); };
    const double area = cross(b - a, c - a);
    const double l0 = cross(b - p, c - p) / area;
    const double l1 = cross(c - p, a - p) / area;
    const double l2 = 1.0 - l0 - l1;
    if (l0 >= -1e-12 && l1 >= -1e-12 && l2 >= -1e-12) return t;
  }
  return -1;
}

// Velocity using the brute-force triangle scan instead of locate().
inline Eigen::Vector2d brute_velocity(const cpabaug::CpaField& f, const cpabaug::Tessellation& tess,
                                      Eigen::Vector2d p) {
  p = p.cwiseMax(0.0).cwiseMin(1.0);
  return f.affine[brute_force_locate(tess, p)] * Eigen::Vector3d(p.x(), p.y(), 1.0);
}

// Adaptive Dormand-Prince flow with brute-force triangle lookup.
inline Eigen::Vector2d ode_flow(const cpabaug::CpaField& f, const cpabaug::Tessellation& tess, const Eigen::Vector2d& p0,
                                double t_final) {
  namespace odeint = boost::numeric::odeint;
  using State = std::array<double, 2>;
  State x{p0.x(), p0.y()};
  auto rhs = [&](const State& s, State& dx, double) {
    const Eigen::Vector2d v = brute_velocity(f, tess, {s[0], s[1]});
    dx = {v.x(), v.y()};
  };
  odeint::integrate_adaptive(odeint::make_controlled<odeint::runge_kutta_dopri5<State>>(1e-12, 1e-12), rhs, x, 0.0,
                             t_final, 1e-3);
  return {x[0], x[1]};
}

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-7});
}

inline double percentile95(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  return v[static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(v.size()))) - 1];
}

}  // namespace testing
