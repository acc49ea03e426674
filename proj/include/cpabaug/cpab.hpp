#pragma once

#include <Eigen/Dense>
#include <span>
#include <vector>

#include "cpabaug/tessellation.hpp"

namespace cpabaug {

struct IntegrationConfig {
  int n_steps = 10;
  double t_final = 1.0;

  void validate() const;
};

using Affine2x3 = Eigen::Matrix<double, 2, 3>;

/// Per-triangle affine velocity: v(p) = affine[c] * [p.x, p.y, 1]^T.
struct CpaField {
  std::vector<Affine2x3> affine;
};

/// Stacked affine parameters B * theta, one 2x3 block per triangle.
CpaField theta_to_field(const CpaBasis& basis, const Eigen::VectorXd& theta);

/// Velocity of triangle `tri`'s affine map at p (no point location).
inline Eigen::Vector2d velocity_in(const CpaField& field, int tri, const Eigen::Vector2d& p) {
  return field.affine[tri] * Eigen::Vector3d(p.x(), p.y(), 1.0);
}

Eigen::Vector2d velocity_at(const CpaField& field, const Tessellation& tess, Eigen::Vector2d p);

/// Integrates the CPA flow with per-triangle exponentials.
///
/// [0, t_final] is split into n_steps equal steps. The exponentials of
/// dt * [A_c; 0 0 0] are computed once per field; each step then locates the
/// current triangle and applies its exponential to [p; 1], so triangle
/// crossings inside a step are not resolved. Points are clamped into the
/// unit square after every step.
class FlowSolver {
 public:
  FlowSolver(const Tessellation& tess, const CpaField& field, IntegrationConfig cfg);

  Eigen::Vector2d integrate(Eigen::Vector2d p) const;

  const Tessellation& tessellation() const { return *tess_; }
  const IntegrationConfig& config() const { return cfg_; }
  const std::vector<Eigen::Matrix3d>& step_maps() const { return steps_; }

 private:
  const Tessellation* tess_;
  IntegrationConfig cfg_;
  std::vector<Eigen::Matrix3d> steps_;
};

/// One-shot flow of a single point; prefer FlowSolver for many points.
Eigen::Vector2d integrate_point(const CpaField& field, const Tessellation& tess, const Eigen::Vector2d& p,
                                const IntegrationConfig& cfg);

/// Per-pixel displacement in pixel units, T(x) = x + u(x). Row-major.
struct DisplacementField {
  int width = 0;
  int height = 0;
  std::vector<double> dx;
  std::vector<double> dy;

  static DisplacementField zeros(int width, int height);
  std::size_t index(int row, int col) const { return static_cast<std::size_t>(row) * width + col; }
  double max_magnitude() const;
};

/// Normalized coordinate of a pixel center.
inline Eigen::Vector2d pixel_center(int row, int col, int width, int height) {
  return {(col + 0.5) / width, (row + 0.5) / height};
}

DisplacementField transform_grid(const CpaField& field, const Tessellation& tess, int width, int height,
                                 const IntegrationConfig& cfg);

/// d T(x) / d theta for every pixel, in pixel units.
struct TransformJacobian {
  int width = 0;
  int height = 0;
  int dim = 0;
  std::vector<double> values;  // ((row * width + col) * 2 + comp) * dim + k

  double at(int row, int col, int comp, int k) const {
    return values[((static_cast<std::size_t>(row) * width + col) * 2 + comp) * dim + k];
  }
};

/// Forward sensitivity propagation: along each exponential step the
/// Jacobian is advanced with the chain rule, using Frechet derivatives of
/// the step exponentials. The triangle index is held fixed per step.
TransformJacobian grad_transform(const CpaBasis& basis, const Eigen::VectorXd& theta, const Tessellation& tess,
                                 int width, int height, const IntegrationConfig& cfg);

/// Grid flow that keeps its trajectories so a loss gradient with respect to
/// the displacement can be pulled back to theta (reverse mode). Produces the
/// same displacement as transform_grid.
class GridFlow {
 public:
  GridFlow(const CpaBasis& basis, const Tessellation& tess, const Eigen::VectorXd& theta, int width, int height,
           IntegrationConfig cfg);

  const DisplacementField& displacement() const { return field_; }

  /// Vector-Jacobian product: grad_dx/grad_dy are dL/du in pixel units.
  Eigen::VectorXd backward(std::span<const double> grad_dx, std::span<const double> grad_dy) const;

 private:
  const CpaBasis* basis_;
  IntegrationConfig cfg_;
  std::vector<Eigen::Matrix3d> generators_;  // dt * [A_c; 0]
  std::vector<Eigen::Matrix3d> steps_;
  // Per pixel and step: start point, triangle and clamp flags.
  std::vector<Eigen::Vector2d> points_;
  std::vector<int> cells_;
  std::vector<unsigned char> clamped_;
  DisplacementField field_;
};

/// Determinant of the pixel-to-pixel Jacobian of T(p) = p + u(p), by
/// central differences (one-sided on the border). Row-major.
std::vector<double> jacobian_determinants(const DisplacementField& u);

}  // namespace cpabaug
