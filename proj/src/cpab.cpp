#include "cpabaug/cpab.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cpabaug/errors.hpp"
#include "cpabaug/expm.hpp"

namespace cpabaug {

namespace {

void check_dims(const CpaBasis& basis, const Eigen::VectorXd& theta) {
  if (theta.size() != basis.B.cols()) {
    throw DimensionMismatch("theta has " + std::to_string(theta.size()) + " entries, basis has d=" +
                            std::to_string(basis.B.cols()));
  }
  if (!theta.allFinite()) throw NonFiniteResult("theta has non-finite entries");
}

void check_grid(int width, int height) {
  if (width < 1 || height < 1) {
    throw ValidationError("grid must be at least 1x1 (got " + std::to_string(width) + "x" +
                          std::to_string(height) + ")");
  }
}

Eigen::Matrix3d homogeneous(const Affine2x3& a, double scale) {
  Eigen::Matrix3d m = Eigen::Matrix3d::Zero();
  m.topRows<2>() = scale * a;
  return m;
}

// Advances p by one step map and clamps; returns clamp flags (bit 0: x, bit 1: y).
unsigned char step_point(const Eigen::Matrix3d& step, Eigen::Vector2d& p) {
  const Eigen::Vector2d q = step.topLeftCorner<2, 2>() * p + step.topRightCorner<2, 1>();
  unsigned char flags = 0;
  if (q.x() < 0.0 || q.x() > 1.0) flags |= 1;
  if (q.y() < 0.0 || q.y() > 1.0) flags |= 2;
  p = q.cwiseMax(0.0).cwiseMin(1.0);
  return flags;
}

}  // namespace

void IntegrationConfig::validate() const {
  if (n_steps < 1) throw ValidationError("integration: n_steps must be >= 1");
  if (!std::isfinite(t_final)) throw ValidationError("integration: t_final must be finite");
}

CpaField theta_to_field(const CpaBasis& basis, const Eigen::VectorXd& theta) {
  check_dims(basis, theta);
  const Eigen::VectorXd stacked = basis.B * theta;
  CpaField field;
  const auto cells = static_cast<std::size_t>(stacked.size() / 6);
  field.affine.resize(cells);
  for (std::size_t c = 0; c < cells; ++c) {
    for (int r = 0; r < 2; ++r) {
      for (int k = 0; k < 3; ++k) field.affine[c](r, k) = stacked(static_cast<Eigen::Index>(6 * c + 3 * r + k));
    }
  }
  return field;
}

Eigen::Vector2d velocity_at(const CpaField& field, const Tessellation& tess, Eigen::Vector2d p) {
  p = p.cwiseMax(0.0).cwiseMin(1.0);
  return velocity_in(field, tess.locate(p), p);
}

FlowSolver::FlowSolver(const Tessellation& tess, const CpaField& field, IntegrationConfig cfg)
    : tess_(&tess), cfg_(cfg) {
  cfg_.validate();
  if (static_cast<int>(field.affine.size()) != tess.cell_count()) {
    throw DimensionMismatch("field has " + std::to_string(field.affine.size()) + " triangles, tessellation has " +
                            std::to_string(tess.cell_count()));
  }
  const double dt = cfg_.t_final / cfg_.n_steps;
  steps_.reserve(field.affine.size());
  for (const auto& a : field.affine) steps_.push_back(matrix_exponential(homogeneous(a, dt)));
}

Eigen::Vector2d FlowSolver::integrate(Eigen::Vector2d p) const {
  p = p.cwiseMax(0.0).cwiseMin(1.0);
  for (int s = 0; s < cfg_.n_steps; ++s) step_point(steps_[tess_->locate(p)], p);
  if (!p.allFinite()) throw NonFiniteResult("flow integration produced a non-finite point");
  return p;
}

Eigen::Vector2d integrate_point(const CpaField& field, const Tessellation& tess, const Eigen::Vector2d& p,
                                const IntegrationConfig& cfg) {
  return FlowSolver(tess, field, cfg).integrate(p);
}

DisplacementField DisplacementField::zeros(int width, int height) {
  DisplacementField u;
  u.width = width;
  u.height = height;
  u.dx.assign(static_cast<std::size_t>(width) * height, 0.0);
  u.dy.assign(static_cast<std::size_t>(width) * height, 0.0);
  return u;
}

double DisplacementField::max_magnitude() const {
  double m = 0.0;
  for (std::size_t i = 0; i < dx.size(); ++i) m = std::max(m, std::hypot(dx[i], dy[i]));
  return m;
}

DisplacementField transform_grid(const CpaField& field, const Tessellation& tess, int width, int height,
                                 const IntegrationConfig& cfg) {
  check_grid(width, height);
  const FlowSolver solver(tess, field, cfg);
  DisplacementField u = DisplacementField::zeros(width, height);
  for (int row = 0; row < height; ++row) {
    for (int col = 0; col < width; ++col) {
      const Eigen::Vector2d p = pixel_center(row, col, width, height);
      const Eigen::Vector2d q = solver.integrate(p);
      u.dx[u.index(row, col)] = (q.x() - p.x()) * width;
      u.dy[u.index(row, col)] = (q.y() - p.y()) * height;
    }
  }
  return u;
}

TransformJacobian grad_transform(const CpaBasis& basis, const Eigen::VectorXd& theta, const Tessellation& tess,
                                 int width, int height, const IntegrationConfig& cfg) {
  check_grid(width, height);
  cfg.validate();
  const CpaField field = theta_to_field(basis, theta);
  const int d = basis.dim();
  const int cells = tess.cell_count();
  const double dt = cfg.t_final / cfg.n_steps;

  // Step maps and, per triangle, the derivative of the step map's top rows
  // with respect to each theta component: sens[c * d + j] (2x3).
  std::vector<Eigen::Matrix3d> steps(cells);
  std::vector<Affine2x3> sens(static_cast<std::size_t>(cells) * d, Affine2x3::Zero());
  for (int c = 0; c < cells; ++c) {
    const Eigen::Matrix3d X = homogeneous(field.affine[c], dt);
    for (int e = 0; e < 6; ++e) {
      Eigen::Matrix3d dir = Eigen::Matrix3d::Zero();
      dir(e / 3, e % 3) = dt;
      const auto [E, L] = expm_frechet<3>(X, dir);
      if (e == 0) steps[c] = E;
      const Affine2x3 top = L.topRows<2>();
      for (int j = 0; j < d; ++j) sens[static_cast<std::size_t>(c) * d + j] += basis.B(6 * c + e, j) * top;
    }
  }

  TransformJacobian jac;
  jac.width = width;
  jac.height = height;
  jac.dim = d;
  jac.values.assign(static_cast<std::size_t>(width) * height * 2 * d, 0.0);

  Eigen::MatrixXd J(2, d);
  for (int row = 0; row < height; ++row) {
    for (int col = 0; col < width; ++col) {
      Eigen::Vector2d p = pixel_center(row, col, width, height);
      J.setZero();
      for (int s = 0; s < cfg.n_steps; ++s) {
        const int c = tess.locate(p);
        const Eigen::Vector3d ph(p.x(), p.y(), 1.0);
        Eigen::MatrixXd next = steps[c].topLeftCorner<2, 2>() * J;
        for (int j = 0; j < d; ++j) next.col(j) += sens[static_cast<std::size_t>(c) * d + j] * ph;
        const unsigned char flags = step_point(steps[c], p);
        if (flags & 1) next.row(0).setZero();
        if (flags & 2) next.row(1).setZero();
        J = next;
      }
      if (!J.allFinite()) throw NonFiniteResult("transform Jacobian is non-finite");
      double* out = &jac.values[(static_cast<std::size_t>(row) * width + col) * 2 * d];
      for (int j = 0; j < d; ++j) {
        out[j] = J(0, j) * width;
        out[d + j] = J(1, j) * height;
      }
    }
  }
  return jac;
}

GridFlow::GridFlow(const CpaBasis& basis, const Tessellation& tess, const Eigen::VectorXd& theta, int width,
                   int height, IntegrationConfig cfg)
    : basis_(&basis), cfg_(cfg) {
  check_grid(width, height);
  cfg_.validate();
  const CpaField field = theta_to_field(basis, theta);
  if (static_cast<int>(field.affine.size()) != tess.cell_count()) {
    throw DimensionMismatch("basis rows do not match the tessellation");
  }
  const double dt = cfg_.t_final / cfg_.n_steps;
  for (const auto& a : field.affine) {
    generators_.push_back(homogeneous(a, dt));
    steps_.push_back(matrix_exponential(generators_.back()));
  }

  const std::size_t pixels = static_cast<std::size_t>(width) * height;
  const auto n = static_cast<std::size_t>(cfg_.n_steps);
  points_.resize(pixels * n);
  cells_.resize(pixels * n);
  clamped_.resize(pixels * n);
  field_ = DisplacementField::zeros(width, height);

  for (int row = 0; row < height; ++row) {
    for (int col = 0; col < width; ++col) {
      const std::size_t pix = field_.index(row, col);
      const Eigen::Vector2d p0 = pixel_center(row, col, width, height);
      Eigen::Vector2d p = p0;
      for (std::size_t s = 0; s < n; ++s) {
        const std::size_t slot = pix * n + s;
        points_[slot] = p;
        cells_[slot] = tess.locate(p);
        clamped_[slot] = step_point(steps_[cells_[slot]], p);
      }
      if (!p.allFinite()) throw NonFiniteResult("flow integration produced a non-finite point");
      field_.dx[pix] = (p.x() - p0.x()) * width;
      field_.dy[pix] = (p.y() - p0.y()) * height;
    }
  }
}

Eigen::VectorXd GridFlow::backward(std::span<const double> grad_dx, std::span<const double> grad_dy) const {
  const std::size_t pixels = field_.dx.size();
  if (grad_dx.size() != pixels || grad_dy.size() != pixels) {
    throw ShapeMismatch("displacement gradient does not match the grid");
  }
  const auto n = static_cast<std::size_t>(cfg_.n_steps);
  std::vector<Eigen::Matrix3d> step_grad(steps_.size(), Eigen::Matrix3d::Zero());

  for (std::size_t pix = 0; pix < pixels; ++pix) {
    Eigen::Vector2d lambda(grad_dx[pix] * field_.width, grad_dy[pix] * field_.height);
    for (std::size_t s = n; s-- > 0;) {
      const std::size_t slot = pix * n + s;
      if (clamped_[slot] & 1) lambda.x() = 0.0;
      if (clamped_[slot] & 2) lambda.y() = 0.0;
      const Eigen::Matrix3d& E = steps_[cells_[slot]];
      const Eigen::Vector2d& p = points_[slot];
      step_grad[cells_[slot]].topRows<2>() += lambda * Eigen::RowVector3d(p.x(), p.y(), 1.0);
      lambda = E.topLeftCorner<2, 2>().transpose() * lambda;
    }
  }

  // <G, L(X, dX)> = <L(X^T, G), dX>, and dX = dt * dA.
  const double dt = cfg_.t_final / cfg_.n_steps;
  Eigen::VectorXd stacked = Eigen::VectorXd::Zero(basis_->B.rows());
  for (std::size_t c = 0; c < steps_.size(); ++c) {
    if (step_grad[c].isZero(0.0)) continue;
    const Eigen::Matrix3d adj = expm_frechet<3>(Eigen::Matrix3d(generators_[c].transpose()), step_grad[c]).second;
    for (int r = 0; r < 2; ++r) {
      for (int k = 0; k < 3; ++k) stacked(static_cast<Eigen::Index>(6 * c + 3 * r + k)) = dt * adj(r, k);
    }
  }
  Eigen::VectorXd grad = basis_->B.transpose() * stacked;
  if (!grad.allFinite()) throw NonFiniteResult("theta gradient is non-finite");
  return grad;
}

std::vector<double> jacobian_determinants(const DisplacementField& u) {
  const int w = u.width, h = u.height;
  std::vector<double> det(static_cast<std::size_t>(w) * h, 1.0);
  const auto tx = [&](int r, int c) { return c + u.dx[u.index(r, c)]; };
  const auto ty = [&](int r, int c) { return r + u.dy[u.index(r, c)]; };
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const int c0 = std::max(c - 1, 0), c1 = std::min(c + 1, w - 1);
      const int r0 = std::max(r - 1, 0), r1 = std::min(r + 1, h - 1);
      const double sc = c1 > c0 ? 1.0 / (c1 - c0) : 0.0;
      const double sr = r1 > r0 ? 1.0 / (r1 - r0) : 0.0;
      const double dxdc = c1 > c0 ? (tx(r, c1) - tx(r, c0)) * sc : 1.0;
      const double dydc = c1 > c0 ? (ty(r, c1) - ty(r, c0)) * sc : 0.0;
      const double dxdr = r1 > r0 ? (tx(r1, c) - tx(r0, c)) * sr : 0.0;
      const double dydr = r1 > r0 ? (ty(r1, c) - ty(r0, c)) * sr : 1.0;
      det[u.index(r, c)] = dxdc * dydr - dxdr * dydc;
    }
  }
  return det;
}

}  // namespace cpabaug
