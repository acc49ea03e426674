#include "cpabaug/tessellation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <utility>

#include "cpabaug/errors.hpp"

namespace cpabaug {

void TessellationConfig::validate() const {
  if (nx < 1 || ny < 1) {
    throw ValidationError("tessellation: nx and ny must be >= 1 (got " + std::to_string(nx) + "x" +
                          std::to_string(ny) + ")");
  }
}

Tessellation build_tessellation(const TessellationConfig& cfg) {
  cfg.validate();
  Tessellation t;
  t.cfg_ = cfg;
  const int nx = cfg.nx, ny = cfg.ny;
  const auto grid = [nx](int row, int col) { return row * (nx + 1) + col; };

  for (int row = 0; row <= ny; ++row) {
    for (int col = 0; col <= nx; ++col) {
      t.vertices_.emplace_back(static_cast<double>(col) / nx, static_cast<double>(row) / ny);
      t.boundary_.push_back(row == 0 || row == ny || col == 0 || col == nx);
    }
  }
  const int center0 = static_cast<int>(t.vertices_.size());
  for (int row = 0; row < ny; ++row) {
    for (int col = 0; col < nx; ++col) {
      t.vertices_.emplace_back((col + 0.5) / nx, (row + 0.5) / ny);
      t.boundary_.push_back(false);
    }
  }

  for (int row = 0; row < ny; ++row) {
    for (int col = 0; col < nx; ++col) {
      const int c = center0 + row * nx + col;
      const int v00 = grid(row, col), v10 = grid(row, col + 1);
      const int v01 = grid(row + 1, col), v11 = grid(row + 1, col + 1);
      t.triangles_.push_back({v00, v10, c});  // bottom
      t.triangles_.push_back({v10, v11, c});  // right
      t.triangles_.push_back({v11, v01, c});  // top
      t.triangles_.push_back({v01, v00, c});  // left
    }
  }
  return t;
}

Tessellation Tessellation::from_parts(TessellationConfig cfg, std::vector<Eigen::Vector2d> vertices,
                                      std::vector<std::array<int, 3>> triangles,
                                      std::vector<bool> boundary) {
  const Tessellation ref = build_tessellation(cfg);
  if (vertices.size() != ref.vertices_.size() || triangles != ref.triangles_ ||
      boundary != ref.boundary_) {
    throw SchemaError("tessellation parts do not match a " + std::to_string(cfg.nx) + "x" +
                      std::to_string(cfg.ny) + " layout");
  }
  for (std::size_t i = 0; i < vertices.size(); ++i) {
    if ((vertices[i] - ref.vertices_[i]).cwiseAbs().maxCoeff() > 1e-12) {
      throw SchemaError("tessellation vertex " + std::to_string(i) + " is off the layout grid");
    }
  }
  Tessellation t;
  t.cfg_ = cfg;
  t.vertices_ = std::move(vertices);
  t.triangles_ = std::move(triangles);
  t.boundary_ = std::move(boundary);
  return t;
}

Eigen::Vector3d Tessellation::barycentric(int tri, const Eigen::Vector2d& p) const {
  const auto& idx = triangles_[tri];
  const Eigen::Vector2d& a = vertices_[idx[0]];
  const Eigen::Vector2d& b = vertices_[idx[1]];
  const Eigen::Vector2d& c = vertices_[idx[2]];
  const double det = (b.x() - a.x()) * (c.y() - a.y()) - (c.x() - a.x()) * (b.y() - a.y());
  const double l1 = ((p.x() - a.x()) * (c.y() - a.y()) - (c.x() - a.x()) * (p.y() - a.y())) / det;
  const double l2 = ((b.x() - a.x()) * (p.y() - a.y()) - (p.x() - a.x()) * (b.y() - a.y())) / det;
  return {1.0 - l1 - l2, l1, l2};
}

int Tessellation::locate(Eigen::Vector2d p) const {
  p = p.cwiseMax(0.0).cwiseMin(1.0);
  const double sx = p.x() * cfg_.nx;
  const double sy = p.y() * cfg_.ny;
  // ceil(s) - 1 picks the lower cell when p sits exactly on a cell line.
  const int cx = std::clamp(static_cast<int>(std::ceil(sx)) - 1, 0, cfg_.nx - 1);
  const int cy = std::clamp(static_cast<int>(std::ceil(sy)) - 1, 0, cfg_.ny - 1);
  const double u = sx - cx - 0.5;
  const double v = sy - cy - 0.5;

  // Quadrants tested in index order so ties resolve to the lowest index.
  int q;
  if (-v >= std::abs(u)) {
    q = 0;
  } else if (u >= std::abs(v)) {
    q = 1;
  } else if (v >= std::abs(u)) {
    q = 2;
  } else {
    q = 3;
  }
  return 4 * (cy * cfg_.nx + cx) + q;
}

ConstraintMatrix build_constraints(const Tessellation& tess) {
  const auto& verts = tess.vertices();
  const auto& tris = tess.triangles();
  const int cols = 6 * tess.cell_count();

  std::map<std::pair<int, int>, std::vector<int>> edges;
  std::vector<std::vector<int>> incident(verts.size());
  for (int t = 0; t < tess.cell_count(); ++t) {
    for (int k = 0; k < 3; ++k) {
      const int a = tris[t][k], b = tris[t][(k + 1) % 3];
      edges[{std::min(a, b), std::max(a, b)}].push_back(t);
      incident[a].push_back(t);
    }
  }

  std::vector<Eigen::RowVectorXd> rows;
  const auto affine_row = [&](int tri, int comp, const Eigen::Vector2d& v, double sign,
                              Eigen::RowVectorXd& row) {
    row(6 * tri + 3 * comp + 0) += sign * v.x();
    row(6 * tri + 3 * comp + 1) += sign * v.y();
    row(6 * tri + 3 * comp + 2) += sign;
  };

  for (const auto& [edge, owners] : edges) {
    if (owners.size() != 2) continue;
    for (int vid : {edge.first, edge.second}) {
      for (int comp = 0; comp < 2; ++comp) {
        Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(cols);
        affine_row(owners[0], comp, verts[vid], 1.0, row);
        affine_row(owners[1], comp, verts[vid], -1.0, row);
        rows.push_back(std::move(row));
      }
    }
  }

  const auto& boundary = tess.boundary_vertex_flags();
  for (std::size_t vid = 0; vid < verts.size(); ++vid) {
    if (!boundary[vid]) continue;
    for (int t : incident[vid]) {
      for (int comp = 0; comp < 2; ++comp) {
        Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(cols);
        affine_row(t, comp, verts[vid], 1.0, row);
        rows.push_back(std::move(row));
      }
    }
  }

  ConstraintMatrix out;
  out.rows.resize(static_cast<Eigen::Index>(rows.size()), cols);
  for (std::size_t i = 0; i < rows.size(); ++i) out.rows.row(static_cast<Eigen::Index>(i)) = rows[i];
  return out;
}

CpaBasis build_basis(const ConstraintMatrix& constraints) {
  const Eigen::MatrixXd& L = constraints.rows;
  if (!L.allFinite()) throw ValidationError("constraint matrix has non-finite entries");
  const Eigen::Index n = L.cols();

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(L.transpose());
  qr.setThreshold(1e-10);
  const Eigen::Index rank = qr.rank();
  if (rank >= n) throw DegenerateBasis("CPA velocity space is zero-dimensional");

  const Eigen::MatrixXd Q = qr.householderQ();
  CpaBasis basis;
  basis.B = Q.rightCols(n - rank);
  return basis;
}

}  // namespace cpabaug
