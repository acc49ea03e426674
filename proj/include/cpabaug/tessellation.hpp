#pragma once

#include <Eigen/Dense>
#include <array>
#include <vector>

namespace cpabaug {

struct TessellationConfig {
  int nx = 4;
  int ny = 4;

  /// Throws ValidationError unless nx >= 1 and ny >= 1.
  void validate() const;
};

/// Triangulation of the unit square.
///
/// Each of the nx*ny square cells is cut into four triangles through its
/// center. Vertices are the (nx+1)*(ny+1) grid nodes in row-major order
/// followed by the nx*ny cell centers. Triangle 4*cell+q, with cells in
/// row-major order, is the bottom (q=0, edge at the smaller y), right,
/// top and left triangle of that cell. All triangles are counter-clockwise
/// in (x, y).
class Tessellation {
 public:
  Tessellation() = default;

  /// Rebuilds a tessellation from stored parts (model files). Verifies the
  /// parts describe the layout above for `cfg`.
  static Tessellation from_parts(TessellationConfig cfg, std::vector<Eigen::Vector2d> vertices,
                                 std::vector<std::array<int, 3>> triangles,
                                 std::vector<bool> boundary);

  const TessellationConfig& config() const { return cfg_; }
  const std::vector<Eigen::Vector2d>& vertices() const { return vertices_; }
  const std::vector<std::array<int, 3>>& triangles() const { return triangles_; }
  const std::vector<bool>& boundary_vertex_flags() const { return boundary_; }
  int cell_count() const { return static_cast<int>(triangles_.size()); }

  /// Barycentric coordinates of p with respect to triangle `tri`.
  Eigen::Vector3d barycentric(int tri, const Eigen::Vector2d& p) const;

  /// Triangle containing p (clamped into the unit square first). On shared
  /// edges and vertices the lowest-index containing triangle is returned.
  int locate(Eigen::Vector2d p) const;

 private:
  friend Tessellation build_tessellation(const TessellationConfig& cfg);

  TessellationConfig cfg_;
  std::vector<Eigen::Vector2d> vertices_;
  std::vector<std::array<int, 3>> triangles_;
  std::vector<bool> boundary_;
};

Tessellation build_tessellation(const TessellationConfig& cfg);

inline int locate_cell(const Tessellation& tess, const Eigen::Vector2d& p) { return tess.locate(p); }

/// Linear constraints on the stacked per-triangle affine parameters.
///
/// Column 6*c + 3*r + k holds entry (r, k) of the 2x3 matrix A_c of
/// triangle c, so the velocity inside c is A_c * [x, y, 1]^T.
struct ConstraintMatrix {
  Eigen::MatrixXd rows;
};

/// Continuity rows (two shared vertices per interior edge, both velocity
/// components) followed by zero-velocity rows for every (boundary vertex,
/// incident triangle) pair.
ConstraintMatrix build_constraints(const Tessellation& tess);

/// Orthonormal basis of the null space of the constraint rows.
struct CpaBasis {
  Eigen::MatrixXd B;  // (6 * cell_count) x d
  int dim() const { return static_cast<int>(B.cols()); }
};

/// Null space from a column-pivoted Householder QR of L^T. The trailing
/// Householder columns span null(L); the algorithm has no random state so
/// the basis is bit-reproducible. Throws DegenerateBasis when d = 0.
CpaBasis build_basis(const ConstraintMatrix& constraints);

}  // namespace cpabaug
