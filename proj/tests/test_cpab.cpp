#include <doctest.h>

#include <array>
#include <boost/multiprecision/cpp_bin_float.hpp>

#include "cpabaug/errors.hpp"
#include "cpabaug/expm.hpp"
#include "support.hpp"

using namespace cpabaug;
using testing::ode_flow;

namespace {

struct Setup {
  Tessellation tess;
  CpaBasis basis;
  explicit Setup(int n = 4) : tess(build_tessellation({n, n})), basis(build_basis(build_constraints(tess))) {}
};

const Setup& setup4() {
  static const Setup s(4);
  return s;
}

using Big = boost::multiprecision::cpp_bin_float_50;
using BigMat = std::array<std::array<Big, 3>, 3>;

// Truncated Taylor series of exp(M) in 50-digit arithmetic.
Eigen::Matrix3d taylor_expm(const Eigen::Matrix3d& M, int terms = 120) {
  BigMat term{}, sum{};
  for (int i = 0; i < 3; ++i) {
    term[i][i] = 1;
    sum[i][i] = 1;
  }
  for (int n = 1; n < terms; ++n) {
    BigMat next{};
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        Big acc = 0;
        for (int k = 0; k < 3; ++k) acc += term[i][k] * Big(M(k, j));
        next[i][j] = acc / n;
      }
    }
    term = next;
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) sum[i][j] += term[i][j];
    }
  }
  Eigen::Matrix3d out;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) out(i, j) = static_cast<double>(sum[i][j]);
  }
  return out;
}

double max_grid_diff(const DisplacementField& a, const DisplacementField& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.dx.size(); ++i) {
    m = std::max(m, std::hypot((a.dx[i] - b.dx[i]) / a.width, (a.dy[i] - b.dy[i]) / a.height));
  }
  return m;
}

}  // namespace

TEST_CASE("integration config validation") {
  CHECK_THROWS_AS((IntegrationConfig{0, 1.0}.validate()), ValidationError);
  CHECK_THROWS_AS((IntegrationConfig{10, std::nan("")}.validate()), ValidationError);
  CHECK_NOTHROW((IntegrationConfig{1, 1.0}.validate()));
}

TEST_CASE("theta_to_field: zero, linearity, unit vectors, dimension") {
  const auto& s = setup4();
  Rng rng(1);
  const int d = s.basis.dim();
  const CpaField z = theta_to_field(s.basis, Eigen::VectorXd::Zero(d));
  for (const auto& A : z.affine) CHECK(A.isZero(0.0));

  const Eigen::VectorXd t1 = testing::random_theta(rng, d, 0.5, 1.0);
  const Eigen::VectorXd t2 = testing::random_theta(rng, d, 0.5, 1.0);
  const double a = 1.7, b = -0.6;
  const CpaField f1 = theta_to_field(s.basis, t1), f2 = theta_to_field(s.basis, t2);
  const CpaField fc = theta_to_field(s.basis, a * t1 + b * t2);
  for (int c = 0; c < s.tess.cell_count(); ++c) {
    CHECK((fc.affine[c] - (a * f1.affine[c] + b * f2.affine[c])).cwiseAbs().maxCoeff() < 1e-14);
  }

  for (int k : {0, 7, d - 1}) {
    const CpaField e = theta_to_field(s.basis, Eigen::VectorXd::Unit(d, k));
    for (int c = 0; c < s.tess.cell_count(); ++c) {
      for (int r = 0; r < 2; ++r) {
        for (int j = 0; j < 3; ++j) CHECK(e.affine[c](r, j) == s.basis.B(6 * c + 3 * r + j, k));
      }
    }
  }
  CHECK_THROWS_AS(theta_to_field(s.basis, Eigen::VectorXd::Zero(d + 1)), DimensionMismatch);
}

TEST_CASE("velocity_at: zero field, boundary, edge midpoints") {
  const auto& s = setup4();
  Rng rng(2);
  const CpaField zero = theta_to_field(s.basis, Eigen::VectorXd::Zero(s.basis.dim()));
  CHECK(velocity_at(zero, s.tess, {0.3, 0.8}).norm() == 0.0);
  for (int trial = 0; trial < 10; ++trial) {
    const CpaField f = theta_to_field(s.basis, testing::random_theta(rng, s.basis.dim(), 0.1, 3.0));
    for (int i = 0; i < 20; ++i) {
      const double u = rng.uniform();
      CHECK(velocity_at(f, s.tess, {u, 0.0}).norm() < 1e-8);
      CHECK(velocity_at(f, s.tess, {1.0, u}).norm() < 1e-8);
      CHECK(velocity_at(f, s.tess, {u, 1.0}).norm() < 1e-8);
      CHECK(velocity_at(f, s.tess, {0.0, u}).norm() < 1e-8);
    }
    // Midpoint of the spoke shared by the bottom and right triangles of cell 5.
    const auto& tb = s.tess.triangles()[4 * 5];
    const auto& tr = s.tess.triangles()[4 * 5 + 1];
    int shared[2], n = 0;
    for (int a : tb) {
      for (int b : tr) {
        if (a == b) shared[n++] = a;
      }
    }
    REQUIRE(n == 2);
    const Eigen::Vector2d mid = 0.5 * (s.tess.vertices()[shared[0]] + s.tess.vertices()[shared[1]]);
    CHECK((velocity_in(f, 20, mid) - velocity_in(f, 21, mid)).norm() < 1e-8);
  }
}

TEST_CASE("matrix_exponential: closed forms") {
  CHECK(matrix_exponential(Eigen::Matrix3d::Zero().eval()) == Eigen::Matrix3d::Identity());
  Eigen::Matrix3d N = Eigen::Matrix3d::Zero();
  N(0, 2) = 1.0;
  CHECK((matrix_exponential(N) - (Eigen::Matrix3d::Identity() + N)).cwiseAbs().maxCoeff() < 1e-15);
  Eigen::Matrix3d D = Eigen::Matrix3d::Zero();
  D(0, 0) = 1.0;
  D(1, 1) = 1.0;
  const Eigen::Matrix3d E = matrix_exponential(D);
  CHECK(E(0, 0) == doctest::Approx(std::exp(1.0)).epsilon(1e-15));
  CHECK(E(2, 2) == 1.0);
}

TEST_CASE("matrix_exponential matches a high-precision Taylor oracle") {
  Rng rng(3);
  std::vector<Eigen::Matrix3d> cases;
  Eigen::Matrix3d D = Eigen::Matrix3d::Zero();
  D(0, 0) = 1.0;
  D(1, 1) = 1.0;
  D(0, 2) = 0.5;
  cases.push_back(D);
  for (int i = 0; i < 60; ++i) {
    Eigen::Matrix3d M = Eigen::Matrix3d::Zero();
    for (int r = 0; r < 2; ++r) {
      for (int c = 0; c < 3; ++c) M(r, c) = rng.normal();
    }
    // Norms from 1e-4 up to 10, covering every Pade branch.
    const double target = std::pow(10.0, rng.uniform(-4.0, 1.0));
    cases.push_back(M * (target / M.cwiseAbs().colwise().sum().maxCoeff()));
  }
  for (const auto& M : cases) {
    const Eigen::Matrix3d got = matrix_exponential(M);
    const Eigen::Matrix3d ref = taylor_expm(M);
    CHECK((got - ref).norm() / ref.norm() < 1e-12);
  }
}

TEST_CASE("matrix_exponential rejects non-finite input and overflow") {
  Eigen::Matrix3d M = Eigen::Matrix3d::Zero();
  M(0, 0) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(matrix_exponential(M), NonFiniteResult);
  M(0, 0) = 1e6;
  CHECK_THROWS_AS(matrix_exponential(M), NonFiniteResult);
}

TEST_CASE("Frechet derivative matches central differences of the oracle") {
  Rng rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    Eigen::Matrix3d X = Eigen::Matrix3d::Zero(), E = Eigen::Matrix3d::Zero();
    for (int r = 0; r < 2; ++r) {
      for (int c = 0; c < 3; ++c) {
        X(r, c) = rng.normal();
        E(r, c) = rng.normal();
      }
    }
    const auto [expX, L] = expm_frechet<3>(X, E);
    const double h = 1e-10;
    const Eigen::Matrix3d fd = (taylor_expm(X + h * E) - taylor_expm(X - h * E)) / (2 * h);
    CHECK((expX - taylor_expm(X)).norm() / expX.norm() < 1e-12);
    CHECK((L - fd).norm() / L.norm() < 1e-5);
  }
}

TEST_CASE("identity at theta = 0") {
  const auto& s = setup4();
  const CpaField zero = theta_to_field(s.basis, Eigen::VectorXd::Zero(s.basis.dim()));
  Rng rng(5);
  for (int i = 0; i < 50; ++i) {
    const Eigen::Vector2d p(rng.uniform(), rng.uniform());
    CHECK(integrate_point(zero, s.tess, p, {}) == p);
  }
  for (auto [w, h] : {std::pair{2, 2}, {7, 13}, {30, 30}, {64, 17}}) {
    const DisplacementField u = transform_grid(zero, s.tess, w, h, {});
    CHECK(u.width == w);
    CHECK(u.height == h);
    CHECK(u.max_magnitude() == 0.0);
  }
}

TEST_CASE("integrate_point agrees with an adaptive ODE oracle") {
  const auto& s = setup4();
  Rng rng(6);
  double worst = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    const CpaField f = theta_to_field(s.basis, testing::random_theta(rng, s.basis.dim(), 0.1, 1.0));
    for (int i = 0; i < 100; ++i) {
      const Eigen::Vector2d p(rng.uniform(), rng.uniform());
      worst = std::max(worst, (integrate_point(f, s.tess, p, {10, 1.0}) - ode_flow(f, s.tess, p, 1.0)).norm());
    }
  }
  CHECK(worst < 1e-3);
}

TEST_CASE("transform_grid agrees with the oracle on a 30x30 grid") {
  const auto& s = setup4();
  Rng rng(7);
  double worst = 0.0;
  for (int trial = 0; trial < 3; ++trial) {
    const CpaField f = theta_to_field(s.basis, testing::random_theta(rng, s.basis.dim(), 0.1, 1.0));
    const DisplacementField u = transform_grid(f, s.tess, 30, 30, {});
    for (int r = 0; r < 30; ++r) {
      for (int c = 0; c < 30; ++c) {
        const Eigen::Vector2d p = pixel_center(r, c, 30, 30);
        const Eigen::Vector2d ref = ode_flow(f, s.tess, p, 1.0);
        const std::size_t i = u.index(r, c);
        worst = std::max(worst, (Eigen::Vector2d(p.x() + u.dx[i] / 30.0, p.y() + u.dy[i] / 30.0) - ref).norm());
      }
    }
  }
  CHECK(worst < 1e-3);
}

TEST_CASE("transform_grid equals per-pixel integrate_point") {
  const auto& s = setup4();
  Rng rng(8);
  const CpaField f = theta_to_field(s.basis, testing::random_theta(rng, s.basis.dim(), 0.5, 1.0));
  const DisplacementField u = transform_grid(f, s.tess, 11, 9, {7, 0.8});
  for (int r = 0; r < 9; ++r) {
    for (int c = 0; c < 11; ++c) {
      const Eigen::Vector2d p = pixel_center(r, c, 11, 9);
      const Eigen::Vector2d q = integrate_point(f, s.tess, p, {7, 0.8});
      CHECK(u.dx[u.index(r, c)] == doctest::Approx((q.x() - p.x()) * 11).epsilon(1e-12));
      CHECK(u.dy[u.index(r, c)] == doctest::Approx((q.y() - p.y()) * 9).epsilon(1e-12));
    }
  }
}

TEST_CASE("boundary points are fixed") {
  const auto& s = setup4();
  Rng rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    const CpaField f = theta_to_field(s.basis, testing::random_theta(rng, s.basis.dim(), 0.1, 2.0));
    const FlowSolver solver(s.tess, f, {});
    for (int i = 0; i < 20; ++i) {
      const double u = rng.uniform();
      for (const Eigen::Vector2d& p : {Eigen::Vector2d(u, 0), Eigen::Vector2d(1, u), Eigen::Vector2d(u, 1),
                                      Eigen::Vector2d(0, u)}) {
        CHECK((solver.integrate(p) - p).norm() < 1e-8);
      }
    }
  }
}

TEST_CASE("border pixels move less than the interior maximum") {
  const auto& s = setup4();
  Rng rng(10);
  for (int trial = 0; trial < 5; ++trial) {
    const CpaField f = theta_to_field(s.basis, testing::random_theta(rng, s.basis.dim(), 0.5, 1.0));
    const DisplacementField u = transform_grid(f, s.tess, 30, 30, {});
    double border = 0.0, interior = 0.0;
    for (int r = 0; r < 30; ++r) {
      for (int c = 0; c < 30; ++c) {
        const double m = std::hypot(u.dx[u.index(r, c)], u.dy[u.index(r, c)]);
        (r == 0 || c == 0 || r == 29 || c == 29 ? border : interior) =
            std::max(r == 0 || c == 0 || r == 29 || c == 29 ? border : interior, m);
      }
    }
    CHECK(border < interior);
  }
}

TEST_CASE("inverse composition and positive Jacobian") {
  const auto& s = setup4();
  Rng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    const Eigen::VectorXd th = testing::random_theta(rng, s.basis.dim(), 0.1, 1.0);
    const FlowSolver fwd(s.tess, theta_to_field(s.basis, th), {});
    const FlowSolver inv(s.tess, theta_to_field(s.basis, -th), {});
    for (int i = 0; i < 100; ++i) {
      const Eigen::Vector2d p(rng.uniform(), rng.uniform());
      CHECK((inv.integrate(fwd.integrate(p)) - p).norm() < 1e-2);
    }
    const auto dets = jacobian_determinants(transform_grid(theta_to_field(s.basis, th), s.tess, 30, 30, {}));
    CHECK(*std::min_element(dets.begin(), dets.end()) > 0.0);
  }
}

TEST_CASE("inverse composition tightens with more steps") {
  const auto& s = setup4();
  Rng rng(12);
  const Eigen::VectorXd th = testing::random_theta(rng, s.basis.dim(), 0.8, 1.0);
  double prev = 1e9;
  for (int n : {10, 40, 160}) {
    const FlowSolver fwd(s.tess, theta_to_field(s.basis, th), {n, 1.0});
    const FlowSolver inv(s.tess, theta_to_field(s.basis, -th), {n, 1.0});
    double worst = 0.0;
    Rng pts(99);
    for (int i = 0; i < 100; ++i) {
      const Eigen::Vector2d p(pts.uniform(), pts.uniform());
      worst = std::max(worst, (inv.integrate(fwd.integrate(p)) - p).norm());
    }
    CHECK(worst < prev);
    prev = worst;
  }
}

TEST_CASE("step-doubling differences shrink at least twofold") {
  const auto& s = setup4();
  Rng rng(13);
  for (int trial = 0; trial < 5; ++trial) {
    const CpaField f = theta_to_field(s.basis, testing::random_theta(rng, s.basis.dim(), 0.5, 1.0));
    std::vector<DisplacementField> g;
    for (int n : {10, 20, 40}) g.push_back(transform_grid(f, s.tess, 30, 30, {n, 1.0}));
    const double d1 = max_grid_diff(g[0], g[1]);
    const double d2 = max_grid_diff(g[1], g[2]);
    CHECK(d2 <= 0.5 * d1);
  }
}

TEST_CASE("pathological theta overflows with NonFiniteResult") {
  const auto& s = setup4();
  const Eigen::VectorXd th = Eigen::VectorXd::Constant(s.basis.dim(), 1e305);
  CHECK_THROWS_AS(FlowSolver(s.tess, theta_to_field(s.basis, th), {}), NonFiniteResult);
}

TEST_CASE("grad_transform at theta = 0 with one step is the basis velocity") {
  const auto& s = setup4();
  const int W = 12, H = 10;
  const TransformJacobian J =
      grad_transform(s.basis, Eigen::VectorXd::Zero(s.basis.dim()), s.tess, W, H, {1, 1.0});
  for (int k : {0, 13, s.basis.dim() - 1}) {
    const CpaField e = theta_to_field(s.basis, Eigen::VectorXd::Unit(s.basis.dim(), k));
    for (int r = 0; r < H; ++r) {
      for (int c = 0; c < W; ++c) {
        const Eigen::Vector2d v = velocity_at(e, s.tess, pixel_center(r, c, W, H));
        CHECK(J.at(r, c, 0, k) == doctest::Approx(v.x() * W).epsilon(1e-12));
        CHECK(J.at(r, c, 1, k) == doctest::Approx(v.y() * H).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("grad_transform matches central finite differences") {
  const auto& s = setup4();
  Rng rng(14);
  const int W = 16, H = 16;
  const double h = 1e-4;
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::VectorXd th = testing::random_theta(rng, s.basis.dim(), 0.05, 0.5);
    const Eigen::VectorXd dir = testing::random_direction(rng, s.basis.dim());
    const TransformJacobian J = grad_transform(s.basis, th, s.tess, W, H, {});
    const auto up = transform_grid(theta_to_field(s.basis, th + h * dir), s.tess, W, H, {});
    const auto dn = transform_grid(theta_to_field(s.basis, th - h * dir), s.tess, W, H, {});
    int good = 0, total = 0;
    for (int r = 0; r < H; ++r) {
      for (int c = 0; c < W; ++c) {
        const std::size_t i = up.index(r, c);
        double ax = 0.0, ay = 0.0;
        for (int k = 0; k < s.basis.dim(); ++k) {
          ax += J.at(r, c, 0, k) * dir(k);
          ay += J.at(r, c, 1, k) * dir(k);
        }
        const Eigen::Vector2d a(ax, ay);
        const Eigen::Vector2d fd((up.dx[i] - dn.dx[i]) / (2 * h), (up.dy[i] - dn.dy[i]) / (2 * h));
        good += (a - fd).norm() <= 1e-3 * std::max(fd.norm(), 1e-6);
        ++total;
      }
    }
    CHECK(good >= 0.95 * total);
  }
}

TEST_CASE("GridFlow reproduces transform_grid and its backward is J^T g") {
  const auto& s = setup4();
  Rng rng(15);
  const int W = 9, H = 7;
  const Eigen::VectorXd th = testing::random_theta(rng, s.basis.dim(), 0.3, 1.0);
  const GridFlow flow(s.basis, s.tess, th, W, H, {});
  const DisplacementField ref = transform_grid(theta_to_field(s.basis, th), s.tess, W, H, {});
  CHECK(flow.displacement().dx == ref.dx);
  CHECK(flow.displacement().dy == ref.dy);

  std::vector<double> gx(W * H), gy(W * H);
  for (auto& v : gx) v = rng.normal();
  for (auto& v : gy) v = rng.normal();
  const Eigen::VectorXd got = flow.backward(gx, gy);
  const TransformJacobian J = grad_transform(s.basis, th, s.tess, W, H, {});
  Eigen::VectorXd want = Eigen::VectorXd::Zero(s.basis.dim());
  for (int r = 0; r < H; ++r) {
    for (int c = 0; c < W; ++c) {
      for (int k = 0; k < s.basis.dim(); ++k) {
        want(k) += J.at(r, c, 0, k) * gx[r * W + c] + J.at(r, c, 1, k) * gy[r * W + c];
      }
    }
  }
  CHECK((got - want).norm() <= 1e-10 * want.norm());
}

TEST_CASE("jacobian_determinants of the identity and of a uniform scale") {
  const auto id = jacobian_determinants(DisplacementField::zeros(6, 5));
  for (double d : id) CHECK(d == 1.0);
  DisplacementField u = DisplacementField::zeros(6, 5);
  for (int r = 0; r < 5; ++r) {
    for (int c = 0; c < 6; ++c) {
      u.dx[u.index(r, c)] = 0.5 * c;
      u.dy[u.index(r, c)] = 0.5 * r;
    }
  }
  for (double d : jacobian_determinants(u)) CHECK(d == doctest::Approx(2.25));
}
