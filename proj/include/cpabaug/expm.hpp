#pragma once

// Matrix exponential by scaling and squaring with Pade approximants, after
// N. J. Higham, "The scaling and squaring method for the matrix exponential
// revisited", SIAM J. Matrix Anal. Appl. 26 (2005). Used on the 3x3
// homogeneous affine generators and on the 6x6 block matrices that carry
// their Frechet derivatives.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <utility>

#include "cpabaug/errors.hpp"

namespace cpabaug {

namespace detail {

template <typename Mat>
void pade3(const Mat& A, Mat& U, Mat& V) {
  const double b[] = {120.0, 60.0, 12.0, 1.0};
  const Mat I = Mat::Identity(A.rows(), A.cols());
  const Mat A2 = A * A;
  U = A * (b[3] * A2 + b[1] * I);
  V = b[2] * A2 + b[0] * I;
}

template <typename Mat>
void pade5(const Mat& A, Mat& U, Mat& V) {
  const double b[] = {30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0};
  const Mat I = Mat::Identity(A.rows(), A.cols());
  const Mat A2 = A * A;
  const Mat A4 = A2 * A2;
  U = A * (b[5] * A4 + b[3] * A2 + b[1] * I);
  V = b[4] * A4 + b[2] * A2 + b[0] * I;
}

template <typename Mat>
void pade7(const Mat& A, Mat& U, Mat& V) {
  const double b[] = {17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0};
  const Mat I = Mat::Identity(A.rows(), A.cols());
  const Mat A2 = A * A;
  const Mat A4 = A2 * A2;
  const Mat A6 = A4 * A2;
  U = A * (b[7] * A6 + b[5] * A4 + b[3] * A2 + b[1] * I);
  V = b[6] * A6 + b[4] * A4 + b[2] * A2 + b[0] * I;
}

template <typename Mat>
void pade9(const Mat& A, Mat& U, Mat& V) {
  const double b[] = {17643225600.0, 8821612800.0, 2075673600.0, 302702400.0, 30270240.0,
                      2162160.0,     110880.0,     3960.0,       90.0,        1.0};
  const Mat I = Mat::Identity(A.rows(), A.cols());
  const Mat A2 = A * A;
  const Mat A4 = A2 * A2;
  const Mat A6 = A4 * A2;
  const Mat A8 = A6 * A2;
  U = A * (b[9] * A8 + b[7] * A6 + b[5] * A4 + b[3] * A2 + b[1] * I);
  V = b[8] * A8 + b[6] * A6 + b[4] * A4 + b[2] * A2 + b[0] * I;
}

template <typename Mat>
void pade13(const Mat& A, Mat& U, Mat& V) {
  const double b[] = {64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
                      1187353796428800.0,  129060195264000.0,   10559470521600.0,
                      670442572800.0,      33522128640.0,       1323241920.0,
                      40840800.0,          960960.0,            16380.0,
                      182.0,               1.0};
  const Mat I = Mat::Identity(A.rows(), A.cols());
  const Mat A2 = A * A;
  const Mat A4 = A2 * A2;
  const Mat A6 = A4 * A2;
  const Mat inner_u = A6 * (b[13] * A6 + b[11] * A4 + b[9] * A2);
  U = A * (inner_u + b[7] * A6 + b[5] * A4 + b[3] * A2 + b[1] * I);
  const Mat inner_v = A6 * (b[12] * A6 + b[10] * A4 + b[8] * A2);
  V = inner_v + b[6] * A6 + b[4] * A4 + b[2] * A2 + b[0] * I;
}

}  // namespace detail

/// exp(M) for a fixed-size square Eigen matrix. Throws NonFiniteResult when
/// the input or the result is not finite.
template <typename Mat>
Mat matrix_exponential(const Mat& M) {
  if (!M.allFinite()) throw NonFiniteResult("matrix_exponential: non-finite input");
  const double norm = M.cwiseAbs().colwise().sum().maxCoeff();

  Mat U, V;
  int squarings = 0;
  if (norm < 1.495585217958292e-2) {
    detail::pade3(M, U, V);
  } else if (norm < 2.539398330063230e-1) {
    detail::pade5(M, U, V);
  } else if (norm < 9.504178996162932e-1) {
    detail::pade7(M, U, V);
  } else if (norm < 2.097847961257068e0) {
    detail::pade9(M, U, V);
  } else {
    const double max_norm = 5.371920351148152e0;
    if (norm > max_norm) {
      int e = 0;
      std::frexp(norm / max_norm, &e);
      squarings = std::max(0, e);
    }
    const Mat scaled = M * std::ldexp(1.0, -squarings);
    detail::pade13(scaled, U, V);
  }

  Mat R = (V - U).partialPivLu().solve(V + U);
  for (int i = 0; i < squarings; ++i) R = (R * R).eval();
  if (!R.allFinite()) throw NonFiniteResult("matrix_exponential: overflow");
  return R;
}

/// exp(X) together with the Frechet derivative L(X, E) = d/dh exp(X + hE)
/// at h = 0, both read off exp([[X, E], [0, X]]).
template <int N>
std::pair<Eigen::Matrix<double, N, N>, Eigen::Matrix<double, N, N>> expm_frechet(
    const Eigen::Matrix<double, N, N>& X, const Eigen::Matrix<double, N, N>& E) {
  Eigen::Matrix<double, 2 * N, 2 * N> block = Eigen::Matrix<double, 2 * N, 2 * N>::Zero();
  block.template topLeftCorner<N, N>() = X;
  block.template topRightCorner<N, N>() = E;
  block.template bottomRightCorner<N, N>() = X;
  const Eigen::Matrix<double, 2 * N, 2 * N> big = matrix_exponential(block);
  return {big.template topLeftCorner<N, N>(), big.template topRightCorner<N, N>()};
}

}  // namespace cpabaug
