#pragma once

#include "eloss/entropy.hpp"
#include "eloss/errors.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <concepts>
#include <limits>
#include <numeric>
#include <vector>

namespace eloss {

template <std::floating_point Scalar>
struct SymmetricEigen {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  Vector values;   // descending
  Matrix vectors;  // column i pairs with values[i]
  int sweeps = 0;
};

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Pivots are visited
/// in fixed row-major order and there is no randomness, so the result depends
/// only on the input bits. Eigenpairs are sorted by descending value; equal
/// values keep their diagonal order. Vectors are not sign-normalized here.
template <std::floating_point Scalar>
SymmetricEigen<Scalar> jacobi_eigen(
    const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& input,
    int max_sweeps = 100) {
  using Matrix = typename SymmetricEigen<Scalar>::Matrix;
  const Eigen::Index n = input.rows();
  if (n != input.cols()) throw DimensionError("jacobi_eigen needs a square matrix");
  if (!input.allFinite()) throw NonFiniteError("jacobi_eigen input is not finite");

  Matrix a = (input + input.transpose()) / Scalar(2);
  Matrix v = Matrix::Identity(n, n);
  const Scalar scale = std::max(a.norm(), std::numeric_limits<Scalar>::min());
  const Scalar eps = std::numeric_limits<Scalar>::epsilon();

  SymmetricEigen<Scalar> out;
  for (; out.sweeps < max_sweeps; ++out.sweeps) {
    Scalar off = 0;
    for (Eigen::Index p = 0; p < n; ++p)
      for (Eigen::Index q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (std::sqrt(off) <= eps * scale) break;

    for (Eigen::Index p = 0; p < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const Scalar apq = a(p, q);
        if (apq == Scalar(0)) continue;
        // Rotation that zeroes a(p,q); t is the smaller root of
        // t^2 + 2 theta t - 1 = 0.
        const Scalar theta = (a(q, q) - a(p, p)) / (Scalar(2) * apq);
        const Scalar t = (theta >= 0 ? Scalar(1) : Scalar(-1)) /
                         (std::abs(theta) + std::sqrt(theta * theta + Scalar(1)));
        const Scalar c = Scalar(1) / std::sqrt(t * t + Scalar(1));
        const Scalar s = t * c;
        for (Eigen::Index k = 0; k < n; ++k) {
          const Scalar akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const Scalar apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const Scalar vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index(0));
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index i, Eigen::Index j) { return a(i, i) > a(j, j); });
  out.values.resize(n);
  out.vectors.resize(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    out.values[i] = a(order[std::size_t(i)], order[std::size_t(i)]);
    out.vectors.col(i) = v.col(order[std::size_t(i)]);
  }
  return out;
}

struct GaussianFit1d {
  double mean = 0.0;
  double stddev = 0.0;  // population
};

/// Density summary of normalized activations as a product of two 1D Gaussians
/// fitted to the projections on the first two principal axes.
struct Pca2Summary {
  Eigen::VectorXd axis1;
  Eigen::VectorXd axis2;
  GaussianFit1d fit1;
  GaussianFit1d fit2;
  double explained1 = 0.0;  // eigenvalue / trace of the normalized covariance
  double explained2 = 0.0;
  bool second_degenerate = false;  // covariance rank < 2
};

/// Relative eigenvalue below which the second axis is reported degenerate.
inline constexpr double kPcaRankTolerance = 1e-12;

/// Columns are centred and scaled to unit population variance (constant
/// columns are only centred); the covariance of the result is decomposed
/// with jacobi_eigen. Each axis is signed so that its largest-magnitude
/// component (first one on ties) is positive.
Pca2Summary pca2_summary(const SampleMatrix& s);

}  // namespace eloss
