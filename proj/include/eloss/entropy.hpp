#pragma once

#include "eloss/tensor.hpp"

#include <cstdint>
#include <vector>

namespace eloss {

/// n realisations of a d-dimensional random vector, one per row.
class SampleMatrix {
 public:
  /// Requires n >= 2, d >= 1 and finite entries.
  explicit SampleMatrix(RowMatrix values);

  std::size_t n() const noexcept { return std::size_t(values_.rows()); }
  std::size_t d() const noexcept { return std::size_t(values_.cols()); }
  const RowMatrix& values() const noexcept { return values_; }

 private:
  RowMatrix values_;
};

/// How a feature tensor is cut into samples.
///  - channels_as_samples: axis 0 indexes samples, the remaining axes are
///    flattened into the dimension (convolutional convention).
///  - positions_as_samples: the last axis is the dimension and all leading
///    axes are merged into the sample axis (token / dense-layer convention).
enum class SampleAxis { channels_as_samples, positions_as_samples };

SampleMatrix features_to_samples(const Tensor& feature,
                                 SampleAxis mode = SampleAxis::channels_as_samples);

enum class Estimator { knn, gaussian_diag };

enum class NeighborSearch { automatic, kd_tree, brute_force };

/// Above this dimension the automatic search switches to the exhaustive scan.
inline constexpr std::size_t kKdTreeMaxDim = 16;

/// Per-column variance floor of the diagonal-Gaussian proxy.
inline constexpr double kVarianceFloor = 1e-12;

/// Magnitude of the opt-in jitter applied when samples coincide.
inline constexpr double kJitterMagnitude = 1e-9;

struct KnnOptions {
  int k = 1;
  NeighborSearch search = NeighborSearch::automatic;
  /// Off by default: coincident samples raise DegenerateSampleError. When on,
  /// a seeded uniform perturbation in [-1e-9, 1e-9] is added to every
  /// coordinate and the estimate is retried once.
  bool jitter = false;
  std::uint64_t jitter_seed = 0;
};

struct EntropyEstimate {
  double value = 0.0;  // nats
  Estimator estimator = Estimator::knn;
  int k = 0;  // 0 for the Gaussian proxy
};

struct KnnDistances {
  Eigen::VectorXd distance;         // r_{d,k}(x_i)
  std::vector<std::size_t> neighbor;  // index of the k-th neighbour of row i
};

KnnDistances knn_distances(const SampleMatrix& s, int k,
                           NeighborSearch search = NeighborSearch::automatic);

/// Kozachenko-Leonenko / kNN differential entropy estimate in nats:
///   H = -psi(k) + psi(n) + log V_d + (d/n) sum_i log r_{d,k}(x_i)
/// with V_d the Euclidean unit-ball volume.
EntropyEstimate knn_entropy(const SampleMatrix& s, const KnnOptions& opts = {});

/// Gradient of knn_entropy w.r.t. every sample coordinate with neighbour
/// assignments held fixed: row i gets +(d/n)(x_i - x_j)/r_i^2 and its k-th
/// neighbour j gets the negation.
RowMatrix knn_entropy_grad(const SampleMatrix& s, const KnnOptions& opts = {});

/// sum_j 1/2 ln(2 pi e max(var_j, 1e-12)) with population variance per column.
EntropyEstimate gaussian_proxy_entropy(const SampleMatrix& s);

/// Tape versions over an n x d Var; the kNN adjoint uses the frozen-neighbour
/// gradient above.
Var knn_entropy(const Var& samples, const KnnOptions& opts = {});
Var gaussian_proxy_entropy(const Var& samples);

}  // namespace eloss
