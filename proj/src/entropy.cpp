#include "eloss/entropy.hpp"

#include "eloss/errors.hpp"
#include "eloss/kdtree.hpp"
#include "eloss/rng.hpp"
#include "eloss/special.hpp"

#include <cmath>
#include <numbers>
#include <optional>

namespace eloss {

SampleMatrix::SampleMatrix(RowMatrix values) : values_(std::move(values)) {
  if (values_.rows() < 2) {
    throw InsufficientSamplesError("need at least 2 samples, got " +
                                   std::to_string(values_.rows()));
  }
  if (values_.cols() < 1) throw DimensionError("sample dimension must be >= 1");
  if (!values_.allFinite()) throw NonFiniteError("samples contain non-finite values");
}

SampleMatrix features_to_samples(const Tensor& feature, SampleAxis mode) {
  if (feature.rank() < 2) {
    throw DimensionError("features_to_samples needs >= 2 axes, got shape " +
                         shape_string(feature.shape()));
  }
  std::size_t n = 0, d = 0;
  if (mode == SampleAxis::channels_as_samples) {
    n = feature.extent(0);
    d = feature.size() / n;
  } else {
    d = feature.shape().back();
    n = feature.size() / d;
  }
  if (n < 2) {
    throw InsufficientSamplesError("reshape of " + shape_string(feature.shape()) +
                                   " leaves " + std::to_string(n) + " sample(s)");
  }
  // Row-major storage means both layouts are a plain reinterpretation.
  return SampleMatrix(Eigen::Map<const RowMatrix>(feature.data().data(),
                                                  Eigen::Index(n), Eigen::Index(d)));
}

KnnDistances knn_distances(const SampleMatrix& s, int k, NeighborSearch search) {
  const std::size_t n = s.n();
  if (k < 1 || std::size_t(k) >= n) {
    throw DomainError("k must satisfy 1 <= k <= n - 1 (k = " + std::to_string(k) +
                      ", n = " + std::to_string(n) + ")");
  }
  const bool use_tree =
      search == NeighborSearch::kd_tree ||
      (search == NeighborSearch::automatic && s.d() <= kKdTreeMaxDim);

  KnnDistances out{Eigen::VectorXd(Eigen::Index(n)), std::vector<std::size_t>(n)};
  std::optional<KdTree> tree;
  if (use_tree) tree.emplace(s.values());
  for (std::size_t i = 0; i < n; ++i) {
    const double* q = s.values().row(Eigen::Index(i)).data();
    const auto nb = use_tree ? tree->nearest(q, std::size_t(k), i)
                             : brute_force_nearest(s.values(), q, std::size_t(k), i);
    out.distance[Eigen::Index(i)] = std::sqrt(nb.back().dist2);
    out.neighbor[i] = nb.back().index;
  }
  return out;
}

namespace {

struct KnnFit {
  double value;
  KnnDistances nn;
};

KnnFit fit_knn(const RowMatrix& x, const KnnOptions& opts) {
  const SampleMatrix s(x);
  auto nn = knn_distances(s, opts.k, opts.search);
  std::vector<std::size_t> zero_rows;
  for (std::size_t i = 0; i < s.n(); ++i) {
    if (nn.distance[Eigen::Index(i)] == 0.0) zero_rows.push_back(i);
  }
  if (!zero_rows.empty()) throw DegenerateSampleError(std::move(zero_rows));

  const double n = double(s.n());
  const int d = int(s.d());
  double log_sum = 0.0;
  for (Eigen::Index i = 0; i < nn.distance.size(); ++i) {
    log_sum += std::log(nn.distance[i]);
  }
  const double h = -digamma(double(opts.k)) + digamma(n) +
                   log_unit_ball_volume<double>(d) + double(d) / n * log_sum;
  return {h, std::move(nn)};
}

RowMatrix jittered(const RowMatrix& x, std::uint64_t seed) {
  Rng rng = Rng::stream(seed, "knn-jitter");
  RowMatrix y = x;
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    for (Eigen::Index j = 0; j < y.cols(); ++j) {
      y(i, j) += kJitterMagnitude * (2.0 * rng.uniform01() - 1.0);
    }
  }
  return y;
}

KnnFit fit_knn_with_policy(const RowMatrix& x, const KnnOptions& opts) {
  if (!opts.jitter) return fit_knn(x, opts);
  try {
    return fit_knn(x, opts);
  } catch (const DegenerateSampleError&) {
    return fit_knn(jittered(x, opts.jitter_seed), opts);
  }
}

RowMatrix frozen_gradient(const RowMatrix& x, const KnnDistances& nn) {
  const auto n = x.rows();
  const double scale = double(x.cols()) / double(n);
  RowMatrix g = RowMatrix::Zero(n, x.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto j = Eigen::Index(nn.neighbor[std::size_t(i)]);
    const double r = nn.distance[i];
    const Eigen::RowVectorXd contrib = scale * (x.row(i) - x.row(j)) / (r * r);
    g.row(i) += contrib;
    g.row(j) -= contrib;
  }
  return g;
}

struct GaussianFit {
  double value;
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd var;
};

GaussianFit fit_gaussian(const RowMatrix& x) {
  const double n = double(x.rows());
  Eigen::RowVectorXd mean = x.colwise().sum() / n;
  Eigen::RowVectorXd var = (x.rowwise() - mean).array().square().colwise().sum() / n;
  const double c = std::log(2.0 * std::numbers::pi * std::numbers::e);
  double h = 0.0;
  for (Eigen::Index j = 0; j < var.size(); ++j) {
    h += 0.5 * (c + std::log(std::max(var[j], kVarianceFloor)));
  }
  return {h, std::move(mean), std::move(var)};
}

}  // namespace

EntropyEstimate knn_entropy(const SampleMatrix& s, const KnnOptions& opts) {
  return {fit_knn_with_policy(s.values(), opts).value, Estimator::knn, opts.k};
}

RowMatrix knn_entropy_grad(const SampleMatrix& s, const KnnOptions& opts) {
  const auto fit = fit_knn_with_policy(s.values(), opts);
  return frozen_gradient(s.values(), fit.nn);
}

EntropyEstimate gaussian_proxy_entropy(const SampleMatrix& s) {
  return {fit_gaussian(s.values()).value, Estimator::gaussian_diag, 0};
}

Var knn_entropy(const Var& samples, const KnnOptions& opts) {
  const auto& v = samples.value();
  if (v.rank() != 2) {
    throw DimensionError("knn_entropy expects an n x d tensor, got " +
                         shape_string(v.shape()));
  }
  RowMatrix x = v.matrix();
  auto fit = fit_knn_with_policy(x, opts);
  const auto id = samples.id();
  return samples.tape()->record(
      Tensor::scalar(fit.value), {id},
      [id, x = std::move(x), nn = std::move(fit.nn)](Tape& t,
                                                     const Eigen::VectorXd& g) {
        RowMatrix grad = frozen_gradient(x, nn);
        grad *= g[0];
        t.accumulate(id, Eigen::Map<const Eigen::VectorXd>(grad.data(), grad.size()));
      },
      "knn_entropy");
}

Var gaussian_proxy_entropy(const Var& samples) {
  const auto& v = samples.value();
  if (v.rank() != 2) {
    throw DimensionError("gaussian_proxy_entropy expects an n x d tensor, got " +
                         shape_string(v.shape()));
  }
  RowMatrix x = v.matrix();
  SampleMatrix check(x);
  auto fit = fit_gaussian(x);
  const auto id = samples.id();
  return samples.tape()->record(
      Tensor::scalar(fit.value), {id},
      [id, x = std::move(x), fit = std::move(fit)](Tape& t,
                                                   const Eigen::VectorXd& g) {
        const double n = double(x.rows());
        RowMatrix grad = x.rowwise() - fit.mean;
        for (Eigen::Index j = 0; j < grad.cols(); ++j) {
          if (fit.var[j] > kVarianceFloor) {
            grad.col(j) *= g[0] / (n * fit.var[j]);
          } else {
            grad.col(j).setZero();
          }
        }
        t.accumulate(id, Eigen::Map<const Eigen::VectorXd>(grad.data(), grad.size()));
      },
      "gaussian_proxy_entropy");
}

}  // namespace eloss
