#pragma once

#include "eloss/entropy.hpp"
#include "eloss/errors.hpp"
#include "eloss/tensor.hpp"

#include <span>
#include <vector>

namespace eloss {

/// Per-layer entropies H_0..H_N of one block and the drops H_{n+1} - H_n.
struct EntropyTrajectory {
  int block = 0;
  std::vector<double> entropies;
  std::vector<double> drops;

  static EntropyTrajectory from_entropies(int block, std::vector<double> entropies);
  /// drops.size() == entropies.size() - 1 and each drop recomputes exactly.
  bool consistent() const;
};

std::vector<double> entropy_drops(std::span<const double> entropies);

/// Population variance (divisor N) of a block's entropy drops.
template <typename Derived>
double variance_penalty(const Eigen::DenseBase<Derived>& drops);
double variance_penalty(std::span<const double> drops);

/// lambda * L_b; rejects a negative lambda.
double block_divergence(double penalty, double lambda);

struct BlockTerm {
  int block = 0;
  double penalty = 0.0;     // L_b
  double divergence = 0.0;  // D_b = lambda * L_b
  bool enabled = true;      // counted in the total
  bool underdetermined = false;  // a single drop: L_b is zero by construction
};

struct ElossBreakdown {
  std::vector<BlockTerm> blocks;
  double lambda = 1.0;
  double total = 0.0;  // sum of D_b over enabled blocks

  /// Sum of L_b over all blocks regardless of mask or lambda; the quantity
  /// monitored as the post-hoc metric.
  double metric() const;
  double mean_penalty() const;
};

/// Assembles the breakdown from per-block penalties. Disabled blocks keep
/// their L_b and D_b but contribute nothing to the total.
ElossBreakdown eloss_total(std::span<const double> penalties, double lambda,
                           const std::vector<bool>& mask);

struct ElossOptions {
  double lambda = 1.0;
  std::vector<bool> mask;  // empty means every block enabled
  Estimator estimator = Estimator::knn;
  KnnOptions knn;
  /// Compute (detached) L_b for disabled blocks too. Training turns this off
  /// so a disabled block costs nothing.
  bool metric_for_disabled = true;
};

struct ElossResult {
  ElossBreakdown breakdown;
  std::vector<EntropyTrajectory> trajectories;
  Var total;  // on the tape; unbound when no block is enabled
};

/// Full pipeline captures -> entropies -> drops -> L_b -> D_b -> E_loss.
/// `captures[b][n]` is the n x d sample matrix of layer n in block b. Enabled
/// blocks are evaluated on the tape so gradients reach their activations;
/// disabled blocks are evaluated on detached values.
ElossResult eloss_from_captures(const std::vector<std::vector<Var>>& captures,
                                const ElossOptions& opts);

/// Detached variant over plain sample matrices.
ElossResult eloss_from_samples(const std::vector<std::vector<SampleMatrix>>& captures,
                               const ElossOptions& opts);

// ---------------------------------------------------------------------------

template <typename Derived>
double variance_penalty(const Eigen::DenseBase<Derived>& drops) {
  const auto n = drops.size();
  if (n == 0) throw DomainError("variance penalty of an empty drop list");
  // Centered on the first drop so equal drops give exactly zero.
  const double x0 = drops.derived().coeff(0);
  double mean = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) mean += drops.derived().coeff(i) - x0;
  mean /= double(n);
  double ss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double t = (drops.derived().coeff(i) - x0) - mean;
    ss += t * t;
  }
  return ss / double(n);
}

}  // namespace eloss
