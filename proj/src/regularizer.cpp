#include "eloss/regularizer.hpp"

#include "eloss/errors.hpp"

#include <numeric>

namespace eloss {

std::vector<double> entropy_drops(std::span<const double> entropies) {
  if (entropies.size() < 2) {
    throw DomainError("entropy drops need at least 2 entropies, got " +
                      std::to_string(entropies.size()));
  }
  std::vector<double> drops(entropies.size() - 1);
  for (std::size_t i = 0; i + 1 < entropies.size(); ++i) {
    drops[i] = entropies[i + 1] - entropies[i];
  }
  return drops;
}

EntropyTrajectory EntropyTrajectory::from_entropies(int block,
                                                    std::vector<double> entropies) {
  EntropyTrajectory t;
  t.block = block;
  t.drops = entropy_drops(entropies);
  t.entropies = std::move(entropies);
  return t;
}

bool EntropyTrajectory::consistent() const {
  if (entropies.size() < 2 || drops.size() != entropies.size() - 1) return false;
  return entropy_drops(entropies) == drops;
}

double variance_penalty(std::span<const double> drops) {
  return variance_penalty(
      Eigen::Map<const Eigen::VectorXd>(drops.data(), Eigen::Index(drops.size())));
}

double block_divergence(double penalty, double lambda) {
  if (!(lambda >= 0.0)) {
    throw ConfigError("lambda must be non-negative, got " + std::to_string(lambda));
  }
  return lambda * penalty;
}

double ElossBreakdown::metric() const {
  double s = 0.0;
  for (const auto& b : blocks) s += b.penalty;
  return s;
}

double ElossBreakdown::mean_penalty() const {
  return blocks.empty() ? 0.0 : metric() / double(blocks.size());
}

ElossBreakdown eloss_total(std::span<const double> penalties, double lambda,
                           const std::vector<bool>& mask) {
  if (mask.size() != penalties.size()) {
    throw ConfigError("mask has " + std::to_string(mask.size()) +
                      " entries for " + std::to_string(penalties.size()) + " blocks");
  }
  ElossBreakdown out;
  out.lambda = lambda;
  for (std::size_t b = 0; b < penalties.size(); ++b) {
    BlockTerm term;
    term.block = int(b);
    term.penalty = penalties[b];
    term.divergence = block_divergence(penalties[b], lambda);
    term.enabled = mask[b];
    if (term.enabled) out.total += term.divergence;
    out.blocks.push_back(term);
  }
  if (penalties.empty()) block_divergence(0.0, lambda);
  return out;
}

namespace {

std::vector<bool> resolve_mask(const ElossOptions& opts, std::size_t blocks) {
  if (opts.mask.empty()) return std::vector<bool>(blocks, true);
  if (opts.mask.size() != blocks) {
    throw ConfigError("mask has " + std::to_string(opts.mask.size()) +
                      " entries for " + std::to_string(blocks) + " blocks");
  }
  return opts.mask;
}

void check_depth(std::size_t layers, std::size_t block) {
  if (layers < 2) {
    throw DomainError("block " + std::to_string(block) + " has " +
                      std::to_string(layers) + " captured layer(s); need >= 2");
  }
}

double detached_entropy(const SampleMatrix& s, const ElossOptions& opts) {
  return opts.estimator == Estimator::knn ? knn_entropy(s, opts.knn).value
                                          : gaussian_proxy_entropy(s).value;
}

template <typename Fn>
auto with_coordinates(std::size_t block, std::size_t layer, Fn&& fn) {
  try {
    return fn();
  } catch (const DegenerateSampleError& e) {
    throw e.at(int(block), int(layer));
  }
}

}  // namespace

ElossResult eloss_from_captures(const std::vector<std::vector<Var>>& captures,
                                const ElossOptions& opts) {
  block_divergence(0.0, opts.lambda);
  const auto mask = resolve_mask(opts, captures.size());
  ElossResult out;
  std::vector<double> penalties;
  std::vector<bool> computed_mask;

  for (std::size_t b = 0; b < captures.size(); ++b) {
    const auto& layers = captures[b];
    check_depth(layers.size(), b);
    std::vector<double> h(layers.size());

    if (mask[b]) {
      std::vector<Var> hv;
      hv.reserve(layers.size());
      for (std::size_t n = 0; n < layers.size(); ++n) {
        hv.push_back(with_coordinates(b, n, [&] {
          return opts.estimator == Estimator::knn
                     ? knn_entropy(layers[n], opts.knn)
                     : gaussian_proxy_entropy(layers[n]);
        }));
        h[n] = hv.back().value().item();
      }
      const Var stacked = stack(hv);
      const std::size_t len = layers.size();
      const Var drops = sub(slice(stacked, 1, len), slice(stacked, 0, len - 1));
      const Var penalty = var_population(drops);
      const Var divergence = scale(penalty, opts.lambda);
      out.total = out.total.valid() ? add(out.total, divergence) : divergence;
      penalties.push_back(penalty.value().item());
    } else if (opts.metric_for_disabled) {
      for (std::size_t n = 0; n < layers.size(); ++n) {
        h[n] = with_coordinates(b, n, [&] {
          return detached_entropy(SampleMatrix(layers[n].value().matrix()), opts);
        });
      }
      penalties.push_back(variance_penalty(entropy_drops(h)));
    } else {
      continue;
    }
    computed_mask.push_back(mask[b]);
    out.trajectories.push_back(EntropyTrajectory::from_entropies(int(b), std::move(h)));
  }

  out.breakdown = eloss_total(penalties, opts.lambda, computed_mask);
  for (std::size_t i = 0; i < out.trajectories.size(); ++i) {
    auto& term = out.breakdown.blocks[i];
    term.block = out.trajectories[i].block;
    term.underdetermined = out.trajectories[i].drops.size() < 2;
  }
  return out;
}

ElossResult eloss_from_samples(const std::vector<std::vector<SampleMatrix>>& captures,
                               const ElossOptions& opts) {
  block_divergence(0.0, opts.lambda);
  const auto mask = resolve_mask(opts, captures.size());
  ElossResult out;
  std::vector<double> penalties;
  for (std::size_t b = 0; b < captures.size(); ++b) {
    check_depth(captures[b].size(), b);
    std::vector<double> h(captures[b].size());
    for (std::size_t n = 0; n < h.size(); ++n) {
      h[n] = with_coordinates(b, n, [&] { return detached_entropy(captures[b][n], opts); });
    }
    penalties.push_back(variance_penalty(entropy_drops(h)));
    out.trajectories.push_back(EntropyTrajectory::from_entropies(int(b), std::move(h)));
  }
  out.breakdown = eloss_total(penalties, opts.lambda, mask);
  for (std::size_t b = 0; b < out.trajectories.size(); ++b) {
    out.breakdown.blocks[b].underdetermined = out.trajectories[b].drops.size() < 2;
  }
  return out;
}

}  // namespace eloss
