#pragma once

#include "eloss/errors.hpp"
#include "eloss/rng.hpp"
#include "eloss/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <vector>

namespace eloss {

enum class CorruptionKind { gaussian, salt_pepper };

struct CorruptionConfig {
  CorruptionKind kind = CorruptionKind::gaussian;
  double fraction = 0.1;  // salt_pepper only
  double sigma = 1.0;     // gaussian only
  std::uint64_t seed = 0;

  void validate() const;
};

/// One salt-pepper replacement: flat row-major index and which extreme.
struct SaltPepperHit {
  std::size_t index;
  bool to_max;
};

/// Seeded selection of floor(fraction * count) distinct entries.
///
/// Stream: Rng::stream(seed, "salt-pepper"). For i = 0..m-1 a partial
/// Fisher-Yates step draws j = i + below(count - i), swaps slots i and j and
/// selects slot i; the next draw's top bit then picks max (1) or min (0).
std::vector<SaltPepperHit> salt_pepper_plan(std::size_t count, double fraction,
                                            std::uint64_t seed);

/// out = in + sigma * z, z ~ N(0, 1) from Rng::stream(seed, "gaussian-noise"),
/// drawn in row-major element order. The input is not modified.
template <typename Derived>
typename Derived::PlainObject gaussian_noise(const Eigen::DenseBase<Derived>& data,
                                             double sigma, std::uint64_t seed) {
  if (!(sigma > 0.0)) throw ConfigError("gaussian noise needs sigma > 0");
  typename Derived::PlainObject out = data;
  Rng rng = Rng::stream(seed, "gaussian-noise");
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    for (Eigen::Index j = 0; j < out.cols(); ++j) out(i, j) += sigma * rng.normal();
  }
  return out;
}

/// Replaces the planned entries with the global maximum or minimum of the
/// input, both taken before any replacement.
template <typename Derived>
typename Derived::PlainObject salt_pepper(const Eigen::DenseBase<Derived>& data,
                                          double fraction, std::uint64_t seed) {
  if (data.size() == 0) throw DomainError("salt-pepper noise on empty input");
  if (!(fraction >= 0.0 && fraction <= 1.0)) {
    throw ConfigError("salt-pepper fraction must lie in [0, 1]");
  }
  typename Derived::PlainObject out = data;
  const double hi = data.maxCoeff();
  const double lo = data.minCoeff();
  const auto cols = out.cols();
  for (const auto& hit : salt_pepper_plan(std::size_t(data.size()), fraction, seed)) {
    const auto r = Eigen::Index(hit.index) / cols;
    const auto c = Eigen::Index(hit.index) % cols;
    out(r, c) = hit.to_max ? hi : lo;
  }
  return out;
}

/// Applies the configured corruption to every element of a tensor,
/// preserving its shape.
Tensor corrupt(const Tensor& data, const CorruptionConfig& config);

}  // namespace eloss
