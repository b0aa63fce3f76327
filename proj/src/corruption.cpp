#include "eloss/corruption.hpp"

#include <numeric>

namespace eloss {

void CorruptionConfig::validate() const {
  if (kind == CorruptionKind::gaussian && !(sigma > 0.0)) {
    throw ConfigError("gaussian noise needs sigma > 0");
  }
  if (kind == CorruptionKind::salt_pepper && !(fraction >= 0.0 && fraction <= 1.0)) {
    throw ConfigError("salt-pepper fraction must lie in [0, 1]");
  }
}

std::vector<SaltPepperHit> salt_pepper_plan(std::size_t count, double fraction,
                                            std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) {
    throw ConfigError("salt-pepper fraction must lie in [0, 1]");
  }
  const auto m = std::min(count, std::size_t(std::floor(fraction * double(count))));
  std::vector<std::size_t> slots(count);
  std::iota(slots.begin(), slots.end(), std::size_t{0});
  Rng rng = Rng::stream(seed, "salt-pepper");
  std::vector<SaltPepperHit> hits;
  hits.reserve(m);
  for (std::size_t i = 0; i < m; ++i) {
    const auto j = i + std::size_t(rng.below(count - i));
    std::swap(slots[i], slots[j]);
    hits.push_back({slots[i], (rng.next() >> 63) != 0});
  }
  return hits;
}

Tensor corrupt(const Tensor& data, const CorruptionConfig& config) {
  config.validate();
  const auto flat = Eigen::Map<const RowMatrix>(data.data().data(), 1,
                                                Eigen::Index(data.size()));
  RowMatrix out = config.kind == CorruptionKind::gaussian
                      ? gaussian_noise(flat, config.sigma, config.seed)
                      : salt_pepper(flat, config.fraction, config.seed);
  return Tensor(data.shape(), Eigen::Map<const Eigen::VectorXd>(out.data(), out.size()));
}

}  // namespace eloss
