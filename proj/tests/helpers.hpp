#pragma once

#include "eloss/rng.hpp"
#include "eloss/tensor.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>

namespace eloss::test {

inline RowMatrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed,
                               double lo = -2.0, double hi = 2.0) {
  Rng rng(seed);
  RowMatrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = lo + (hi - lo) * rng.uniform01();
  return m;
}

inline RowMatrix normal_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  Rng rng(seed);
  RowMatrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

/// |a - b| / max(|a|, |b|), or the absolute gap when both are below `floor`.
inline double rel_err(double a, double b, double floor = 1e-10) {
  const double s = std::max(std::abs(a), std::abs(b));
  return s < floor ? std::abs(a - b) : std::abs(a - b) / s;
}

/// Largest relative error between `grad` and central differences of `f`.
inline double max_fd_error(const std::function<double(const Eigen::VectorXd&)>& f,
                           const Eigen::VectorXd& x, const Eigen::VectorXd& grad,
                           double step, double floor = 1e-10) {
  double worst = 0.0;
  Eigen::VectorXd p = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    p[i] = x[i] + step;
    const double up = f(p);
    p[i] = x[i] - step;
    const double down = f(p);
    p[i] = x[i];
    worst = std::max(worst, rel_err(grad[i], (up - down) / (2 * step), floor));
  }
  return worst;
}

/// Fresh empty directory under the build tree, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& name)
      : path_(std::filesystem::temp_directory_path() / ("eloss_test_" + name)) {
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace eloss::test
