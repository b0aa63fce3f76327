#include "eloss/entropy.hpp"
#include "eloss/errors.hpp"
#include "eloss/kdtree.hpp"
#include "eloss/special.hpp"
#include "helpers.hpp"

#include <doctest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

using namespace eloss;
using eloss::test::max_fd_error;
using eloss::test::normal_matrix;
using eloss::test::random_matrix;

namespace {

const double kHalfLog2PiE = 0.5 * std::log(2 * std::numbers::pi * std::numbers::e);

SampleMatrix column(std::initializer_list<double> v) {
  RowMatrix m(Eigen::Index(v.size()), 1);
  Eigen::Index i = 0;
  for (double x : v) m(i++, 0) = x;
  return SampleMatrix(m);
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

TEST_SUITE("entropy_estimation") {

TEST_CASE("unit ball volume") {
  CHECK(unit_ball_volume(1) == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(unit_ball_volume(2) == doctest::Approx(std::numbers::pi).epsilon(1e-15));
  CHECK(unit_ball_volume(3) == doctest::Approx(4 * std::numbers::pi / 3).epsilon(1e-15));
  CHECK(std::isfinite(log_unit_ball_volume(2000)));
  CHECK_THROWS_AS(unit_ball_volume(0), DomainError);
}

TEST_CASE("digamma against high-precision reference") {
  // mpmath at 30 digits.
  const std::array<std::pair<double, double>, 12> ref{{
      {0.001, -1000.5755719318103005},
      {0.01, -100.5608854578686745},
      {0.1, -10.423754940411076795},
      {0.5, -1.9635100260214234794},
      {1.0, -0.57721566490153286061},
      {1.5, 0.036489973978576520559},
      {2.0, 0.42278433509846713939},
      {3.7, 1.1671535393615113859},
      {10.0, 2.2517525890667211076},
      {123.456, 4.8118293238289853873},
      {1e4, 9.2102903711428494036},
      {1e6, 13.815510057964190771},
  }};
  for (auto [x, psi] : ref) {
    CAPTURE(x);
    CHECK(std::abs(digamma(x) - psi) <= 1e-10);
  }
  CHECK(digamma(1.0) == doctest::Approx(-0.5772156649).epsilon(1e-10));
  CHECK(digamma(2.0) == doctest::Approx(1 - 0.5772156649015329).epsilon(1e-12));
  CHECK(digamma(0.5) ==
        doctest::Approx(-0.5772156649015329 - 2 * std::numbers::ln2).epsilon(1e-12));
  CHECK_THROWS_AS(digamma(0.0), DomainError);
  CHECK_THROWS_AS(digamma(-1.0), DomainError);
  CHECK_THROWS_AS(digamma(std::numeric_limits<double>::infinity()), DomainError);
}

TEST_CASE("digamma recurrence holds across the shift boundary") {
  for (double x = 0.05; x < 30.0; x += 0.37) {
    CAPTURE(x);
    CHECK(std::abs(digamma(x + 1) - digamma(x) - 1 / x) <= 1e-12 * std::max(1.0, 1 / x));
  }
}

TEST_CASE("features_to_samples") {
  const auto s1 = features_to_samples(Tensor::zeros({4, 2, 3}));
  CHECK(s1.n() == 4);
  CHECK(s1.d() == 6);
  const auto s2 = features_to_samples(Tensor::zeros({10, 16}), SampleAxis::positions_as_samples);
  CHECK(s2.n() == 10);
  CHECK(s2.d() == 16);
  const auto s3 = features_to_samples(Tensor::zeros({2, 5, 3}), SampleAxis::positions_as_samples);
  CHECK(s3.n() == 10);
  CHECK(s3.d() == 3);
  CHECK_THROWS_AS(features_to_samples(Tensor::zeros({1, 8})), InsufficientSamplesError);
  CHECK_THROWS_AS(features_to_samples(Tensor::zeros({8})), DimensionError);
  // Row-major layout is preserved: sample i is the i-th contiguous chunk.
  Eigen::VectorXd d = Eigen::VectorXd::LinSpaced(12, 0, 11);
  const auto s4 = features_to_samples(Tensor({3, 2, 2}, d));
  CHECK(s4.values()(1, 0) == 4.0);
  CHECK(s4.values()(2, 3) == 11.0);
}

TEST_CASE("sample matrix invariants") {
  CHECK_THROWS_AS(SampleMatrix(RowMatrix::Zero(1, 3)), InsufficientSamplesError);
  CHECK_THROWS_AS(SampleMatrix(RowMatrix::Zero(3, 0)), DimensionError);
  RowMatrix bad = RowMatrix::Zero(3, 2);
  bad(1, 1) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(SampleMatrix{bad}, NonFiniteError);
}

TEST_CASE("knn distances") {
  const auto s = column({0, 1, 3});
  const auto r1 = knn_distances(s, 1);
  CHECK(r1.distance == Eigen::Vector3d(1, 1, 2));
  CHECK(r1.neighbor == std::vector<std::size_t>{1, 0, 1});
  CHECK(knn_distances(s, 2).distance == Eigen::Vector3d(3, 2, 3));
  CHECK(knn_distances(column({0, 0}), 1).distance == Eigen::Vector2d(0, 0));
  CHECK_THROWS_AS(knn_distances(s, 3), DomainError);
  CHECK_THROWS_AS(knn_distances(s, 0), DomainError);
  // Equidistant neighbours resolve to the lower index.
  CHECK(knn_distances(column({-1, 0, 1}), 1).neighbor[1] == 0);
}

TEST_CASE("kd tree equals the exhaustive scan") {
  for (std::uint64_t seed = 0; seed < 60; ++seed) {
    const auto n = Eigen::Index(2 + seed * 4);  // 2 .. 238
    const auto d = Eigen::Index(1 + seed % 6);
    // Half the instances sit on a coarse integer grid to force distance ties.
    RowMatrix x = random_matrix(n, d, seed, -3, 3);
    if (seed % 2) x = x.array().round();
    for (int k : {1, 2, 5}) {
      if (k >= n) continue;
      CAPTURE(seed);
      CAPTURE(k);
      const SampleMatrix s(x);
      const auto a = knn_distances(s, k, NeighborSearch::kd_tree);
      const auto b = knn_distances(s, k, NeighborSearch::brute_force);
      CHECK(a.distance == b.distance);
      CHECK(a.neighbor == b.neighbor);
    }
    const KdTree tree(x, 3);
    const RowMatrix q = random_matrix(5, d, seed + 1000, -3, 3);
    for (Eigen::Index i = 0; i < q.rows(); ++i) {
      const auto kk = std::min<std::size_t>(4, std::size_t(n));
      CHECK(tree.nearest(q.row(i).data(), kk) == brute_force_nearest(x, q.row(i).data(), kk));
    }
  }
}

TEST_CASE("high-dimensional samples use the exhaustive scan with identical results") {
  const SampleMatrix s(random_matrix(120, 24, 9));
  const auto a = knn_distances(s, 1, NeighborSearch::automatic);
  const auto b = knn_distances(s, 1, NeighborSearch::kd_tree);
  CHECK(a.distance == b.distance);
  CHECK(a.neighbor == b.neighbor);
}

TEST_CASE("knn entropy reference values") {
  // numpy/scipy re-implementation of the estimator.
  RowMatrix pts(7, 2);
  pts << 0.0, 0.0, 1.0, 0.5, 0.25, 2.0, -1.5, 0.75, 2.0, -1.0, 0.5, -0.25, -0.75, -1.5;
  const SampleMatrix s(pts);
  CHECK(knn_entropy(s, {.k = 1}).value == doctest::Approx(3.8236376123826212).epsilon(1e-13));
  CHECK(knn_entropy(s, {.k = 2}).value == doctest::Approx(3.3790173052780332).epsilon(1e-13));
  CHECK(knn_entropy(s, {.k = 3}).value == doctest::Approx(3.463271949637213).epsilon(1e-13));
  CHECK(knn_entropy(column({0, 1, 3})).value == doctest::Approx(2.424196240746594).epsilon(1e-13));
  const auto e = knn_entropy(s, {.k = 2});
  CHECK(e.estimator == Estimator::knn);
  CHECK(e.k == 2);
}

TEST_CASE("knn entropy of uniform and normal samples") {
  Rng rng(11);
  RowMatrix u(10000, 1), g(10000, 1);
  for (Eigen::Index i = 0; i < u.rows(); ++i) {
    u(i, 0) = rng.uniform01();
    g(i, 0) = rng.normal();
  }
  CHECK(std::abs(knn_entropy(SampleMatrix(u)).value) <= 0.05);
  CHECK(std::abs(knn_entropy(SampleMatrix(g)).value - kHalfLog2PiE) <= 0.05);
}

TEST_CASE("coincident samples are a degenerate-sample error unless jitter is requested") {
  RowMatrix m(3, 2);
  m << 1, 2, 1, 2, 5, 5;
  try {
    knn_entropy(SampleMatrix(m));
    FAIL("expected DegenerateSampleError");
  } catch (const DegenerateSampleError& e) {
    CHECK(e.rows() == std::vector<std::size_t>{0, 1});
    CHECK(e.block() == -1);
  }
  CHECK_THROWS_AS(knn_entropy(column({4, 4})), DegenerateSampleError);
  KnnOptions j{.jitter = true, .jitter_seed = 3};
  const double a = knn_entropy(SampleMatrix(m), j).value;
  CHECK(std::isfinite(a));
  CHECK(knn_entropy(SampleMatrix(m), j).value == a);
}

TEST_CASE("knn entropy gradient") {
  const auto two = column({0, 1});
  const RowMatrix g2 = knn_entropy_grad(two);
  CHECK(g2(0, 0) == -1.0);
  CHECK(g2(1, 0) == 1.0);

  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    CAPTURE(seed);
    const RowMatrix x = random_matrix(40, 3, seed);
    const SampleMatrix s(x);
    for (int k : {1, 3}) {
      const RowMatrix g = knn_entropy_grad(s, {.k = k});
      // Translation invariance: the gradient sums to zero per coordinate.
      CHECK(g.colwise().sum().cwiseAbs().maxCoeff() <= 1e-12);
      const auto f = [&](const Eigen::VectorXd& p) {
        return knn_entropy(SampleMatrix(Eigen::Map<const RowMatrix>(p.data(), 40, 3)), {.k = k})
            .value;
      };
      const Eigen::VectorXd flat = Eigen::Map<const Eigen::VectorXd>(x.data(), x.size());
      const Eigen::VectorXd gf = Eigen::Map<const Eigen::VectorXd>(g.data(), g.size());
      CHECK(max_fd_error(f, flat, gf, 1e-6) <= 1e-4);
    }
  }
}

TEST_CASE("scaling identity and translation invariance") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const RowMatrix x = random_matrix(200, 3, seed);
    const double h = knn_entropy(SampleMatrix(x)).value;
    for (double c : {0.5, 2.0, 10.0}) {
      CAPTURE(c);
      const double hc = knn_entropy(SampleMatrix(c * x)).value;
      CHECK(std::abs(hc - h - 3 * std::log(c)) <= 1e-9);
    }
    // Dyadic data and shift: coordinate differences are exact, so the
    // estimate is bit-identical.
    const RowMatrix dy = (x * 64).array().round() / 64;
    const double hd = knn_entropy(SampleMatrix(dy)).value;
    CHECK(knn_entropy(SampleMatrix(dy.array() + 0.75)).value == hd);
    // A general shift rounds coordinates, so only near-equality holds.
    CHECK(std::abs(knn_entropy(SampleMatrix(x.array() + 0.3217)).value - h) <= 1e-9);
  }
}

TEST_CASE("gaussian proxy entropy") {
  CHECK(gaussian_proxy_entropy(column({-1, 1, -1, 1})).value ==
        doctest::Approx(kHalfLog2PiE).epsilon(1e-15));
  RowMatrix two(4, 2);
  two << -1, 1, 1, -1, -1, -1, 1, 1;
  CHECK(gaussian_proxy_entropy(SampleMatrix(two)).value ==
        doctest::Approx(2 * kHalfLog2PiE).epsilon(1e-15));
  RowMatrix flat(4, 2);
  flat << 1, 2, 2, 2, 3, 2, 4, 2;
  const auto e = gaussian_proxy_entropy(SampleMatrix(flat));
  CHECK(e.value == doctest::Approx(-10.866061715897825).epsilon(1e-14));
  CHECK(e.estimator == Estimator::gaussian_diag);
  const double floor_value = 0.5 * std::log(2 * std::numbers::pi * std::numbers::e * kVarianceFloor);
  CHECK(gaussian_proxy_entropy(SampleMatrix(RowMatrix::Constant(5, 1, 3.0))).value ==
        doctest::Approx(floor_value).epsilon(1e-15));

  const RowMatrix x = random_matrix(50, 4, 5);
  RowMatrix rev = x.colwise().reverse();
  CHECK(gaussian_proxy_entropy(SampleMatrix(rev)).value ==
        doctest::Approx(gaussian_proxy_entropy(SampleMatrix(x)).value).epsilon(1e-14));
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    CHECK(gaussian_proxy_entropy(SampleMatrix(random_matrix(10, 3, seed))).value >= 3 * floor_value);
  }
}

TEST_CASE("tape estimators agree with the detached ones") {
  const RowMatrix x = random_matrix(30, 4, 21);
  Tape tape;
  auto v = tape.leaf(Tensor::from_matrix(x));
  auto h = knn_entropy(v, {.k = 2});
  CHECK(h.value().item() == knn_entropy(SampleMatrix(x), {.k = 2}).value);
  tape.backward(h);
  const RowMatrix g = knn_entropy_grad(SampleMatrix(x), {.k = 2});
  CHECK(v.grad().data() == Eigen::Map<const Eigen::VectorXd>(g.data(), g.size()));

  Tape t2;
  auto w = t2.leaf(Tensor::from_matrix(x));
  auto hg = gaussian_proxy_entropy(w);
  CHECK(hg.value().item() == doctest::Approx(gaussian_proxy_entropy(SampleMatrix(x)).value).epsilon(1e-14));
  t2.backward(hg);
  const auto f = [&](const Eigen::VectorXd& p) {
    return gaussian_proxy_entropy(SampleMatrix(Eigen::Map<const RowMatrix>(p.data(), 30, 4))).value;
  };
  CHECK(max_fd_error(f, Eigen::Map<const Eigen::VectorXd>(x.data(), x.size()), w.grad().data(), 1e-6) <= 1e-6);
}

TEST_CASE("estimator error shrinks as the sample count doubles") {
  // d = 2 standard normal; 20 seeds per size.
  const double truth = 2 * kHalfLog2PiE;
  double previous = std::numeric_limits<double>::infinity();
  for (Eigen::Index n : {500, 1000, 2000, 4000, 8000}) {
    std::vector<double> err;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      err.push_back(std::abs(
          knn_entropy(SampleMatrix(normal_matrix(n, 2, 1000 * std::uint64_t(n) + seed))).value - truth));
    }
    const double m = median(err);
    CAPTURE(n);
    CHECK(m <= previous);
    previous = m;
  }
}

TEST_CASE("estimates are deterministic") {
  const RowMatrix x = random_matrix(500, 5, 77);
  CHECK(knn_entropy(SampleMatrix(x)).value == knn_entropy(SampleMatrix(x)).value);
}

}
