#include "eloss/errors.hpp"
#include "eloss/regularizer.hpp"
#include "helpers.hpp"

#include <doctest.h>

#include <array>
#include <cmath>

using namespace eloss;
using eloss::test::max_fd_error;
using eloss::test::normal_matrix;
using eloss::test::random_matrix;

namespace {

std::vector<double> dv(std::initializer_list<double> v) { return v; }

}  // namespace

TEST_SUITE("eloss_regularizer") {

TEST_CASE("entropy drops") {
  CHECK(entropy_drops(dv({3, 2, 1})) == dv({-1, -1}));
  const auto d = entropy_drops(dv({1.0, 0.4, 0.1}));
  REQUIRE(d.size() == 2);
  CHECK(d[0] == doctest::Approx(-0.6).epsilon(1e-15));
  CHECK(d[1] == doctest::Approx(-0.3).epsilon(1e-15));
  CHECK_THROWS_AS(entropy_drops(dv({5})), DomainError);
  const auto t = EntropyTrajectory::from_entropies(1, dv({4, 2.5, 1.75}));
  CHECK(t.drops.size() == 2);
  CHECK(t.consistent());
  auto broken = t;
  broken.drops[0] += 1e-15;
  CHECK_FALSE(broken.consistent());
}

TEST_CASE("variance penalty") {
  CHECK(variance_penalty(dv({-1, -1, -1})) == 0.0);
  CHECK(variance_penalty(dv({1, 2, 3})) == 2.0 / 3.0);
  CHECK(variance_penalty(dv({-0.5})) == 0.0);
  CHECK_THROWS_AS(variance_penalty(std::span<const double>{}), DomainError);
  CHECK(variance_penalty(Eigen::Vector3d(1, 2, 3)) == 2.0 / 3.0);
}

TEST_CASE("block divergence") {
  CHECK(block_divergence(0.5, 1.0) == 0.5);
  CHECK(block_divergence(7.0, 0.0) == 0.0);
  CHECK(block_divergence(0.3, 2.0) == doctest::Approx(0.6).epsilon(1e-15));
  CHECK_THROWS_AS(block_divergence(0.3, -1.0), ConfigError);
}

TEST_CASE("eloss total") {
  const auto b = eloss_total(dv({0.2, 0.3}), 1.0, {true, true});
  CHECK(b.total == doctest::Approx(0.5).epsilon(1e-15));
  const auto off = eloss_total(dv({0.2, 0.3}), 1.0, {false, false});
  CHECK(off.total == 0.0);
  CHECK(off.blocks[0].penalty == 0.2);
  CHECK(off.blocks[1].penalty == 0.3);
  CHECK(off.blocks[1].divergence == 0.3);
  CHECK(eloss_total({}, 1.0, {}).total == 0.0);
  CHECK_THROWS_AS(eloss_total(dv({0.2, 0.3}), 1.0, {true}), ConfigError);
  const auto two = eloss_total(dv({0.2, 0.3}), 2.0, {true, false});
  for (const auto& t : two.blocks) CHECK(t.divergence == 2.0 * t.penalty);
  CHECK(two.total == 0.4);
  CHECK(two.metric() == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(two.mean_penalty() == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("penalty properties on random inputs") {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> h(3 + rng.below(6));
    for (auto& v : h) v = 10 * rng.normal();
    const auto drops = entropy_drops(h);
    const double l = variance_penalty(drops);
    CHECK(l >= 0.0);
    // Shifting every entropy leaves the drops and penalty unchanged.
    auto shifted = h;
    for (auto& v : shifted) v += 3.25;
    CHECK(variance_penalty(entropy_drops(shifted)) == doctest::Approx(l).epsilon(1e-12));
    // Shifting every drop leaves the variance unchanged.
    auto d2 = drops;
    for (auto& v : d2) v -= 1.5;
    CHECK(variance_penalty(d2) == doctest::Approx(l).epsilon(1e-12).scale(1e-12));
    // Equal drops give exactly zero.
    const double step = rng.normal();
    std::vector<double> eq(drops.size(), step);
    CHECK(variance_penalty(eq) == 0.0);
  }
  // Zero only when all drops are equal.
  CHECK(variance_penalty(dv({1, 1, 1 + 1e-9})) > 0.0);
}

TEST_CASE("block additivity over disjoint masks") {
  const auto p = dv({0.25, 1.5, 0.125, 3.0});
  const auto a = eloss_total(p, 1.5, {true, false, true, false});
  const auto b = eloss_total(p, 1.5, {false, true, false, false});
  const auto ab = eloss_total(p, 1.5, {true, true, true, false});
  CHECK(ab.total == doctest::Approx(a.total + b.total).epsilon(1e-15));
}

TEST_CASE("captures pipeline: constant and analytic trajectories") {
  Tape tape;
  const RowMatrix base = normal_matrix(64, 3, 1);
  std::vector<std::vector<Var>> caps(1);
  for (int n = 0; n < 4; ++n) caps[0].push_back(tape.leaf(Tensor::from_matrix(base)));
  const auto r = eloss_from_captures(caps, {});
  CHECK(r.breakdown.blocks[0].penalty == 0.0);
  CHECK(r.total.value().item() == 0.0);

  // Successive layers scaled by e^{-1/2}: variances e^2, e^1, e^0, e^-1.
  std::vector<std::vector<SampleMatrix>> scaled(1);
  const RowMatrix z = normal_matrix(2000, 1, 2);
  for (int n = 0; n < 4; ++n) scaled[0].emplace_back(z * std::exp(1.0 - 0.5 * n));
  const auto rs = eloss_from_samples(scaled, {});
  for (double d : rs.trajectories[0].drops) CHECK(d == doctest::Approx(-0.5).epsilon(1e-12));
  CHECK(rs.breakdown.blocks[0].penalty <= 1e-24);

  // Independent draws at those variances: drops near -0.5, L_b within noise.
  std::vector<std::vector<SampleMatrix>> indep(1);
  for (int n = 0; n < 4; ++n) {
    indep[0].emplace_back(normal_matrix(4000, 1, 10 + std::uint64_t(n)) * std::exp(1.0 - 0.5 * n));
  }
  const auto ri = eloss_from_samples(indep, {});
  for (double d : ri.trajectories[0].drops) CHECK(std::abs(d + 0.5) <= 0.1);
  CHECK(ri.breakdown.blocks[0].penalty <= 0.005);
}

TEST_CASE("gradient of the total through the whole chain") {
  for (Estimator est : {Estimator::knn, Estimator::gaussian_diag}) {
    const RowMatrix x0 = random_matrix(24, 3, 3);
    const RowMatrix x1 = random_matrix(24, 3, 4) * 0.7;
    const RowMatrix x2 = random_matrix(24, 3, 5) * 0.3;
    Eigen::VectorXd packed(3 * x0.size());
    packed << Eigen::Map<const Eigen::VectorXd>(x0.data(), x0.size()),
        Eigen::Map<const Eigen::VectorXd>(x1.data(), x1.size()),
        Eigen::Map<const Eigen::VectorXd>(x2.data(), x2.size());
    ElossOptions eo;
    eo.lambda = 1.5;
    eo.estimator = est;
    auto eval = [&](const Eigen::VectorXd& p, Eigen::VectorXd* grad) {
      Tape t;
      std::vector<std::vector<Var>> caps(1);
      for (int n = 0; n < 3; ++n) {
        caps[0].push_back(t.leaf(Tensor({24, 3}, p.segment(n * 72, 72))));
      }
      const auto r = eloss_from_captures(caps, eo);
      if (grad) {
        t.backward(r.total);
        grad->resize(p.size());
        for (int n = 0; n < 3; ++n) grad->segment(n * 72, 72) = caps[0][std::size_t(n)].grad().data();
      }
      return r.total.value().item();
    };
    Eigen::VectorXd g;
    eval(packed, &g);
    CHECK(max_fd_error([&](const Eigen::VectorXd& p) { return eval(p, nullptr); }, packed, g,
                       1e-6) <= 1e-3);
  }
}

TEST_CASE("gradients reach enabled blocks only") {
  Tape tape;
  std::vector<std::vector<Var>> caps(2);
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::uint64_t n = 0; n < 3; ++n) {
      caps[b].push_back(tape.leaf(Tensor::from_matrix(random_matrix(16, 2, 10 * b + n))));
    }
  }
  ElossOptions eo;
  eo.mask = {false, true};
  const auto r = eloss_from_captures(caps, eo);
  REQUIRE(r.breakdown.blocks.size() == 2);
  CHECK_FALSE(r.breakdown.blocks[0].enabled);
  CHECK(r.breakdown.blocks[0].penalty > 0.0);
  CHECK(r.breakdown.total == r.breakdown.blocks[1].divergence);
  tape.backward(r.total);
  for (const auto& v : caps[0]) CHECK(v.grad().data().isZero(0.0));
  double mass = 0.0;
  for (const auto& v : caps[1]) mass += v.grad().data().cwiseAbs().sum();
  CHECK(mass > 0.0);

  // Training mode skips disabled blocks entirely.
  eo.metric_for_disabled = false;
  const auto lean = eloss_from_captures(caps, eo);
  CHECK(lean.breakdown.blocks.size() == 1);
  CHECK(lean.breakdown.blocks[0].block == 1);
}

TEST_CASE("degenerate samples are reported with block and layer") {
  Tape tape;
  std::vector<std::vector<Var>> caps(2);
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::uint64_t n = 0; n < 3; ++n) {
      RowMatrix m = random_matrix(8, 2, 20 * b + n);
      if (b == 1 && n == 2) m.row(5) = m.row(3);
      caps[b].push_back(tape.leaf(Tensor::from_matrix(m)));
    }
  }
  try {
    eloss_from_captures(caps, {});
    FAIL("expected DegenerateSampleError");
  } catch (const DegenerateSampleError& e) {
    CHECK(e.block() == 1);
    CHECK(e.layer() == 2);
    CHECK(e.rows() == std::vector<std::size_t>{3, 5});
  }
}

TEST_CASE("underdetermined blocks and configuration errors") {
  std::vector<std::vector<SampleMatrix>> caps(1);
  caps[0].emplace_back(random_matrix(10, 2, 1));
  caps[0].emplace_back(random_matrix(10, 2, 2));
  const auto r = eloss_from_samples(caps, {});
  CHECK(r.breakdown.blocks[0].underdetermined);
  CHECK(r.breakdown.blocks[0].penalty == 0.0);

  caps[0].emplace_back(random_matrix(10, 2, 3));
  CHECK_FALSE(eloss_from_samples(caps, {}).breakdown.blocks[0].underdetermined);
  ElossOptions bad;
  bad.mask = {true, true};
  CHECK_THROWS_AS(eloss_from_samples(caps, bad), ConfigError);
  ElossOptions neg;
  neg.lambda = -0.1;
  CHECK_THROWS_AS(eloss_from_samples(caps, neg), ConfigError);
  std::vector<std::vector<SampleMatrix>> shallow(1);
  shallow[0].emplace_back(random_matrix(10, 2, 1));
  CHECK_THROWS_AS(eloss_from_samples(shallow, {}), DomainError);
}

TEST_CASE("taped and detached pipelines agree") {
  Tape tape;
  std::vector<std::vector<Var>> caps(2);
  std::vector<std::vector<SampleMatrix>> plain(2);
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::uint64_t n = 0; n < 4; ++n) {
      const RowMatrix m = random_matrix(32, 4, 40 * b + n);
      caps[b].push_back(tape.leaf(Tensor::from_matrix(m)));
      plain[b].emplace_back(m);
    }
  }
  const auto a = eloss_from_captures(caps, {});
  const auto b = eloss_from_samples(plain, {});
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(a.trajectories[i].entropies == b.trajectories[i].entropies);
    CHECK(a.breakdown.blocks[i].penalty == doctest::Approx(b.breakdown.blocks[i].penalty).epsilon(1e-12));
  }
  CHECK(a.total.value().item() == doctest::Approx(b.breakdown.total).epsilon(1e-12));
}

}
