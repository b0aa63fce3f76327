#include "eloss/encoder.hpp"
#include "eloss/errors.hpp"
#include "eloss/experiment.hpp"
#include "helpers.hpp"

#include <doctest.h>

#include <cmath>

using namespace eloss;
using eloss::test::max_fd_error;
using eloss::test::random_matrix;

namespace {

EncoderSpec small_spec() {
  EncoderSpec s;
  s.blocks = 2;
  s.layers_per_block = 3;
  s.widths = {6, 5};
  s.input_dim = 4;
  s.mask = {true, true};
  s.seed = 3;
  return s;
}

SyntheticTask small_task() {
  SyntheticTask t;
  t.input_dim = 4;
  t.informative_dims = 2;
  t.nuisance_dims = 2;
  t.train_rows = 96;
  t.validation_rows = 40;
  t.seed = 3;
  return t;
}

bool same_params(const Params& a, const Params& b) {
  const auto ta = a.to_tensors(), tb = b.to_tensors();
  for (std::size_t i = 0; i < ta.size(); ++i) {
    if (ta[i].shape() != tb[i].shape() || ta[i].data() != tb[i].data()) return false;
  }
  return true;
}

}  // namespace

TEST_SUITE("encoder_model") {

TEST_CASE("spec validation") {
  EncoderSpec s;
  CHECK_NOTHROW(s.validate());
  s.layers_per_block = 2;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = EncoderSpec{};
  s.widths = {16};
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = EncoderSpec{};
  s.mask = {true};
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = EncoderSpec{};
  s.lambda = -1;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = EncoderSpec{};
  s.blocks = 0;
  s.widths = {};
  s.mask = {};
  CHECK_THROWS_AS(s.validate(), ConfigError);
}

TEST_CASE("initialization is seeded, bounded and has zero biases") {
  const EncoderSpec s;
  const Params p = init_params(s);
  CHECK(p.layers.size() == 8);
  CHECK(p.tensor_count() == 18);
  CHECK(p.layers[0].weight.rows() == 16);
  CHECK(p.head.weight.cols() == 2);
  for (const auto& l : p.layers) {
    const double a = std::sqrt(6.0 / double(l.weight.rows() + l.weight.cols()));
    CHECK(l.weight.cwiseAbs().maxCoeff() <= a);
    CHECK(l.bias.isZero(0.0));
  }
  CHECK(same_params(p, init_params(s)));
  const Params back = Params::from_tensors(s, p.to_tensors());
  CHECK(same_params(p, back));
  auto ts = p.to_tensors();
  ts.pop_back();
  CHECK_THROWS_AS(Params::from_tensors(s, ts), DimensionError);
}

TEST_CASE("synthetic task") {
  SyntheticTask t;
  const TaskData a = generate_task(t);
  const TaskData b = generate_task(t);
  CHECK(a.train.x == b.train.x);
  CHECK(a.train.rows() == 2000);
  CHECK(a.validation.rows() == 500);
  for (std::size_t i = 0; i < a.train.rows(); ++i) {
    const double s = a.train.x.row(Eigen::Index(i)).head(4).sum();
    CHECK(a.train.labels[i] == (s > 0 ? 1 : 0));
    CHECK(a.train.targets[Eigen::Index(i)] == s);
  }
  t.nuisance_dims = 11;
  CHECK_THROWS_AS(generate_task(t), ConfigError);
  const Dataset fresh = sample_task(SyntheticTask{}, 10, 99);
  CHECK(fresh.x == sample_task(SyntheticTask{}, 10, 99).x);
  CHECK(fresh.x != sample_task(SyntheticTask{}, 10, 100).x);
}

TEST_CASE("forward with capture") {
  const EncoderSpec s;
  const Params p = init_params(s);
  const RowMatrix x = random_matrix(32, 16, 1);
  Tape tape;
  std::vector<Var> leaves;
  for (auto& t : p.to_tensors()) leaves.push_back(tape.leaf(t));
  const auto fw = forward_with_capture(s, leaves, tape.constant(Tensor::from_matrix(x)));
  REQUIRE(fw.captures.size() == 2);
  std::size_t total = 0;
  for (const auto& b : fw.captures) total += b.size();
  CHECK(total == 8);
  CHECK(fw.captures[1][3].shape() == Shape{32, 16});
  CHECK(fw.output.shape() == Shape{32, 2});

  const Forward plain = forward(s, p, x);
  // The two paths may pick different product kernels; they agree to rounding.
  CHECK((plain.output - fw.output.value().matrix()).cwiseAbs().maxCoeff() <= 1e-13);
  CHECK(plain.captures[0][2] == fw.captures[0][2].value().matrix());

  CHECK_THROWS_AS(forward(s, p, random_matrix(4, 15, 1)), DimensionError);
  CHECK_THROWS_AS(forward_with_capture(s, leaves, tape.constant(Tensor::from_matrix(random_matrix(4, 15, 1)))),
                  DimensionError);
}

TEST_CASE("zero network and duplicate rows give degenerate samples") {
  const EncoderSpec s;
  Params zero = init_params(s);
  for (auto& l : zero.layers) l.weight.setZero();
  zero.head.weight.setZero();
  const Dataset batch = sample_task(SyntheticTask{}, 64, 1);
  const Forward fw = forward(s, zero, batch.x);
  for (const auto& b : fw.captures)
    for (const auto& c : b) CHECK(c.isZero(0.0));
  CHECK_THROWS_AS(evaluate_objective(s, zero, batch, {}, false), DegenerateSampleError);

  Dataset dup = batch;
  dup.x.row(10) = dup.x.row(4);
  try {
    evaluate_objective(s, init_params(s), dup, {}, false);
    FAIL("expected DegenerateSampleError");
  } catch (const DegenerateSampleError& e) {
    CHECK(e.block() == 0);
    CHECK(e.layer() == 0);
    CHECK(e.rows() == std::vector<std::size_t>{4, 10});
  }
}

TEST_CASE("confidence") {
  EncoderSpec s;
  s.num_classes = 4;
  CHECK(confidence(s, RowMatrix::Zero(3, 4)) == doctest::Approx(0.25).epsilon(1e-15));
  RowMatrix l(1, 4);
  l << 10, 0, 0, 0;
  CHECK(confidence(s, l) == doctest::Approx(0.9998638187585689).epsilon(1e-14));
  CHECK_THROWS_AS(confidence(s, RowMatrix(0, 4)), ContractError);
  s.head = HeadKind::regression;
  CHECK_THROWS_AS(confidence(s, l), ContractError);
  EncoderSpec two;
  const RowMatrix any = random_matrix(20, 2, 4, -5, 5);
  const double c = confidence(two, any);
  CHECK(c >= 0.5);
  CHECK(c <= 1.0);
}

TEST_CASE("lambda zero equals an all-disabled mask bit for bit") {
  EncoderSpec on = small_spec();
  on.lambda = 0.0;
  EncoderSpec off = on;
  off.mask = {false, false};
  Params a = init_params(on), b = init_params(off);
  const TaskData d = generate_task(small_task());
  StepOptions so;
  for (int step = 0; step < 5; ++step) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < 32; ++i) rows.push_back((std::size_t(step) * 32 + i) % 96);
    const Dataset batch = gather(d.train, rows);
    train_step(on, a, batch, so);
    train_step(off, b, batch, so);
  }
  CHECK(same_params(a, b));
}

TEST_CASE("all-disabled training equals plain task-loss SGD") {
  EncoderSpec s = small_spec();
  s.mask = {false, false};
  const TaskData d = generate_task(small_task());
  Params a = init_params(s), b = init_params(s);
  const double lr = 1e-2;
  for (int step = 0; step < 3; ++step) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < 32; ++i) rows.push_back(std::size_t(step) * 32 + i);
    const Dataset batch = gather(d.train, rows);
    train_step(s, a, batch, {.learning_rate = lr});
    // Reference: task loss only, no regularizer code involved.
    Tape t;
    std::vector<Var> leaves;
    for (auto& ten : b.to_tensors()) leaves.push_back(t.leaf(ten));
    const auto fw = forward_with_capture(s, leaves, t.constant(Tensor::from_matrix(batch.x)));
    t.backward(softmax_cross_entropy(fw.output, batch.labels));
    std::size_t gi = 0;
    auto update = [&](DenseLayer& l) {
      l.weight -= lr * leaves[gi++].grad().matrix();
      l.bias -= lr * leaves[gi++].grad().data().transpose();
    };
    for (auto& l : b.layers) update(l);
    update(b.head);
  }
  CHECK(same_params(a, b));
}

TEST_CASE("a small step reduces the combined objective") {
  const EncoderSpec s = small_spec();
  const TaskData d = generate_task(small_task());
  std::vector<std::size_t> rows(64);
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  const Dataset batch = gather(d.train, rows);
  Params p = init_params(s);
  const StepOptions so{.learning_rate = 1e-3};
  const double before = objective(s, p, batch, so);
  const auto r = train_step(s, p, batch, so);
  CHECK(r.task_loss + r.eloss == doctest::Approx(before).epsilon(1e-14));
  CHECK(objective(s, p, batch, so) < before);
}

TEST_CASE("objective gradient w.r.t. first-layer weights matches finite differences") {
  const EncoderSpec s = small_spec();
  const TaskData d = generate_task(small_task());
  std::vector<std::size_t> rows(48);
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  const Dataset batch = gather(d.train, rows);
  const Params p = init_params(s);
  for (Estimator est : {Estimator::knn, Estimator::gaussian_diag}) {
    const StepOptions so{.estimator = est};
    const auto ev = evaluate_objective(s, p, batch, so, true);
    const RowMatrix& w = p.layers[0].weight;
    const auto f = [&](const Eigen::VectorXd& flat) {
      Params q = p;
      q.layers[0].weight = Eigen::Map<const RowMatrix>(flat.data(), w.rows(), w.cols());
      return objective(s, q, batch, so);
    };
    CHECK(max_fd_error(f, Eigen::Map<const Eigen::VectorXd>(w.data(), w.size()),
                       ev.grads[0].data(), 1e-6) <= 1e-3);
  }
}

TEST_CASE("regression head") {
  EncoderSpec s = small_spec();
  s.head = HeadKind::regression;
  const TaskData d = generate_task(small_task());
  TrainingOptions o;
  o.epochs = 2;
  o.batch_size = 32;
  o.eval_batch_size = 20;
  const TrainResult r = train(s, d, o);
  CHECK(r.records.size() == 2);
  CHECK(r.records[1].val_metric <= 0.0);
  CHECK(std::isnan(r.records[1].confidence));
}

TEST_CASE("training loop records and determinism") {
  const EncoderSpec s = small_spec();
  const TaskData d = generate_task(small_task());
  TrainingOptions o;
  o.epochs = 3;
  o.batch_size = 32;
  o.eval_batch_size = 20;
  const TrainResult a = train(s, d, o);
  const TrainResult b = train(s, d, o);
  REQUIRE(a.records.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(a.records[i].epoch == int(i));
    CHECK(a.records[i].task_loss == b.records[i].task_loss);
    CHECK(a.records[i].penalties == b.records[i].penalties);
    CHECK(a.records[i].penalties.size() == 2);
  }
  CHECK(a.steps == 9);
  CHECK(same_params(a.params, b.params));
  CHECK(a.final_eval.trajectories.size() == 2);
  TrainingOptions bad = o;
  bad.learning_rate = 0;
  CHECK_THROWS_AS(train(s, d, bad), ConfigError);
}

TEST_CASE("experiment configuration") {
  ExperimentConfig c;
  CHECK_NOTHROW(c.validate());
  const EncoderSpec one = c.run_spec(1);
  CHECK(one.mask == std::vector<bool>{true, false});
  CHECK(c.run_spec(0).mask == std::vector<bool>{false, false});
  CHECK_THROWS_AS(c.run_spec(3), ConfigError);
  c.sweep = {0, 3};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK(run_dir_name(2) == "blocks_2");
}

}
