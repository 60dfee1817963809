/* Copyright 2026 The NRDM Authors

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

        https://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
        limitations under the License.
==============================================================================*/


#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "nrdm/training.hpp"
#include "test_util.hpp"

namespace nrdm {
namespace {

using testing::TensorNear;

ClosedFormSchedule ou_schedule() {
  ScheduleSpec s;
  s.kind = ScheduleKind::ou;
  s.theta = 5.0;
  s.sigma = std::sqrt(10.0);
  return ClosedFormSchedule(s);
}

ScoreNetwork small_net(std::uint64_t seed, Variant variant = Variant::v0) {
  ScoreNetworkConfig c;
  c.stack.depth = 2;
  c.stack.mapper.width = 2;
  c.stack.mapper.hidden = 8;
  c.stack.mapper.embed_dim = 8;
  c.stack.variant = variant;
  c.stack.init_scale = 0.1;
  Rng rng(seed);
  return ScoreNetwork(c, rng);
}

TrainConfig small_train(std::size_t steps) {
  TrainConfig t;
  t.steps = steps;
  t.batch = 32;
  t.eval_size = 64;
  return t;
}

TEST(Losses, SimpleExamples) {
  EXPECT_EQ(loss_simple(Tensor::vector({1, 2}), Tensor::vector({1, 2})), 0.0);
  EXPECT_DOUBLE_EQ(loss_simple(Tensor::vector({1, 0}), Tensor::vector({0, 0})), 0.5);
  EXPECT_DOUBLE_EQ(loss_simple(Tensor::vector({2}), Tensor::vector({-1})), 9.0);
}

TEST(Losses, ScoreMatchingExamples) {
  EXPECT_EQ(loss_score_matching(Tensor::vector({3}), Tensor::vector({3})), 0.0);
  EXPECT_DOUBLE_EQ(loss_score_matching(Tensor::vector({1, 1}), Tensor::vector({0, 0})), 1.0);
}

TEST(Losses, PerfectModelOnStandardNormal) {
  const Tensor z = Rng(3).normal_tensor({16, 2});
  const Tensor target = analytic_score(GaussianMixture::standard_normal(2), z);
  EXPECT_EQ(loss_score_matching(-1.0 * z, target), 0.0);
}

TEST(Losses, ShapeMismatch) {
  EXPECT_THROW(loss_simple(Tensor::vector({1, 2}), Tensor::vector({1})), std::invalid_argument);
  EXPECT_THROW(loss_score_matching(Tensor::matrix(1, 2, {1, 2}), Tensor::vector({1, 2})), std::invalid_argument);
}

TEST(Losses, GradientsMatchFiniteDifferences) {
  const Tensor target = Rng(1).normal_tensor({3, 2});
  const Tensor x0 = Rng(2).normal_tensor({3, 2});
  for (bool simple : {true, false}) {
    Tape tape;
    const Var x = tape.leaf(x0);
    const Var l = simple ? loss_simple(tape.constant(target), x) : loss_score_matching(x, tape.constant(target));
    const Tensor g = backward(l)[x];
    const Tensor fd = finite_difference_grad(
        [&](const Tensor& z) { return simple ? loss_simple(target, z) : loss_score_matching(z, target); }, x0, 1e-6);
    EXPECT_LT(relative_error(g, fd), 1e-5);
  }
}

StackModel scalar_unit(double a, double alpha, double beta) {
  StackConfig c;
  c.depth = 1;
  c.mapper.kind = MapperKind::linear_scalar;
  c.mapper.width = 1;
  c.linear_init = a;
  Rng rng(0);
  StackModel m(c, rng);
  m.set_all_gates(alpha, beta);
  return m;
}

TEST(Regularizer, ZeroGatesGiveZero) {
  StackModel m = small_net(1).stack();
  m.set_all_gates(0.0, 0.0);
  EXPECT_EQ(loss_sensitivity_reg(m, Rng(1).normal_tensor({4, 2})), 0.0);
}

TEST(Regularizer, IdentityMapperBalancedGates) {
  EXPECT_NEAR(loss_sensitivity_reg(scalar_unit(1.0, 1.0, 1.0), Tensor::matrix(3, 1, {0.1, -2, 4})), 0.0, 1e-15);
}

TEST(Regularizer, DoubledMapper) {
  EXPECT_NEAR(loss_sensitivity_reg(scalar_unit(2.0, 1.0, 0.0), Tensor::matrix(3, 1, {0.1, -2, 4})), 4.0, 1e-12);
}

TEST(Regularizer, ExactJacobianDiagonalMatchesFiniteDifferences) {
  const StackModel m = small_net(4).stack();
  const Tensor z = Rng(5).normal_tensor({3, 2});
  const std::vector<double> times(3, 0.3);
  const Tensor emb = time_embedding(times, 8);
  Rng probe(0);
  const Tensor diag = mapper_jacobian_diag(m, 0, z, emb, JacobianMode::exact, probe);
  ASSERT_EQ(diag.shape(), (Shape{3, 2}));
  const auto bound_value = [&](const Tensor& x) {
    Tape tape;
    const auto bound = m.bind(tape);
    Conditioning cond;
    cond.embedding = tape.constant(emb);
    return m.mapper(bound, 0, tape.constant(x), cond).value();
  };
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = 0; c < 2; ++c) {
      const double h = 1e-6;
      std::vector<double> up(z.data().begin(), z.data().end());
      std::vector<double> dn = up;
      up[2 * r + c] += h;
      dn[2 * r + c] -= h;
      const double fd =
          (bound_value(Tensor(z.shape(), up))[2 * r + c] - bound_value(Tensor(z.shape(), dn))[2 * r + c]) / (2 * h);
      EXPECT_NEAR(diag[2 * r + c], fd, 1e-7);
    }
  }
}

TEST(Regularizer, HutchinsonIsUnbiased) {
  const StackModel m = small_net(4).stack();
  const Tensor z = Rng(5).normal_tensor({2, 2});
  const std::vector<double> times(2, 0.6);
  const Tensor emb = time_embedding(times, 8);
  Rng probe(1);
  const Tensor exact = mapper_jacobian_diag(m, 1, z, emb, JacobianMode::exact, probe);
  Tensor acc(z.shape(), 0.0);
  const int draws = 4000;
  for (int k = 0; k < draws; ++k) acc = acc + mapper_jacobian_diag(m, 1, z, emb, JacobianMode::hutchinson, probe);
  // Off-diagonal terms enter with random sign; their mean shrinks like 1/sqrt(draws).
  EXPECT_TRUE(TensorNear((1.0 / draws) * acc, exact, 0.05));
}

TEST(Regularizer, GateGradientsMatchFiniteDifferences) {
  StackModel m = small_net(6).stack();
  m.set_all_gates(0.7, 0.2);
  const std::vector<Tensor> diags{Rng(1).normal_tensor({4, 2}), Rng(2).normal_tensor({4, 2})};
  const std::size_t ia = m.units()[1].gate.alpha;
  Tape tape;
  const auto bound = m.bind(tape);
  const Tensor g = backward(sensitivity_reg_term(m, bound, diags))[bound[ia]];
  const Tensor fd = finite_difference_grad(
      [&](const Tensor& a) {
        StackModel copy = m;
        copy.params()[ia].value = a;
        Tape t;
        return sensitivity_reg_term(copy, copy.bind(t), diags).value().item();
      },
      m.params()[ia].value, 1e-6);
  EXPECT_LT(relative_error(g, fd), 1e-5);
}

TEST(Regularizer, ThetaReceivesNoGradient) {
  const StackModel m = small_net(6).stack();
  const std::vector<Tensor> diags{Tensor(Shape{4, 2}, 0.5), Tensor(Shape{4, 2}, 0.5)};
  Tape tape;
  const auto bound = m.bind(tape);
  const Gradients g = backward(sensitivity_reg_term(m, bound, diags));
  for (std::size_t i = 0; i < m.params().size(); ++i) {
    if (m.params()[i].group == ParamGroup::theta) EXPECT_FALSE(g.reached(bound[i])) << m.params()[i].name;
  }
}

Parameter scalar_param(double v) { return Parameter{"w", Tensor::vector({v})}; }

TEST(Optimizer, SgdStep) {
  Parameter p = scalar_param(1.0);
  std::vector<Parameter*> ps{&p};
  OptimConfig c;
  c.method = OptimMethod::sgd;
  c.lr = 0.1;
  OptimState s = make_optim_state(c, ps);
  optimizer_step(s, ps, std::vector<Tensor>{Tensor::vector({2})});
  EXPECT_NEAR(p.value[0], 0.8, 1e-15);
}

TEST(Optimizer, AdamFirstStep) {
  for (double g : {0.3, 5.0}) {
    Parameter p = scalar_param(1.0);
    std::vector<Parameter*> ps{&p};
    OptimConfig c;
    c.lr = 0.1;
    OptimState s = make_optim_state(c, ps);
    optimizer_step(s, ps, std::vector<Tensor>{Tensor::vector({g})});
    EXPECT_NEAR(p.value[0], 0.9, 1e-7);
    EXPECT_EQ(s.step, 1u);
  }
}

TEST(Optimizer, ZeroGradientLeavesParameters) {
  for (OptimMethod m : {OptimMethod::sgd, OptimMethod::adamw}) {
    Parameter p = scalar_param(1.5);
    std::vector<Parameter*> ps{&p};
    OptimConfig c;
    c.method = m;
    OptimState s = make_optim_state(c, ps);
    optimizer_step(s, ps, std::vector<Tensor>{Tensor::vector({0})});
    EXPECT_EQ(p.value[0], 1.5);
  }
}

TEST(Optimizer, NanGradientNamesParameter) {
  Parameter p = scalar_param(1.0);
  p.name = "stack.u3.w1";
  std::vector<Parameter*> ps{&p};
  OptimState s = make_optim_state(OptimConfig{}, ps);
  try {
    optimizer_step(s, ps, std::vector<Tensor>{Tensor::vector({std::numeric_limits<double>::quiet_NaN()})});
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("stack.u3.w1"), std::string::npos);
  }
}

TEST(Optimizer, FrozenParametersSkipped) {
  Parameter p = scalar_param(1.0);
  p.frozen = true;
  Parameter q = scalar_param(1.0);
  std::vector<Parameter*> ps{&p, &q};
  OptimConfig c;
  c.method = OptimMethod::sgd;
  c.lr = 0.1;
  OptimState s = make_optim_state(c, ps);
  optimizer_step(s, ps, std::vector<Tensor>{Tensor::vector({1}), Tensor::vector({1})});
  EXPECT_EQ(p.value[0], 1.0);
  EXPECT_NEAR(q.value[0], 0.9, 1e-15);
}

TEST(Optimizer, DecoupledWeightDecay) {
  Parameter p = scalar_param(2.0);
  std::vector<Parameter*> ps{&p};
  OptimConfig c;
  c.lr = 0.1;
  c.weight_decay = 0.5;
  OptimState s = make_optim_state(c, ps);
  optimizer_step(s, ps, std::vector<Tensor>{Tensor::vector({0})});
  EXPECT_NEAR(p.value[0], 2.0 - 0.1 * 0.5 * 2.0, 1e-12);
}

TEST(Ema, DecayExtremes) {
  Parameter p = scalar_param(1.0);
  std::vector<Parameter*> ps{&p};
  EmaState keep = make_ema(1.0, ps);
  EmaState copy = make_ema(0.0, ps);
  p.value = Tensor::vector({4.0});
  ema_update(keep, ps);
  ema_update(copy, ps);
  EXPECT_EQ(keep.shadow[0][0], 1.0);
  EXPECT_EQ(copy.shadow[0][0], 4.0);
}

TEST(Ema, DirectFormula) {
  EmaState e{0.999, {Tensor::vector({0.0})}};
  ema_update(e, std::vector<Tensor>{Tensor::vector({1.0})});
  EXPECT_NEAR(e.shadow[0][0], 0.001, 1e-15);
}

TEST(Ema, GeometricConvergence) {
  EmaState e{0.9, {Tensor::vector({0.0})}};
  double gap = 1.0;
  for (int k = 0; k < 20; ++k) {
    ema_update(e, std::vector<Tensor>{Tensor::vector({1.0})});
    const double next = 1.0 - e.shadow[0][0];
    EXPECT_NEAR(next / gap, 0.9, 1e-9);
    gap = next;
  }
}

TEST(Ema, ShapeMismatch) {
  EmaState e{0.9, {Tensor::vector({0.0})}};
  EXPECT_THROW(ema_update(e, std::vector<Tensor>{Tensor::vector({1.0, 2.0})}), std::invalid_argument);
  EXPECT_THROW(make_ema(1.5, std::vector<Parameter*>{}), std::invalid_argument);
}

TEST(Train, ZeroStepsLeavesModel) {
  ScoreNetwork net = small_net(2);
  const std::vector<Tensor> before = parameter_values(net);
  const TrainResult r = train_score_model(net, small_train(0), ou_schedule(), DatasetSpec{}, 1);
  EXPECT_TRUE(r.log.empty());
  const std::vector<Tensor> after = parameter_values(net);
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_TRUE(before[i].bit_identical(after[i]));
}

TEST(Train, SeedsGiveBitIdenticalLogs) {
  ScoreNetwork a = small_net(2);
  ScoreNetwork b = small_net(2);
  const TrainResult ra = train_score_model(a, small_train(15), ou_schedule(), DatasetSpec{}, 9);
  const TrainResult rb = train_score_model(b, small_train(15), ou_schedule(), DatasetSpec{}, 9);
  ASSERT_EQ(ra.log.size(), 15u);
  EXPECT_EQ(metric_log_table(ra.log).rows, metric_log_table(rb.log).rows);
  const auto pa = parameter_values(a);
  const auto pb = parameter_values(b);
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_TRUE(pa[i].bit_identical(pb[i]));
}

TEST(Train, LossDecreasesOnMixture) {
  ScoreNetwork net = small_net(3);
  TrainConfig c = small_train(300);
  c.optim.lr = 5e-3;
  const TrainResult r = train_score_model(net, c, ou_schedule(), DatasetSpec{}, 4);
  EXPECT_LT(r.final.loss, r.initial.loss);
}

TEST(Train, GammaZeroIsScoreMatching) {
  const ScoreNetwork net = small_net(3);
  TrainConfig c = small_train(0);
  c.loss.gamma = 0.0;
  const EvalLoss e0 = evaluate_objective(net, c, ou_schedule(), DatasetSpec{}, 5);
  EXPECT_EQ(e0.gamma_term, 0.0);
  EXPECT_EQ(e0.loss, e0.score_term);
  c.loss.gamma = 0.35;
  const EvalLoss e1 = evaluate_objective(net, c, ou_schedule(), DatasetSpec{}, 5);
  c.loss.gamma = 0.7;
  const EvalLoss e2 = evaluate_objective(net, c, ou_schedule(), DatasetSpec{}, 5);
  EXPECT_EQ(e1.score_term, e0.score_term);
  EXPECT_NEAR(e2.gamma_term, 2.0 * e1.gamma_term, 1e-12 * e2.gamma_term);
}

TEST(Train, DivergenceAborts) {
  ScoreNetwork net = small_net(3);
  TrainConfig c = small_train(5);
  c.divergence_threshold = 1e-12;
  EXPECT_THROW(train_score_model(net, c, ou_schedule(), DatasetSpec{}, 1), NumericalError);
}

TEST(Train, RejectsIncompatibleSchedule) {
  ScoreNetwork net = small_net(3);
  ParameterizedScheduleConfig pc;
  Rng rng(1);
  const ParameterizedSchedule ps(pc, rng);
  EXPECT_THROW(train_score_model(net, small_train(1), ps, DatasetSpec{}, 1), std::invalid_argument);
}

TEST(Finetune, ThetaBitIdentical) {
  ScoreNetwork net = small_net(5);
  std::vector<Tensor> theta_before, gates_before;
  for (const Parameter* p : net.parameters()) {
    (p->group == ParamGroup::theta ? theta_before : gates_before).push_back(p->value);
  }
  finetune_gates(net, small_train(20), ou_schedule(), DatasetSpec{}, 2);
  std::size_t ti = 0;
  bool gates_moved = false;
  std::size_t gi = 0;
  for (const Parameter* p : net.parameters()) {
    if (p->group == ParamGroup::theta) {
      EXPECT_TRUE(p->value.bit_identical(theta_before[ti++])) << p->name;
    } else {
      gates_moved = gates_moved || !p->value.bit_identical(gates_before[gi]);
      ++gi;
    }
  }
  EXPECT_TRUE(gates_moved);
}

TEST(Finetune, RegularizerPullsGatesTogether) {
  // Identity mapper: the regularizer is (alpha - beta)^2.
  ScoreNetworkConfig c;
  c.stack.depth = 1;
  c.stack.mapper.kind = MapperKind::linear_scalar;
  c.stack.mapper.width = 2;
  c.stack.linear_init = 1.0;
  Rng rng(0);
  ScoreNetwork net(c, rng);
  const std::size_t ia = net.stack().units()[0].gate.alpha;
  const std::size_t ib = net.stack().units()[0].gate.beta;
  TrainConfig t = small_train(200);
  t.loss.gamma = 50.0;
  t.optim.lr = 1e-2;
  finetune_gates(net, t, ou_schedule(), DatasetSpec{}, 3);
  const double gap = std::abs(net.stack().params()[ia].value[0] - net.stack().params()[ib].value[0]);
  EXPECT_LT(gap, 0.1);
}

TEST(Checkpoint, RoundTripBitExact) {
  ScoreNetwork net = small_net(8);
  const TrainResult r = train_score_model(net, small_train(3), ou_schedule(), DatasetSpec{}, 1);
  const Checkpoint c = make_checkpoint(net, &r.optim, &r.ema, 1, 3, {{"command", "train"}});
  const auto path = std::filesystem::temp_directory_path() / "nrdm_roundtrip.nrdm";
  save_checkpoint(path, c);
  const Checkpoint back = load_checkpoint(path);
  EXPECT_EQ(back, c);
  for (std::size_t i = 0; i < c.tensors.size(); ++i) EXPECT_TRUE(back.tensors[i].value.bit_identical(c.tensors[i].value));
  ScoreNetwork other = small_net(99);
  restore_parameters(other, back);
  const auto pa = parameter_values(net);
  const auto pb = parameter_values(other);
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_TRUE(pa[i].bit_identical(pb[i]));
  std::filesystem::remove(path);
}

std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_bytes(const std::filesystem::path& p, const std::string& s) {
  std::ofstream(p, std::ios::binary) << s;
}

std::string load_error(const std::filesystem::path& p) {
  try {
    load_checkpoint(p);
  } catch (const CheckpointError& e) {
    return e.what();
  }
  return "";
}

TEST(Checkpoint, CorruptMagic) {
  const auto path = std::filesystem::temp_directory_path() / "nrdm_badmagic.nrdm";
  save_checkpoint(path, make_checkpoint(small_net(1), nullptr, nullptr, 0, 0, {}));
  std::string bytes = read_bytes(path);
  bytes[0] = 'X';
  write_bytes(path, bytes);
  EXPECT_NE(load_error(path).find("NRDM1"), std::string::npos);
  std::filesystem::remove(path);
}

TEST(Checkpoint, VersionZeroUnsupported) {
  const auto path = std::filesystem::temp_directory_path() / "nrdm_v0.nrdm";
  save_checkpoint(path, make_checkpoint(small_net(1), nullptr, nullptr, 0, 0, {}));
  std::string bytes = read_bytes(path);
  for (int i = 5; i < 9; ++i) bytes[static_cast<std::size_t>(i)] = '\0';
  write_bytes(path, bytes);
  EXPECT_NE(load_error(path).find("unsupported checkpoint version 0"), std::string::npos);
  std::filesystem::remove(path);
}

TEST(Checkpoint, Truncated) {
  const auto path = std::filesystem::temp_directory_path() / "nrdm_trunc.nrdm";
  save_checkpoint(path, make_checkpoint(small_net(1), nullptr, nullptr, 0, 0, {}));
  const std::string bytes = read_bytes(path);
  write_bytes(path, bytes.substr(0, bytes.size() - 5));
  EXPECT_NE(load_error(path).find("truncated"), std::string::npos);
  std::filesystem::remove(path);
}

TEST(Checkpoint, MissingFile) {
  EXPECT_THROW(load_checkpoint("/nonexistent/x.nrdm"), CheckpointError);
}

}  // namespace
}  // namespace nrdm
