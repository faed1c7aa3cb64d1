#include <gtest/gtest.h>

#include <cmath>

#include "fdlab/regularizers.hpp"
#include "support.hpp"

using namespace fdlab;
using fdlab::testing::bind_nodes;
using fdlab::testing::max_grad_error;
using fdlab::testing::parameter_values;
using fdlab::testing::randn;

namespace {

double value(Var v) { return v.value().item(); }

// Wraps logit tensors as single-step outputs on `tape`.
std::vector<StepOutput> steps_of(Tape& tape, const std::vector<Tensor>& logits) {
  std::vector<StepOutput> out;
  for (const Tensor& l : logits) {
    const Var v = tape.leaf(l);
    out.push_back({v, v, v});
  }
  return out;
}

struct TwoPass {
  LmConfig config;
  LmModel model;
  std::vector<std::vector<int>> inputs = {{1, 2, 3}, {4, 0, 5}};
  Targets targets = {{2, 3, 4}, {0, 5, 1}};

  TwoPass() {
    config.vocab_size = 6;
    config.embed_dim = 4;
    config.hidden_dim = 5;
    config.num_layers = 1;
    config.tie_embeddings = true;
    config.input.rate = 0.3;
    config.output.rate = 0.4;
    config.weight.rate = 0.2;
    model = LmModel::initialize(config, 17);
  }

  MaskSet masks(std::uint64_t seed) const { return MaskSet::sample(config.mask_layout(3), 2, seed); }
  MaskSet mask_free() const { return MaskSet::expected(config.mask_layout(3)); }

  // Both passes bound to the parameters of `model` on one tape.
  SiameseOutputs run(Tape& tape, const MaskSet& a, const MaskSet& b) {
    SiameseOutputs out;
    const ForwardResult f = forward(bind(tape, model, a), inputs, a, zero_carry(config, 3));
    out.first = f.steps;
    out.first_initial_hidden = f.initial_hidden;
    out.second = forward(bind(tape, model, b), inputs, b, zero_carry(config, 3)).steps;
    return out;
  }
};

}  // namespace

TEST(Penalties, FdExamples) {
  Tape tape;
  const Var a = tape.constant(Tensor::vector({0.3, -2}));
  EXPECT_EQ(value(r_fd(a, a)), 0.0);
  EXPECT_EQ(value(r_fd(tape.constant(Tensor::vector({1, 0})), tape.constant(Tensor::vector({0, 1})))), 2.0);
  EXPECT_EQ(value(r_fd(tape.constant(Tensor::vector({3, 4})), tape.constant(Tensor::vector({0, 0})))), 25.0);
}

TEST(Penalties, EldExamplesAndStopGradient) {
  Tape tape;
  const Var a = tape.constant(Tensor::vector({1, 1}));
  EXPECT_EQ(value(r_eld(a, a)), 0.0);
  const Var p = tape.leaf(Tensor::vector({1, 1}));
  const Var q = tape.leaf(Tensor::vector({0, 0}));
  const Var r = r_eld(p, q);
  EXPECT_EQ(value(r), 2.0);
  tape.backward(r);
  EXPECT_EQ(p.grad(), Tensor::vector({2, 2}));
  EXPECT_TRUE(q.grad().empty() || q.grad() == Tensor::vector({0, 0}));
}

TEST(Penalties, ArExamples) {
  Tape tape;
  const auto c = [&](std::initializer_list<double> v) { return tape.constant(Tensor::vector(v)); };
  EXPECT_EQ(value(r_ar(c({0, 0}), c({2, 0}), 3.0)), 0.0);
  EXPECT_EQ(value(r_ar(c({1, 2}), c({1, 1}), 2.0)), 5.0);
  EXPECT_EQ(value(r_ar(c({7, -4}), c({0, 0}), 2.0)), 0.0);
  EXPECT_EQ(value(r_ar(c({1, 2}), 2.0)), 5.0);
}

TEST(Penalties, TarExamples) {
  Tape tape;
  const auto c = [&](std::initializer_list<double> v) { return tape.constant(Tensor::vector(v)); };
  EXPECT_EQ(value(r_tar(c({1, 2}), c({1, 2}), 4.0)), 0.0);
  EXPECT_EQ(value(r_tar(c({3}), c({1}), 1.0)), 4.0);
  EXPECT_EQ(value(r_tar(c({3}), c({1}), 0.0)), 0.0);
}

TEST(Penalties, PrExamples) {
  Tape tape;
  EXPECT_EQ(value(r_pr(tape.constant(Tensor::vector({0, 0})), 1.0)), 0.0);
  EXPECT_EQ(value(r_pr(tape.constant(Tensor::vector({1, 1})), 2.0)), 2.0);
}

TEST(Penalties, FdDecomposesIntoSelfAndCrossTerms) {
  Rng rng(1);
  Tape tape;
  for (int k = 0; k < 200; ++k) {
    const Tensor a = randn({9}, rng);
    const Tensor b = randn({9}, rng);
    const Var va = tape.constant(a);
    const Var vb = tape.constant(b);
    double dot = 0.0;
    for (std::size_t i = 0; i < 9; ++i) dot += a[i] * b[i];
    // The self terms are PR with gamma = m.
    const double self = value(r_pr(va, 9.0)) + value(r_pr(vb, 9.0));
    EXPECT_NEAR(value(r_fd(va, vb)), self - 2 * dot, 1e-12);
  }
}

TEST(Penalties, GradientsMatchFiniteDifferences) {
  Rng rng(6);
  const Tensor a = randn({3, 4}, rng);
  const Tensor b = randn({3, 4}, rng);
  const Tensor mask = randn({3, 4}, rng);
  EXPECT_LE(max_grad_error([](Tape&, const std::vector<Var>& x) { return r_fd(x[0], x[1]); }, {a, b}), 1e-6);
  // Only the dropout argument is differentiated; the blocked one stays fixed.
  EXPECT_LE(max_grad_error([&](Tape& t, const std::vector<Var>& x) { return r_eld(x[0], t.constant(b)); }, {a}),
            1e-6);
  EXPECT_LE(max_grad_error([&](Tape& t, const std::vector<Var>& x) { return r_ar(x[0], t.constant(mask), 2.0); },
                           {a}),
            1e-6);
  EXPECT_LE(max_grad_error([](Tape&, const std::vector<Var>& x) { return r_tar(x[0], x[1], 1.5); }, {a, b}), 1e-6);
  EXPECT_LE(max_grad_error([](Tape&, const std::vector<Var>& x) { return r_pr(x[0], 0.7); }, {a}), 1e-6);
}

TEST(FdObjective, ScalarExample) {
  // T=1, m=2, p_i=(0,0), p_j=(1,0), target 0, kappa=0.2:
  // 1/2 (ln 2 + ln(1 + e^-1)) + 0.2/2 * 1, in 30-digit arithmetic.
  Tape tape;
  SiameseOutputs out;
  out.first = steps_of(tape, {Tensor::matrix({{0, 0}})});
  out.second = steps_of(tape, {Tensor::matrix({{1, 0}})});
  const Objective obj = fd_objective(out, {{0}}, 0.2);
  EXPECT_NEAR(value(obj.total), 0.60320443403908407173, 1e-15);
}

TEST(FdObjective, KappaZeroIsMeanOfCrossEntropies) {
  Rng rng(2);
  Tape tape;
  SiameseOutputs out;
  out.first = steps_of(tape, {randn({2, 5}, rng), randn({2, 5}, rng)});
  out.second = steps_of(tape, {randn({2, 5}, rng), randn({2, 5}, rng)});
  const Targets y = {{1, 4}, {0, 2}};
  const double li = value(target_loss(out.first, y));
  const double lj = value(target_loss(out.second, y));
  EXPECT_NEAR(value(fd_objective(out, y, 0.0).total), 0.5 * (li + lj), 1e-14);
}

TEST(FdObjective, IdenticalMasksEqualSinglePass) {
  TwoPass tp;
  Tape tape;
  const MaskSet m = tp.masks(5);
  const SiameseOutputs out = tp.run(tape, m, m);
  EXPECT_EQ(value(fd_objective(out, tp.targets, 0.7).total), value(target_loss(out.first, tp.targets)));
}

TEST(FdObjective, SymmetricUnderSwap) {
  TwoPass tp;
  Tape tape;
  const SiameseOutputs ab = tp.run(tape, tp.masks(1), tp.masks(2));
  SiameseOutputs ba = ab;
  std::swap(ba.first, ba.second);
  EXPECT_NEAR(value(fd_objective(ab, tp.targets, 0.3).total), value(fd_objective(ba, tp.targets, 0.3).total), 1e-14);
}

TEST(FdObjective, KappaScalesPenaltyLinearly) {
  TwoPass tp;
  Tape tape;
  const SiameseOutputs out = tp.run(tape, tp.masks(1), tp.masks(2));
  const double base = value(fd_objective(out, tp.targets, 0.0).total);
  const double k1 = value(fd_objective(out, tp.targets, 0.25).total) - base;
  const double k2 = value(fd_objective(out, tp.targets, 0.5).total) - base;
  EXPECT_GT(k1, 0.0);
  EXPECT_NEAR(k2, 2 * k1, 1e-14);
}

TEST(FdObjective, SharedParametersSumPerCopyGradients) {
  TwoPass tp;
  const MaskSet a = tp.masks(3), b = tp.masks(4);
  const double kappa = 0.0;  // the penalty couples the copies; without it the sum is exact
  tp.model.zero_grad();
  {
    Tape tape;
    const SiameseOutputs out = tp.run(tape, a, b);
    tape.backward(fd_objective(out, tp.targets, kappa).total);
  }
  std::vector<Tensor> joint;
  for (const Parameter& p : tp.model.parameters()) joint.push_back(p.grad);
  tp.model.zero_grad();
  for (const MaskSet* m : {&a, &b}) {
    Tape tape;
    const ForwardResult f = forward(bind(tape, tp.model, *m), tp.inputs, *m, zero_carry(tp.config, 3));
    tape.backward(scale(target_loss(f.steps, tp.targets), 0.5));
  }
  for (std::size_t k = 0; k < joint.size(); ++k) {
    for (std::size_t i = 0; i < joint[k].size(); ++i) {
      EXPECT_NEAR(joint[k][i], tp.model.parameters()[k].grad[i], 1e-14);
    }
  }
}

TEST(FdObjective, GradientMatchesFiniteDifferences) {
  TwoPass tp;
  const MaskSet a = tp.masks(3), b = tp.masks(4);
  const auto fn = [&](Tape&, const std::vector<Var>& nodes) {
    SiameseOutputs out;
    out.first = forward(bind_nodes(tp.model, nodes, a), tp.inputs, a, zero_carry(tp.config, 3)).steps;
    out.second = forward(bind_nodes(tp.model, nodes, b), tp.inputs, b, zero_carry(tp.config, 3)).steps;
    return fd_objective(out, tp.targets, 5.0).total;
  };
  EXPECT_LE(max_grad_error(fn, parameter_values(tp.model)), 1e-6);
}

TEST(EldObjective, RateZeroHasNoPenalty) {
  TwoPass tp;
  tp.config = tp.config.without_dropout();
  tp.model = LmModel::initialize(tp.config, 17);
  Tape tape;
  const SiameseOutputs out = tp.run(tape, tp.masks(1), tp.mask_free());
  EXPECT_EQ(value(eld_objective(out, tp.targets, 1.0).penalty), 0.0);
}

TEST(EldObjective, MaskFreePassReceivesNoPenaltyGradient) {
  TwoPass tp;
  Tape tape;
  SiameseOutputs out = tp.run(tape, tp.masks(1), tp.mask_free());
  // Penalty only: the mask-free logits are leaves so their gradient is visible.
  std::vector<StepOutput> free_leaves;
  for (const StepOutput& s : out.second) {
    const Var v = tape.leaf(s.logits.value());
    free_leaves.push_back({v, v, v});
  }
  const Var pen = eld_penalty(out.first, free_leaves, 2.0);
  tape.backward(pen);
  for (const StepOutput& s : free_leaves) EXPECT_TRUE(s.logits.grad().empty() || s.logits.grad() == Tensor(s.logits.shape()));
  // Shifting the mask-free input changes the value.
  std::vector<StepOutput> shifted = free_leaves;
  for (StepOutput& s : shifted) {
    Tensor t = s.logits.value();
    t[0] += 1.0;
    const Var v = tape.constant(t);
    s = {v, v, v};
  }
  EXPECT_NE(value(eld_penalty(out.first, shifted, 2.0)), value(pen));
}

TEST(EldmObjective, DiffersFromEldByHalfTheTargetGap) {
  TwoPass tp;
  Tape tape;
  const SiameseOutputs out = tp.run(tape, tp.masks(1), tp.mask_free());
  const double drop = value(target_loss(out.first, tp.targets));
  const double free = value(target_loss(out.second, tp.targets));
  const Objective eld = eld_objective(out, tp.targets, 0.6);
  const Objective eldm = eldm_objective(out, tp.targets, 0.6);
  EXPECT_EQ(value(eld.penalty), value(eldm.penalty));
  EXPECT_NEAR(value(eldm.total) - value(eld.total), 0.5 * (free - drop), 1e-13);
}

TEST(EldmObjective, RateZeroEqualsFdWithIdenticalMasks) {
  TwoPass tp;
  tp.config = tp.config.without_dropout();
  tp.model = LmModel::initialize(tp.config, 17);
  Tape tape;
  const SiameseOutputs out = tp.run(tape, tp.mask_free(), tp.mask_free());
  EXPECT_EQ(value(eldm_objective(out, tp.targets, 0.4).total), value(fd_objective(out, tp.targets, 0.4).total));
}

TEST(PiObjective, KappaZeroIsSingleCopyLoss) {
  TwoPass tp;
  Tape tape;
  const SiameseOutputs out = tp.run(tape, tp.masks(1), tp.masks(2));
  EXPECT_EQ(value(pi_objective(out, tp.targets, 0.0).total), value(target_loss(out.first, tp.targets)));
  const SiameseOutputs same = tp.run(tape, tp.masks(1), tp.masks(1));
  EXPECT_EQ(value(pi_objective(same, tp.targets, 0.9).total), value(target_loss(same.first, tp.targets)));
}

TEST(PiObjective, SecondCopyGradientComesFromPenaltyOnly) {
  Rng rng(12);
  for (double kappa : {0.0, 1.5}) {
    Tape tape;
    SiameseOutputs out;
    out.first = steps_of(tape, {randn({2, 4}, rng)});
    out.second = steps_of(tape, {randn({2, 4}, rng)});
    const Targets y = {{1, 3}};
    tape.backward(pi_objective(out, y, kappa).total);
    const Tensor& g = out.second[0].logits.grad();
    if (kappa == 0.0) {
      EXPECT_TRUE(g.empty() || g == Tensor(g.shape()));
    } else {
      // d/dp_j of kappa/(mT) (1/B) ||p_i - p_j||^2.
      const double c = kappa / (4.0 * 1.0) / 2.0;
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double pi = out.first[0].logits.value()[i], pj = out.second[0].logits.value()[i];
        EXPECT_NEAR(g[i], -2.0 * c * (pi - pj), 1e-14);
      }
    }
  }
}

TEST(BuildObjective, LabelWeightsRestrictTargetsOnly) {
  TwoPass tp;
  Tape tape;
  const SiameseOutputs out = tp.run(tape, tp.masks(1), tp.masks(2));
  RegularizerSpec spec;
  spec.kinds = {RegKind::fd};
  spec.kappa = 0.5;
  const std::vector<double> w = {1.0, 0.0, 1.0};
  const Objective full = build_objective(spec, out, tp.targets);
  const Objective part = build_objective(spec, out, tp.targets, w);
  EXPECT_EQ(value(full.penalty), value(part.penalty));
  EXPECT_LT(value(part.target), value(full.target));
  const std::vector<double> none = {0.0, 0.0, 0.0};
  const Objective unl = build_objective(spec, out, tp.targets, none);
  EXPECT_EQ(value(unl.target), 0.0);
  EXPECT_EQ(value(unl.total), value(unl.penalty));
}

TEST(BuildObjective, AuxiliaryTermsStackOnBaseline) {
  TwoPass tp;
  Tape tape;
  const SiameseOutputs both = tp.run(tape, tp.masks(1), tp.masks(2));
  SiameseOutputs out;
  out.first = both.first;
  out.first_initial_hidden = both.first_initial_hidden;
  RegularizerSpec spec;
  spec.kinds = {RegKind::ar, RegKind::tar, RegKind::pr};
  spec.alpha = 2.0;
  spec.beta = 1.0;
  spec.gamma = 0.5;
  const Objective obj = build_objective(spec, out, tp.targets);
  double expected = 0.0;
  Var prev = out.first_initial_hidden;
  for (const StepOutput& s : out.first) {
    expected += value(r_ar(s.masked_hidden, 2.0)) + value(r_tar(s.hidden, prev, 1.0)) + value(r_pr(s.logits, 0.5));
    prev = s.hidden;
  }
  EXPECT_NEAR(value(obj.penalty), expected / 3.0, 1e-13);
  EXPECT_NEAR(value(obj.total), value(obj.target) + value(obj.penalty), 1e-13);
}

TEST(RegularizerSpec, Validation) {
  RegularizerSpec s;
  s.kinds = {RegKind::fd, RegKind::pi};
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s.kinds = {RegKind::fd, RegKind::ar};
  s.kappa = -1.0;
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s.kappa = 0.1;
  EXPECT_NO_THROW(s.validate());
  EXPECT_EQ(s.siamese(), RegKind::fd);
  EXPECT_TRUE(s.two_pass());
  EXPECT_FALSE(s.second_pass_mask_free());
  s.kinds = {RegKind::eldm};
  EXPECT_TRUE(s.second_pass_mask_free());
  for (RegKind k : {RegKind::none, RegKind::fd, RegKind::eld, RegKind::eldm, RegKind::pi, RegKind::ar, RegKind::tar,
                    RegKind::pr}) {
    EXPECT_EQ(reg_kind_from_string(to_string(k)), k);
  }
}
