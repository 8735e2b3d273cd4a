#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

#include "test_support.hpp"
#include "zoforge/errors.hpp"
#include "zoforge/objectives.hpp"
#include "zoforge/optimizer.hpp"
#include "zoforge/theorylab.hpp"
#include "zoforge/train.hpp"

namespace zoforge {
namespace {

using testing::master_with_unit_probe;

ParamStore scalar_store(double v) { return ParamStore({GroupDesc{"theta", 0, 1}}, {v}); }

double max_gap(const ParamStore& a, const ParamStore& b) {
  double gap = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) gap = std::max(gap, std::abs(a.values()[i] - b.values()[i]));
  return gap;
}

TEST(Schedules, ConstantLearningRate) {
  const LrSchedule s{LrScheduleKind::constant, 0.1, 50};
  for (std::uint64_t t : {0u, 7u, 49u}) EXPECT_EQ(lr_at(s, t), 0.1);
}

TEST(Schedules, LinearDecayMidpoint) {
  const LrSchedule s{LrScheduleKind::linear_decay, 1.0, 10};
  EXPECT_EQ(lr_at(s, 0), 1.0);
  EXPECT_EQ(lr_at(s, 5), 0.5);
}

TEST(Schedules, LinearIncreaseEndpointsAndRounding) {
  const NSchedule s{NScheduleKind::linear_increase, 1, 16, 100};
  EXPECT_EQ(n_at(s, 0), 1u);
  EXPECT_EQ(n_at(s, 99), 16u);
  for (std::uint64_t t = 1; t < 100; ++t) EXPECT_GE(n_at(s, t), n_at(s, t - 1));
  EXPECT_EQ(n_at({NScheduleKind::constant, 4, 4, 10}, 3), 4u);
}

TEST(Schedules, StepOutOfRangeThrows) {
  EXPECT_THROW(lr_at({LrScheduleKind::constant, 0.1, 10}, 10), InvalidArgument);
  EXPECT_THROW(n_at({NScheduleKind::linear_increase, 1, 4, 10}, 10), InvalidArgument);
}

TEST(Schedules, LearningRateCoupledToN) {
  OptimizerConfig opt;
  opt.lr = {LrScheduleKind::constant, 0.01, 100};
  opt.n_schedule = {NScheduleKind::linear_increase, 2, 8, 100};
  opt.couple_lr_to_n = true;
  EXPECT_EQ(opt.lr_for_step(0), 0.01);
  EXPECT_EQ(opt.lr_for_step(99), 0.04);
}

RunConfig hand_run() {
  RunConfig run;
  run.master = master_with_unit_probe();
  run.steps = 1;
  run.estimator.epsilon = 0.1;
  run.estimator.z_dist = ZDist::sphere;
  return run;
}

TEST(MezoStep, HandCase) {
  const QuadraticObjective q({{1.0}, {}, {}});
  const RunConfig run = hand_run();
  OptimizerConfig opt;
  opt.lr.eta0 = 0.1;
  auto theta = scalar_store(2.0);
  MezoState state(run, opt, q, theta);
  const auto record = mezo_step(theta, q, state, run);
  EXPECT_NEAR(record.projected_grads.at(0), 2.0, 1e-12);
  EXPECT_NEAR(theta.values()[0], 1.8, 1e-12);
  EXPECT_EQ(state.step(), 1u);
}

TEST(MezoStep, ZeroLearningRateLeavesThetaUnchanged) {
  const QuadraticObjective q({{1, 2, 3, 4}, {}, {}});
  RunConfig run;
  run.steps = 20;
  OptimizerConfig opt;
  opt.lr.eta0 = 0.0;
  const auto theta0 = init_params(q, Seed{1}, 1.0);
  auto theta = theta0;
  MezoState state(run, opt, q, theta);
  for (int t = 0; t < 20; ++t) mezo_step(theta, q, state, run);
  EXPECT_LT(max_gap(theta, theta0), 1e-12);
}

TEST(MezoStep, SameConfigIsBitwiseDeterministic) {
  const QuadraticObjective q({{1, 2, 3, 4, 5}, {}, gaussian_shifts(10, 5, 0.2, Seed{4})});
  RunConfig run;
  run.master = Seed{99};
  run.steps = 100;
  run.batch_size = 3;
  run.estimator.n = 2;
  OptimizerConfig opt;
  opt.n_schedule.n0 = opt.n_schedule.n1 = 2;
  opt.algo = Algo::adam;
  opt.lr.eta0 = 0.01;
  const auto theta0 = init_params(q, Seed{1}, 1.0);
  const auto a = train(run, opt, q, theta0);
  const auto b = train(run, opt, q, theta0);
  EXPECT_EQ(max_gap(a.params, b.params), 0.0);
  EXPECT_EQ(a.trajectory, b.trajectory);
  EXPECT_EQ(a.metrics, b.metrics);
}

GradRecord unit_record(double pg) {
  GradRecord r;
  r.seeds = {[] {
    for (std::uint64_t s = 0;; ++s) {
      if (sample_sphere(Seed{s}, 1)[0] == 1.0) return Seed{s};
    }
  }()};
  r.projected_grads = {pg};
  return r;
}

TEST(Adam, DegenerateBetasGiveASignStep) {
  OptimizerConfig opt;
  opt.algo = Algo::adam;
  opt.beta1 = 0.0;
  opt.beta2 = 0.0;
  opt.eps_adam = 1e-8;
  Updater up(opt, 1, 1);
  auto theta = scalar_store(5.0);
  up.apply(theta, unit_record(2.0), ZDist::sphere, {true}, {}, 0.1);
  EXPECT_NEAR(5.0 - theta.values()[0], 0.1, 1e-8);
  up.apply(theta, unit_record(-7.0), ZDist::sphere, {true}, {}, 0.1);
  EXPECT_NEAR(5.0 - theta.values()[0], 0.0, 1e-8);
}

TEST(Adam, FirstStepIsNormalizedGradient) {
  OptimizerConfig opt;
  opt.algo = Algo::adam;
  const std::size_t d = 6;
  ParamStore theta({GroupDesc{"theta", 0, d}}, std::vector<double>(d, 1.0));
  GradRecord r;
  r.seeds = {Seed{11}, Seed{12}};
  r.projected_grads = {0.7, -1.3};
  std::vector<double> g(d, 0.0);
  for (std::size_t j = 0; j < 2; ++j) {
    const auto z = materialize_noise(theta, {r.seeds[j], ZDist::gaussian}, {true});
    for (std::size_t i = 0; i < d; ++i) g[i] += r.projected_grads[j] * z[i] / 2.0;
  }
  Updater up(opt, d, 1);
  up.apply(theta, r, ZDist::gaussian, {true}, {}, 0.05);
  for (std::size_t i = 0; i < d; ++i) {
    EXPECT_NEAR(theta.values()[i], 1.0 - 0.05 * g[i] / (std::abs(g[i]) + opt.eps_adam), 1e-12);
  }
}

TEST(Momentum, KeepsAnExponentialAverage) {
  OptimizerConfig opt;
  opt.algo = Algo::momentum;
  opt.beta1 = 0.5;
  Updater up(opt, 1, 1);
  auto theta = scalar_store(0.0);
  up.apply(theta, unit_record(4.0), ZDist::sphere, {true}, {}, 1.0);
  EXPECT_EQ(theta.values()[0], -2.0);
  up.apply(theta, unit_record(4.0), ZDist::sphere, {true}, {}, 1.0);
  EXPECT_EQ(theta.values()[0], -5.0);
}

TEST(WeightDecay, ShrinksTrainableEntriesAfterTheUpdate) {
  OptimizerConfig opt;
  opt.weight_decay = 0.5;
  Updater up(opt, 3, 2);
  ParamStore theta({GroupDesc{"a", 0, 2}, GroupDesc{"b", 2, 1}}, {2.0, -4.0, 8.0});
  GradRecord r;
  r.seeds = {Seed{1}};
  r.projected_grads = {0.0};
  up.apply(theta, r, ZDist::gaussian, {true, false}, {}, 0.1);
  EXPECT_EQ(theta.values()[0], 2.0 * 0.95);
  EXPECT_EQ(theta.values()[1], -4.0 * 0.95);
  EXPECT_EQ(theta.values()[2], 8.0);
}

struct AdamPair {
  double gap = 0.0;
  AuxAllocationAudit dense;
  AuxAllocationAudit reconstruct;
};

// Drives dense and reconstruct Adam side by side on a 10-D quadratic and
// records the largest coordinate gap seen at any step.
AdamPair adam_pair(std::size_t window, std::uint64_t steps) {
  const QuadraticObjective q({{1, 2, 3, 4, 5, 0.5, 0.25, 1.5, 2.5, 3.5}, {}, {}});
  RunConfig run;
  run.master = Seed{7};
  run.steps = steps;
  OptimizerConfig opt;
  opt.algo = Algo::adam;
  opt.beta1 = 0.9;
  opt.beta2 = 0.999;
  opt.lr.eta0 = 0.01;
  OptimizerConfig rec = opt;
  rec.history = HistoryMode::reconstruct;
  rec.history_window = window;
  auto a = init_params(q, Seed{3}, 1.0);
  auto b = a;
  MezoState sa(run, opt, q, a);
  MezoState sb(run, rec, q, b);
  AdamPair out;
  for (std::uint64_t t = 0; t < steps; ++t) {
    mezo_step(a, q, sa, run);
    mezo_step(b, q, sb, run);
    out.gap = std::max(out.gap, max_gap(a, b));
  }
  out.dense = sa.updater().audit();
  out.reconstruct = sb.updater().audit();
  return out;
}

TEST(AdamReconstruct, AutomaticWindowMatchesDenseState) {
  const auto r = adam_pair(0, 300);
  EXPECT_LT(r.gap, 1e-8);
}

TEST(AdamReconstruct, AutomaticWindowCoversTheSlowerMoment) {
  OptimizerConfig opt;
  opt.algo = Algo::adam;
  opt.beta1 = 0.9;
  opt.beta2 = 0.999;
  opt.history = HistoryMode::reconstruct;
  const auto k = opt.resolved_window();
  EXPECT_LE(std::pow(0.999, static_cast<double>(k)), 1e-8);
  EXPECT_GT(std::pow(0.999, static_cast<double>(k - 1)), 1e-8);
  opt.algo = Algo::momentum;
  EXPECT_EQ(opt.resolved_window(), 175u);
}

TEST(AdamReconstruct, FirstMomentWindowOnlyLeavesASecondMomentGap) {
  // A window sized by beta1 alone (K = 200) drops second-moment mass that
  // still carries weight 0.999^200 ~ 0.82, so the gap after 300 steps is far
  // above 1e-8. This documents why the automatic window uses max(beta).
  const auto r = adam_pair(200, 300);
  EXPECT_GT(r.gap, 1e-8);
  const auto early = adam_pair(200, 200);
  EXPECT_LT(early.gap, 1e-8);
}

TEST(AdamReconstruct, HoldsNoDenseStateVectors) {
  const auto r = adam_pair(50, 100);
  EXPECT_EQ(r.dense.dense_vectors, 2u);
  EXPECT_EQ(r.dense.persistent_scalars, 20u);
  EXPECT_EQ(r.reconstruct.dense_vectors, 0u);
  // 50 records of one seed and one gradient each, plus one mask flag and
  // one step index.
  EXPECT_EQ(r.reconstruct.peak_persistent_scalars, 50u * 4u);
  EXPECT_LE(r.reconstruct.peak_transient_scalars, 3u * 10u);
}

TEST(Stages, ResolveAndValidate) {
  const ParamStore s({GroupDesc{"head", 0, 2}, GroupDesc{"body", 2, 3}}, std::vector<double>(5));
  const auto plan = resolve_stages(s, {{{"head"}, 10}, {{"all"}, 20}}, 30);
  ASSERT_EQ(plan.size(), 2u);
  EXPECT_EQ(plan[0].mask, (GroupMask{true, false}));
  EXPECT_EQ(plan[1].mask, (GroupMask{true, true}));
  EXPECT_EQ(mask_at(plan, 9), plan[0].mask);
  EXPECT_EQ(mask_at(plan, 10), plan[1].mask);
  EXPECT_EQ(resolve_stages(s, {}, 7).at(0).steps, 7u);
  EXPECT_THROW(resolve_stages(s, {{{"head"}, 0}, {{"all"}, 30}}, 30), InvalidArgument);
  EXPECT_THROW(resolve_stages(s, {{{"head"}, 10}}, 30), InvalidArgument);
  EXPECT_THROW(resolve_stages(s, {{{"tail"}, 30}}, 30), InvalidArgument);
  EXPECT_NE(plan_layout_hash(s, plan), plan_layout_hash(s, resolve_stages(s, {}, 30)));
}

TEST(Train, ZeroStepStageIsRejected) {
  const QuadraticObjective q({{1, 1}, {}, {}});
  RunConfig run;
  run.steps = 10;
  run.stages = {{{"all"}, 0}, {{"all"}, 10}};
  EXPECT_THROW(train(run, {}, q, q.blueprint()), InvalidArgument);
}

TEST(Train, RankTwoQuadraticConvergesAtTheTheoryRate) {
  const QuadraticObjective q(low_rank_quadratic(50, 2));
  const auto theta0 = init_params(q, Seed{5}, 1.0);
  RunConfig run;
  run.master = Seed{7};
  run.steps = 5000;
  run.estimator.z_dist = ZDist::sphere;
  OptimizerConfig opt;
  opt.lr.eta0 = 1.0 / sphere_gamma(50, 2.0, 1);
  const auto result = train(run, opt, q, theta0);
  EXPECT_LT(result.metrics.back().loss, 1e-6 * result.metrics.front().loss);
}

TEST(Train, StagedMlpRunDoesNotLoseGroundAtStageBoundaries) {
  DatasetSpec ds;
  ds.kind = DatasetKind::two_moons;
  ds.samples = 100;
  const MlpObjective mlp(make_dataset(ds), {2, 8, 2}, MlpLoss::cross_entropy);
  RunConfig run;
  run.master = Seed{3};
  run.steps = 5000;
  run.batch_size = 20;
  run.eval_every = 1000;
  run.stages = {{{"W2", "b2"}, 1000}, {{"all"}, 4000}};
  OptimizerConfig opt;
  opt.lr.eta0 = 0.02;
  const auto result = train(run, opt, mlp, init_params(mlp, Seed{4}, 0.5));
  ASSERT_EQ(result.metrics.size(), 6u);
  const double init = result.metrics[0].loss;
  const double after_head = result.metrics[1].loss;
  const double after_all = result.metrics[5].loss;
  EXPECT_LE(after_head, init);
  EXPECT_LE(after_all, after_head);
  double best = init;
  for (const auto& row : result.metrics) {
    const double next = std::min(best, row.loss);
    EXPECT_LE(next, best);
    best = next;
  }
}

TEST(Train, FrozenGroupsNeverMove) {
  DatasetSpec ds;
  ds.kind = DatasetKind::two_moons;
  ds.samples = 40;
  const MlpObjective mlp(make_dataset(ds), {2, 4, 2}, MlpLoss::cross_entropy);
  const auto theta0 = init_params(mlp, Seed{4}, 0.5);
  RunConfig run;
  run.steps = 50;
  run.stages = {{{"W2", "b2"}, 50}};
  OptimizerConfig opt;
  opt.lr.eta0 = 0.05;
  const auto result = train(run, opt, mlp, theta0);
  for (const char* name : {"W1", "b1"}) {
    const auto a = theta0.group_values(name);
    const auto b = result.params.group_values(name);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
  }
}

TEST(Train, MetricsCsvLayout) {
  const QuadraticObjective q({{1, 2}, {}, {}});
  RunConfig run;
  run.steps = 10;
  run.eval_every = 5;
  OptimizerConfig opt;
  opt.lr.eta0 = 0.1;
  const auto result = train(run, opt, q, init_params(q, Seed{1}, 1.0));
  const auto csv = metrics_csv(result.metrics);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "step,loss,lr,n,grad_norm_est,elapsed_ns");
  EXPECT_EQ(csv.find('\r'), std::string::npos);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
  EXPECT_EQ(result.metrics[1].step, 5u);
  EXPECT_EQ(result.metrics[2].step, 10u);
  for (const auto& row : result.metrics) EXPECT_EQ(row.elapsed_ns, 0);
}

TEST(Train, ForwardPassesCountProbesAndEvaluations) {
  const QuadraticObjective q({{1, 2}, {}, {}});
  RunConfig run;
  run.steps = 10;
  run.estimator.n = 3;
  run.eval_every = 5;
  OptimizerConfig opt;
  opt.n_schedule.n0 = opt.n_schedule.n1 = 3;
  const auto result = train(run, opt, q, q.blueprint());
  // initial loss + 10 steps x 3 probes x 2 + two metric rows
  EXPECT_EQ(result.forward_passes, 1u + 60u + 2u);
}

TEST(Train, DivergenceIsReported) {
  const QuadraticObjective q({{1, 1, 1, 1}, {}, {}});
  RunConfig run;
  run.steps = 200;
  run.eval_every = 1;
  OptimizerConfig opt;
  opt.lr.eta0 = 50.0;
  EXPECT_THROW(train(run, opt, q, init_params(q, Seed{1}, 1.0)), DivergenceError);
}

TEST(Train, WorkersDoNotChangeTheRun) {
  const QuadraticObjective q({{1, 2, 3, 4}, {}, gaussian_shifts(8, 4, 0.2, Seed{1})});
  RunConfig run;
  run.steps = 50;
  run.batch_size = 4;
  run.estimator.n = 4;
  OptimizerConfig opt;
  opt.n_schedule.n0 = opt.n_schedule.n1 = 4;
  opt.lr.eta0 = 0.05;
  const auto theta0 = init_params(q, Seed{1}, 1.0);
  const auto a = train(run, opt, q, theta0);
  run.workers = 3;
  const auto b = train(run, opt, q, theta0);
  EXPECT_EQ(a.trajectory, b.trajectory);
  EXPECT_EQ(max_gap(a.params, b.params), 0.0);
}

TEST(OptimizerConfig, Validation) {
  OptimizerConfig opt;
  EXPECT_NO_THROW(opt.validate());
  opt.lr.eta0 = -1.0;
  EXPECT_THROW(opt.validate(), InvalidArgument);
  opt = {};
  opt.beta1 = 1.0;
  EXPECT_THROW(opt.validate(), InvalidArgument);
  opt = {};
  opt.n_schedule = {NScheduleKind::constant, 0, 0, 0};
  EXPECT_THROW(opt.validate(), InvalidArgument);
}

}  // namespace
}  // namespace zoforge
