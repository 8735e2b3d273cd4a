#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

#include "test_support.hpp"
#include "zoforge/errors.hpp"
#include "zoforge/objectives.hpp"

namespace zoforge {
namespace {

double norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> diff(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) diff[i] = a[i] - b[i];
  return norm(diff) / std::max(norm(b), 1e-12);
}

ParamStore scalar_store(double v) { return ParamStore({GroupDesc{"theta", 0, 1}}, {v}); }

TEST(Quadratic, ScalarValueAndGradient) {
  const QuadraticObjective q({{1.0}, {0.0}, {}});
  const auto theta = scalar_store(2.0);
  const auto batch = full_batch(q);
  EXPECT_EQ(q.eval(theta, batch), 2.0);
  EXPECT_EQ(q.gradient(theta, batch), std::vector<double>{2.0});
}

TEST(Quadratic, EffectiveRankAndConstants) {
  const QuadraticObjective q({{1, 1, 0, 0}, {}, {}});
  EXPECT_EQ(q.ell(), 1.0);
  EXPECT_EQ(q.effective_rank(), 2.0);
  EXPECT_EQ(q.mu_pl(), 1.0);
  const QuadraticObjective p({{4, 2, 1}, {}, {}});
  EXPECT_EQ(p.ell(), 4.0);
  EXPECT_EQ(p.effective_rank(), 7.0 / 4.0);
  EXPECT_EQ(p.mu_pl(), 1.0);
}

TEST(Quadratic, ZeroAtTheOptimum) {
  const QuadraticObjective q({{2, 1, 1}, {0.5, -1.0, 3.0}, {}});
  const ParamStore theta({GroupDesc{"theta", 0, 3}}, {0.5, -1.0, 3.0});
  EXPECT_EQ(q.eval(theta, full_batch(q)), 0.0);
  EXPECT_EQ(norm(q.gradient(theta, full_batch(q))), 0.0);
}

TEST(Quadratic, RejectsAllZeroOrNegativeSpectra) {
  EXPECT_THROW(QuadraticObjective({{0, 0}, {}, {}}), InvalidArgument);
  EXPECT_THROW(QuadraticObjective({{1, -1}, {}, {}}), InvalidArgument);
}

TEST(Quadratic, LowRankSpectrum) {
  const auto spec = low_rank_quadratic(6, 2);
  EXPECT_EQ(spec.eigenvalues, (std::vector<double>{1, 1, 0, 0, 0, 0}));
}

TEST(Quadratic, ShiftsAreCenteredSoTheFullBatchKeepsItsMinimum) {
  const QuadraticObjective q({{1, 1, 1}, {}, gaussian_shifts(8, 3, 0.5, Seed{2})});
  EXPECT_EQ(q.dataset_size(), 8u);
  const ParamStore theta({GroupDesc{"theta", 0, 3}}, {0, 0, 0});
  EXPECT_NEAR(norm(q.gradient(theta, full_batch(q))), 0.0, 1e-15);
  const std::vector<std::size_t> one{3};
  EXPECT_GT(norm(q.gradient(theta, one)), 0.0);
}

TEST(Logistic, ExpMarginLossIsOneAtZero) {
  DatasetSpec ds;
  ds.samples = 30;
  ds.features = 4;
  const LogisticObjective obj(make_dataset(ds), LogisticLoss::exp_margin);
  EXPECT_EQ(full_loss(obj, obj.blueprint()), 1.0);
}

Dataset hand_dataset(std::vector<std::vector<double>> rows, std::vector<int> labels) {
  Dataset d;
  d.samples = rows.size();
  d.features = rows.front().size();
  d.classes = 2;
  for (const auto& r : rows) d.x.insert(d.x.end(), r.begin(), r.end());
  d.labels = std::move(labels);
  return d;
}

TEST(Logistic, SingleExampleGradientIsMinusExpOfMinusT) {
  const LogisticObjective obj(hand_dataset({{1.0}}, {1}), LogisticLoss::exp_margin);
  for (double t : {-1.5, 0.0, 0.7, 2.0}) {
    ParamStore theta({GroupDesc{"w", 0, 1}}, {t});
    EXPECT_NEAR(obj.gradient(theta, full_batch(obj))[0], -std::exp(-t), 1e-15);
  }
}

TEST(Logistic, EmptyBatchThrows) {
  const LogisticObjective obj(hand_dataset({{1.0}}, {1}), LogisticLoss::log_sigmoid);
  EXPECT_THROW(obj.eval(obj.blueprint(), {}), InvalidArgument);
}

TEST(Logistic, PredictsBySignOfTheMargin) {
  const LogisticObjective obj(hand_dataset({{1.0, 0.0}, {-1.0, 0.0}}, {1, 0}), LogisticLoss::log_sigmoid);
  const ParamStore theta({GroupDesc{"w", 0, 2}}, {2.0, 0.0});
  EXPECT_EQ(obj.predict(theta, 0), 1);
  EXPECT_EQ(obj.predict(theta, 1), 0);
}

// Every analytic gradient against central differences at 20 random points.
void expect_gradient_matches(const Objective& obj, Seed seed, double scale) {
  const auto batch = full_batch(obj);
  for (std::uint64_t p = 0; p < 20; ++p) {
    const auto theta = init_params(obj, derive_step_seed(seed, p, 0), scale);
    const auto analytic = obj.gradient(theta, batch);
    const auto numeric = finite_difference_gradient(obj, theta, batch, 1e-5);
    EXPECT_LT(relative_error(numeric, analytic), 1e-6) << obj.name() << " point " << p;
  }
}

TEST(FiniteDifference, QuadraticWithShifts) {
  const QuadraticObjective q({{3, 1, 0.5, 0, 2}, {0.1, 0.2, 0.3, 0.4, 0.5}, gaussian_shifts(6, 5, 0.3, Seed{1})});
  expect_gradient_matches(q, Seed{10}, 1.0);
}

TEST(FiniteDifference, LogisticBothLosses) {
  DatasetSpec ds;
  ds.samples = 50;
  ds.features = 5;
  for (LogisticLoss loss : {LogisticLoss::exp_margin, LogisticLoss::log_sigmoid}) {
    const LogisticObjective obj(make_dataset(ds), loss);
    expect_gradient_matches(obj, Seed{11}, 0.5);
  }
}

TEST(FiniteDifference, MlpSquareLoss) {
  DatasetSpec ds;
  ds.kind = DatasetKind::two_moons;
  ds.samples = 40;
  const MlpObjective mlp(make_dataset(ds), {2, 4, 1}, MlpLoss::square);
  expect_gradient_matches(mlp, Seed{12}, 0.7);
}

TEST(FiniteDifference, MlpCrossEntropyTwoHiddenLayers) {
  DatasetSpec ds;
  ds.kind = DatasetKind::synthetic_blobs;
  ds.samples = 30;
  ds.features = 3;
  ds.classes = 3;
  const MlpObjective mlp(make_dataset(ds), {3, 5, 4, 3}, MlpLoss::cross_entropy);
  expect_gradient_matches(mlp, Seed{13}, 0.5);
}

TEST(FiniteDifference, MlpWithAdapter) {
  DatasetSpec ds;
  ds.kind = DatasetKind::synthetic_blobs;
  ds.samples = 30;
  ds.features = 3;
  ds.classes = 3;
  const MlpObjective mlp(make_dataset(ds), {3, 6, 3}, MlpLoss::cross_entropy);
  const auto batch = full_batch(mlp);
  for (std::uint64_t p = 0; p < 20; ++p) {
    auto theta = attach_low_rank_adapter(init_params(mlp, Seed{p}, 0.5), {"W1", 2, 3.0, Seed{p + 100}});
    auto b = theta.group_values("W1.lora_B");
    auto stream = NoiseStream::gaussian(Seed{p + 200});
    for (double& v : b) v = 0.3 * stream.next();
    EXPECT_LT(relative_error(finite_difference_gradient(mlp, theta, batch), mlp.gradient(theta, batch)), 1e-6);
  }
}

TEST(FiniteDifference, Cubic) {
  const CubicObjective cubic(4);
  expect_gradient_matches(cubic, Seed{14}, 1.0);
}

TEST(Mlp, ZeroWeightsSquareLossZeroTargets) {
  Dataset d = hand_dataset({{0.3, -1.0}, {2.0, 0.5}, {-0.7, 0.1}}, {0, 0, 0});
  const MlpObjective mlp(d, {2, 4, 1}, MlpLoss::square);
  EXPECT_EQ(full_loss(mlp, mlp.blueprint()), 0.0);
}

TEST(Mlp, GroupCountForTwoFourOne) {
  Dataset d = hand_dataset({{0.3, -1.0}}, {1});
  const MlpObjective mlp(d, {2, 4, 1}, MlpLoss::square);
  const auto bp = mlp.blueprint();
  ASSERT_EQ(bp.groups().size(), 4u);
  EXPECT_EQ(bp.groups()[0].name, "W1");
  EXPECT_EQ(bp.groups()[1].name, "b1");
  EXPECT_EQ(bp.groups()[2].name, "W2");
  EXPECT_EQ(bp.groups()[3].name, "b2");
  EXPECT_EQ(bp.size(), 2u * 4u + 4u + 4u + 1u);
  EXPECT_TRUE(bp.groups()[0].is_matrix());
}

TEST(Mlp, ShapeMismatchesThrow) {
  Dataset d = hand_dataset({{0.3, -1.0}}, {1});
  EXPECT_THROW(MlpObjective(d, {3, 4, 1}, MlpLoss::square), InvalidArgument);
  EXPECT_THROW(MlpObjective(d, {2, 1}, MlpLoss::square), InvalidArgument);
  EXPECT_THROW(MlpObjective(d, {2, 4, 3}, MlpLoss::cross_entropy), InvalidArgument);
}

TEST(Metric, PerfectClassifierScoresMinusOne) {
  const LogisticObjective model(hand_dataset({{1.0}, {2.0}, {-1.0}, {-3.0}}, {1, 1, 0, 0}), LogisticLoss::log_sigmoid);
  const MetricObjective acc(model, Metric::accuracy);
  const ParamStore theta({GroupDesc{"w", 0, 1}}, {1.0});
  EXPECT_EQ(acc.eval(theta, full_batch(acc)), -1.0);
  EXPECT_EQ(MetricObjective(model, Metric::macro_f1).eval(theta, full_batch(acc)), -1.0);
}

TEST(Metric, ConstantPredictorOnBalancedBatchScoresMinusHalf) {
  // With zero margin every example is assigned the same class.
  const LogisticObjective model(hand_dataset({{1.0}, {2.0}, {-1.0}, {-3.0}}, {1, 1, 0, 0}), LogisticLoss::log_sigmoid);
  const MetricObjective acc(model, Metric::accuracy);
  EXPECT_EQ(acc.eval(model.blueprint(), full_batch(acc)), -0.5);
}

TEST(Metric, MacroF1HandCase) {
  // Reference value from scikit-learn's f1_score(average="macro").
  const std::vector<int> labels{0, 0, 1, 1, 2, 2};
  const std::vector<int> predictions{0, 1, 1, 1, 2, 0};
  EXPECT_NEAR(macro_f1(labels, predictions), 0.65555555555555556, 1e-15);
}

TEST(Metric, HasNoGradientAndStaysInRange) {
  DatasetSpec ds;
  ds.samples = 40;
  const LogisticObjective model(make_dataset(ds), LogisticLoss::log_sigmoid);
  const MetricObjective acc(model, Metric::accuracy);
  EXPECT_FALSE(acc.has_gradient());
  EXPECT_THROW(acc.gradient(model.blueprint(), full_batch(acc)), InvalidArgument);
  for (std::uint64_t s = 0; s < 10; ++s) {
    const double v = acc.eval(init_params(acc, Seed{s}, 1.0), full_batch(acc));
    EXPECT_LE(v, 0.0);
    EXPECT_GE(v, -1.0);
  }
}

TEST(SigmaTrace, IdenticalExamplesGiveZero) {
  const LogisticObjective obj(hand_dataset({{1.0, 2.0}, {1.0, 2.0}, {1.0, 2.0}}, {1, 1, 1}), LogisticLoss::exp_margin);
  const ParamStore theta({GroupDesc{"w", 0, 2}}, {0.3, -0.4});
  EXPECT_EQ(estimate_sigma_trace(obj, theta, 1), 0.0);
}

TEST(SigmaTrace, FullBatchObjectiveGivesZero) {
  const QuadraticObjective q({{1, 2}, {}, {}});
  EXPECT_EQ(estimate_sigma_trace(q, init_params(q, Seed{1}, 1.0), 1), 0.0);
}

TEST(SigmaTrace, ThreeExampleHandDataset) {
  // Reference values: B times the mean squared deviation of the minibatch
  // gradient over every size-B subset, summed by a script.
  const LogisticObjective obj(hand_dataset({{1, 0}, {0, 2}, {1, 1}}, {1, 0, 1}), LogisticLoss::exp_margin);
  const ParamStore theta({GroupDesc{"w", 0, 2}}, {0.3, -0.2});
  EXPECT_NEAR(estimate_sigma_trace(obj, theta, 1), 1.0058511715796676, 1e-14);
  EXPECT_NEAR(estimate_sigma_trace(obj, theta, 2), 0.50292558578983382, 1e-14);
  EXPECT_NEAR(estimate_sigma_trace(obj, theta, 3), 0.0, 1e-15);
}

TEST(SigmaTrace, NeedsAnOracle) {
  const LogisticObjective model(hand_dataset({{1.0}, {-1.0}}, {1, 0}), LogisticLoss::log_sigmoid);
  const MetricObjective acc(model, Metric::accuracy);
  EXPECT_THROW(estimate_sigma_trace(acc, acc.blueprint(), 1), InvalidArgument);
}

TEST(GaussNewton, RankOneForSingleDirectionData) {
  const LogisticObjective obj(hand_dataset({{1, 2}, {2, 4}, {-1, -2}}, {1, 1, 0}), LogisticLoss::exp_margin);
  const auto rank = gauss_newton_effective_rank(obj, obj.blueprint());
  EXPECT_NEAR(rank.effective_rank, 1.0, 1e-12);
}

TEST(Logistic, HessianSpectrumOfExpMarginAtZero) {
  // At w = 0 the exp-margin Hessian is (1/N) sum x x^T.
  const LogisticObjective obj(hand_dataset({{1, 0}, {0, 2}}, {1, 0}), LogisticLoss::exp_margin);
  const auto h = obj.hessian_spectrum(obj.blueprint());
  EXPECT_NEAR(h.trace, 2.5, 1e-14);
  EXPECT_NEAR(h.top_eigenvalue, 2.0, 1e-14);
  EXPECT_NEAR(h.effective_rank, 1.25, 1e-14);
}

TEST(Dataset, RegeneratesBitwiseAndHonorsMargin) {
  DatasetSpec ds;
  ds.samples = 100;
  ds.features = 3;
  ds.margin = 0.2;
  const auto a = make_dataset(ds);
  const auto b = make_dataset(ds);
  EXPECT_EQ(a.x, b.x);
  EXPECT_EQ(a.labels, b.labels);
  ds.seed = Seed{2};
  EXPECT_NE(make_dataset(ds).x, a.x);
}

TEST(Dataset, CsvExport) {
  testing::TempDir dir("dataset");
  DatasetSpec ds;
  ds.kind = DatasetKind::two_moons;
  ds.samples = 5;
  export_dataset_csv(make_dataset(ds), dir / "d.csv");
  const auto text = testing::read_text(dir.path() / "d.csv");
  EXPECT_EQ(text.substr(0, text.find('\n')), "feature_0,feature_1,label");
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 6);
}

TEST(CountingObjective, CountsEvaluations) {
  const QuadraticObjective q({{1.0}, {}, {}});
  CountingObjective counted(q);
  const auto theta = scalar_store(1.0);
  counted.eval(theta, full_batch(q));
  counted.eval(theta, full_batch(q));
  EXPECT_EQ(counted.evaluations(), 2u);
  counted.gradient(theta, full_batch(q));
  EXPECT_EQ(counted.evaluations(), 2u);
  counted.reset();
  EXPECT_EQ(counted.evaluations(), 0u);
}

}  // namespace
}  // namespace zoforge
