#include <gtest/gtest.h>

#include <bit>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include "test_support.hpp"
#include "zoforge/errors.hpp"
#include "zoforge/estimators.hpp"
#include "zoforge/objectives.hpp"
#include "zoforge/theorylab.hpp"

namespace zoforge {
namespace {

const QuadraticObjective& half_square() {
  static const QuadraticObjective q({{1.0}, {}, {}});
  return q;
}

ParamStore scalar_store(double v) { return ParamStore({GroupDesc{"theta", 0, 1}}, {v}); }

Seed unit_sphere_seed() {
  for (std::uint64_t s = 0;; ++s) {
    if (sample_sphere(Seed{s}, 1)[0] == 1.0) return Seed{s};
  }
}

TEST(Spsa, HandCaseIsTheExactGradient) {
  auto theta = scalar_store(2.0);
  const NoiseSpec noise{unit_sphere_seed(), ZDist::sphere};
  const auto r = spsa_probe(theta, half_square(), full_batch(half_square()), 0.1, noise, theta.trainable_mask());
  EXPECT_NEAR(r.loss_plus, 2.205, 1e-12);
  EXPECT_NEAR(r.loss_minus, 1.805, 1e-12);
  EXPECT_NEAR(r.projected_grad, 2.0, 1e-12);
  EXPECT_NEAR(theta.values()[0], 2.0, 1e-15);
}

TEST(Spsa, EvenLossAtTheOriginHasZeroProjectedGradient) {
  const QuadraticObjective q({{3, 1, 2, 0.5}, {}, {}});
  for (std::uint64_t s = 0; s < 50; ++s) {
    for (double eps : {1e-4, 1e-2, 0.5}) {
      auto theta = q.blueprint();
      EXPECT_EQ(spsa_projected_grad(theta, q, full_batch(q), eps, {Seed{s}, ZDist::gaussian}), 0.0);
    }
  }
}

TEST(Spsa, UsesExactlyTwoEvaluations) {
  const QuadraticObjective q({{1, 2}, {}, {}});
  CountingObjective counted(q);
  auto theta = init_params(q, Seed{1}, 1.0);
  spsa_projected_grad(theta, counted, full_batch(q), 1e-3, {Seed{2}, ZDist::gaussian});
  EXPECT_EQ(counted.evaluations(), 2u);
}

TEST(Spsa, MonteCarloMeanMatchesTheGradient) {
  // Random spectrum in [1, 2] and unit offsets keep every |g_k| >= 1.
  auto draws = NoiseStream::gaussian(Seed{400});
  std::vector<double> eig(5), mu(5), x(5);
  for (int k = 0; k < 5; ++k) {
    eig[k] = 1.0 + std::abs(draws.next()) / (1.0 + std::abs(draws.next()));
    eig[k] = std::min(eig[k], 2.0);
    mu[k] = draws.next();
    x[k] = mu[k] + (draws.next() > 0 ? 1.0 : -1.0);
  }
  const QuadraticObjective q({eig, mu, {}});
  ParamStore theta({GroupDesc{"theta", 0, 5}}, x);
  const auto g = q.gradient(theta, full_batch(q));
  const int samples = 100000;
  std::vector<double> mean(5, 0.0);
  for (int s = 0; s < samples; ++s) {
    const NoiseSpec noise{Seed{static_cast<std::uint64_t>(s)}, ZDist::sphere};
    const double pg = spsa_projected_grad(theta, q, full_batch(q), 1e-3, noise);
    const auto z = materialize_noise(theta, noise, theta.trainable_mask());
    for (int k = 0; k < 5; ++k) mean[k] += pg * z[k] / samples;
  }
  for (int k = 0; k < 5; ++k) EXPECT_NEAR(mean[k] / g[k], 1.0, 0.02) << "coordinate " << k;
}

class NanAbove : public Objective {
 public:
  std::string name() const override { return "nan_above"; }
  std::size_t dataset_size() const override { return 1; }
  ParamStore blueprint() const override { return ParamStore({GroupDesc{"theta", 0, 1}}); }
  double eval(const ParamStore& theta, std::span<const std::size_t>) const override {
    return theta.values()[0] > 0.0 ? std::numeric_limits<double>::quiet_NaN() : 1.0;
  }
};

TEST(Spsa, NonFiniteLossNamesTheEvaluationAndRestoresTheta) {
  const NanAbove obj;
  const NoiseSpec noise{unit_sphere_seed(), ZDist::sphere};
  auto theta = scalar_store(0.0);
  try {
    spsa_probe(theta, obj, full_batch(obj), 0.1, noise, theta.trainable_mask());
    FAIL() << "expected NonFiniteLoss";
  } catch (const NonFiniteLoss& e) {
    EXPECT_EQ(e.evaluation(), "plus");
  }
  EXPECT_EQ(theta.values()[0], 0.0);
  const NoiseSpec flipped{[] {
                            for (std::uint64_t s = 0;; ++s) {
                              if (sample_sphere(Seed{s}, 1)[0] == -1.0) return Seed{s};
                            }
                          }(),
                          ZDist::sphere};
  try {
    spsa_probe(theta, obj, full_batch(obj), 0.1, flipped, theta.trainable_mask());
    FAIL() << "expected NonFiniteLoss";
  } catch (const NonFiniteLoss& e) {
    EXPECT_EQ(e.evaluation(), "minus");
  }
  EXPECT_EQ(theta.values()[0], 0.0);
}

TEST(ProbeRoundTrip, ReproducesTheResidueOfARealProbe) {
  const QuadraticObjective q({{1, 2, 3}, {}, {}});
  for (std::uint64_t s = 0; s < 20; ++s) {
    auto probed = init_params(q, Seed{s}, 1.0);
    auto replayed = probed;
    const NoiseSpec noise{Seed{s + 1000}, ZDist::gaussian};
    spsa_probe(probed, q, full_batch(q), 1e-3, noise, probed.trainable_mask());
    probe_round_trip(replayed, EstimatorKind::spsa, 1e-3, noise, replayed.trainable_mask());
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(probed.values()[i], replayed.values()[i]);
  }
}

TEST(NSpsa, SingleProbeEqualsPlainSpsa) {
  const QuadraticObjective q({{1, 2, 3}, {}, {}});
  auto a = init_params(q, Seed{3}, 1.0);
  auto b = a;
  const Seed master{44};
  const auto r = n_spsa(a, q, full_batch(q), 1, 1e-3, ZDist::gaussian, master, 9, a.trainable_mask());
  const double pg = spsa_projected_grad(b, q, full_batch(q), 1e-3, {probe_seed(master, 9, 0), ZDist::gaussian});
  ASSERT_EQ(r.record.projected_grads.size(), 1u);
  EXPECT_EQ(r.record.projected_grads[0], pg);
  EXPECT_EQ(r.record.seeds[0], probe_seed(master, 9, 0));
  EXPECT_EQ(r.record.step, 9u);
}

TEST(NSpsa, EvaluationCountIsTwoPerProbe) {
  const QuadraticObjective q({{1, 2, 3}, {}, {}});
  CountingObjective counted(q);
  auto theta = init_params(q, Seed{3}, 1.0);
  n_spsa(theta, counted, full_batch(q), 3, 1e-3, ZDist::gaussian, Seed{1}, 0, theta.trainable_mask());
  EXPECT_EQ(counted.evaluations(), 6u);
}

TEST(NSpsa, NormRatioForFourSphereProbes) {
  const QuadraticObjective q({{1, 2, 3, 1, 1, 0.5, 2, 1, 1, 1}, {}, {}});
  const auto theta = init_params(q, Seed{5}, 1.0);
  MonteCarlo mc;
  mc.samples = 10000;
  const auto report = check_norm_ratio(q, theta, 4, ZDist::sphere, mc);
  EXPECT_EQ(report.predicted, 3.25);
  EXPECT_TRUE(report.pass) << summary_line(report);
}

TEST(NSpsa, WorkerCountDoesNotChangeTheResult) {
  DatasetSpec ds;
  ds.kind = DatasetKind::synthetic_blobs;
  ds.samples = 30;
  ds.features = 3;
  ds.classes = 3;
  const MlpObjective mlp(make_dataset(ds), {3, 6, 3}, MlpLoss::cross_entropy);
  const auto theta0 = init_params(mlp, Seed{2}, 0.5);
  auto one = theta0;
  auto three = theta0;
  const auto a = n_spsa(one, mlp, full_batch(mlp), 5, 1e-3, ZDist::gaussian, Seed{8}, 4, one.trainable_mask());
  const auto b = n_spsa(three, mlp, full_batch(mlp), 5, 1e-3, ZDist::gaussian, Seed{8}, 4, three.trainable_mask(), {}, 3);
  EXPECT_EQ(a.record, b.record);
  EXPECT_EQ(a.mean_loss, b.mean_loss);
  for (std::size_t i = 0; i < one.size(); ++i) EXPECT_EQ(one.values()[i], three.values()[i]);
}

TEST(OnePoint, HandCase) {
  const Seed up = unit_sphere_seed();
  OnePointEstimator est;
  auto theta = scalar_store(1.2);
  const auto first = est.step(theta, half_square(), full_batch(half_square()), 0.1, {up, ZDist::sphere},
                              theta.trainable_mask());
  EXPECT_EQ(first.projected_grad, 0.0);
  ASSERT_TRUE(est.primed());
  EXPECT_NEAR(*est.previous_loss(), 0.845, 1e-12);
  theta.values()[0] = 1.0;
  const auto second = est.step(theta, half_square(), full_batch(half_square()), 0.1, {up, ZDist::sphere},
                               theta.trainable_mask());
  EXPECT_NEAR(second.projected_grad, -2.4, 1e-12);
  EXPECT_NEAR(theta.values()[0], 1.0, 1e-15);
}

TEST(OnePoint, PrimedCacheMatchesTheHandCase) {
  OnePointEstimator est;
  est.prime(0.845);
  auto theta = scalar_store(1.0);
  const auto r = est.step(theta, half_square(), full_batch(half_square()), 0.1, {unit_sphere_seed(), ZDist::sphere},
                          theta.trainable_mask());
  EXPECT_NEAR(r.projected_grad, -2.4, 1e-12);
}

TEST(OnePoint, IdenticalConsecutiveStatesGiveZero) {
  const QuadraticObjective q({{1, 2, 3}, {}, {}});
  OnePointEstimator est;
  auto theta = init_params(q, Seed{1}, 1.0);
  const NoiseSpec noise{Seed{5}, ZDist::gaussian};
  est.step(theta, q, full_batch(q), 1e-2, noise, theta.trainable_mask());
  EXPECT_EQ(est.step(theta, q, full_batch(q), 1e-2, noise, theta.trainable_mask()).projected_grad, 0.0);
}

TEST(OnePoint, OneEvaluationPerCall) {
  const QuadraticObjective q({{1, 2}, {}, {}});
  CountingObjective counted(q);
  OnePointEstimator est;
  auto theta = init_params(q, Seed{1}, 1.0);
  est.step(theta, counted, full_batch(q), 1e-2, {Seed{1}, ZDist::gaussian}, theta.trainable_mask());
  est.step(theta, counted, full_batch(q), 1e-2, {Seed{2}, ZDist::gaussian}, theta.trainable_mask());
  EXPECT_EQ(counted.evaluations(), 2u);
}

// Quadratic read through a store with groups {a: 2, b: 3}.
ParamStore split_store(std::vector<double> v) {
  const std::size_t rest = v.size() - 2;
  return ParamStore({GroupDesc{"a", 0, 2}, GroupDesc{"b", 2, rest}}, std::move(v));
}

TEST(VarianceModified, OnesEqualPlainSpsaBitwise) {
  const QuadraticObjective q({{1, 2, 3, 4, 5}, {}, {}});
  for (std::uint64_t s = 0; s < 20; ++s) {
    auto a = split_store({0.1, 0.2, -0.3, 0.4, 0.5});
    auto b = a;
    const NoiseSpec noise{Seed{s}, ZDist::gaussian};
    const std::vector<double> ones{1.0, 1.0};
    const double mod = variance_modified_spsa(a, q, full_batch(q), 1e-3, noise, ones, a.trainable_mask());
    const double plain = spsa_projected_grad(b, q, full_batch(q), 1e-3, noise);
    EXPECT_EQ(mod, plain);
  }
}

TEST(VarianceModified, ScalarsCancel) {
  auto theta = scalar_store(2.0);
  const std::vector<double> d{2.0};
  const double pg = variance_modified_spsa(theta, half_square(), full_batch(half_square()), 1e-4,
                                           {unit_sphere_seed(), ZDist::sphere}, d, theta.trainable_mask());
  EXPECT_NEAR(pg * d[0] * 1.0, 2.0, 1e-10);
}

TEST(VarianceModified, MonteCarloMeanIsUnbiasedWithParamNormScales) {
  const QuadraticObjective q({{1, 1, 1, 1, 1}, {}, {}});
  auto theta = split_store({1.0, -1.0, 1.0, 1.0, -1.0});
  const auto g = q.gradient(theta, full_batch(q));
  EstimatorConfig cfg;
  cfg.kind = EstimatorKind::variance_modified;
  cfg.scale_source = ScaleSource::param_norm;
  const auto d = build_scale_vector(theta, nullptr, full_batch(q), cfg, theta.trainable_mask(), Seed{0}, 0);
  EXPECT_NEAR(d[0], std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(d[1], std::sqrt(3.0), 1e-15);
  const int samples = 100000;
  std::vector<double> mean(5, 0.0);
  for (int s = 0; s < samples; ++s) {
    const NoiseSpec noise{Seed{static_cast<std::uint64_t>(s)}, ZDist::gaussian};
    const double pg = variance_modified_spsa(theta, q, full_batch(q), 1e-3, noise, d, theta.trainable_mask());
    const auto z = materialize_noise(theta, noise, theta.trainable_mask());
    for (int k = 0; k < 5; ++k) mean[k] += pg * d[k < 2 ? 0 : 1] * z[k] / samples;
  }
  for (int k = 0; k < 5; ++k) EXPECT_NEAR(mean[k] / g[k], 1.0, 0.02) << "coordinate " << k;
}

TEST(VarianceModified, RejectsNonPositiveScales) {
  auto theta = scalar_store(1.0);
  const std::vector<double> zero{0.0};
  EXPECT_THROW(variance_modified_spsa(theta, half_square(), full_batch(half_square()), 1e-3, {Seed{1}}, zero,
                                      theta.trainable_mask()),
               InvalidArgument);
  EXPECT_THROW(reciprocal_scale(std::vector<double>{1.0, -2.0}), InvalidArgument);
}

TEST(ExpectationModified, OnesEqualPlainSpsa) {
  const QuadraticObjective q({{1, 2, 3, 4, 5}, {}, {}});
  auto a = split_store({0.1, 0.2, -0.3, 0.4, 0.5});
  auto b = a;
  const NoiseSpec noise{Seed{3}, ZDist::gaussian};
  const std::vector<double> ones{1.0, 1.0};
  EXPECT_EQ(expectation_modified_spsa(a, q, full_batch(q), 1e-3, noise, ones, a.trainable_mask()),
            spsa_projected_grad(b, q, full_batch(q), 1e-3, noise));
}

std::vector<double> expectation_mean(ParamStore& theta, const QuadraticObjective& q, const std::vector<double>& d,
                                     int samples) {
  std::vector<double> mean(theta.size(), 0.0);
  for (int s = 0; s < samples; ++s) {
    const NoiseSpec noise{Seed{static_cast<std::uint64_t>(s)}, ZDist::gaussian};
    const double pg = expectation_modified_spsa(theta, q, full_batch(q), 1e-3, noise, d, theta.trainable_mask());
    const auto z = materialize_noise(theta, noise, theta.trainable_mask());
    for (std::size_t k = 0; k < theta.size(); ++k) mean[k] += pg * z[k] / samples;
  }
  return mean;
}

TEST(ExpectationModified, GroupNormScalesNormalizeEachGroup) {
  // Identity Hessian, so g = theta: group a has norm 3, group b norm 4.
  const QuadraticObjective q({{1, 1, 1, 1}, {}, {}});
  auto theta = ParamStore({GroupDesc{"a", 0, 2}, GroupDesc{"b", 2, 2}}, {1.8, 2.4, 3.2, -2.4});
  const std::vector<double> d{3.0, 4.0};
  const auto mean = expectation_mean(theta, q, d, 100000);
  const double ga[] = {0.6, 0.8};
  const double gb[] = {0.8, -0.6};
  auto angle = [](double x0, double x1, const double* u) {
    const double cosine = (x0 * u[0] + x1 * u[1]) / std::hypot(x0, x1);
    return std::acos(std::min(1.0, cosine));
  };
  EXPECT_LT(angle(mean[0], mean[1], ga), 0.02);
  EXPECT_LT(angle(mean[2], mean[3], gb), 0.02);
}

TEST(ExpectationModified, ScalingTheScaleVectorScalesTheMean) {
  const QuadraticObjective q({{1, 1, 1, 1}, {}, {}});
  auto theta = ParamStore({GroupDesc{"a", 0, 2}, GroupDesc{"b", 2, 2}}, {1.8, 2.4, 3.2, -2.4});
  const auto base = expectation_mean(theta, q, {3.0, 4.0}, 2000);
  const auto scaled = expectation_mean(theta, q, {6.0, 8.0}, 2000);
  for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(scaled[k], base[k] / 2.0, 1e-9 * std::abs(base[k]) + 1e-12);
}

TEST(GroupGradNorm, ZeroAtTheOptimum) {
  const QuadraticObjective q({{1, 2, 3}, {}, {}});
  auto theta = ParamStore({GroupDesc{"a", 0, 2}, GroupDesc{"b", 2, 1}}, {0, 0, 0});
  for (std::uint64_t s = 0; s < 20; ++s) {
    EXPECT_EQ(zo_group_grad_norm(theta, q, full_batch(q), 1e-3, {Seed{s}, ZDist::gaussian}, "a"), 0.0);
  }
}

TEST(GroupGradNorm, SingleDrawIsTheAbsoluteProjection) {
  const QuadraticObjective q({{1, 1, 1}, {}, {}});
  auto theta = ParamStore({GroupDesc{"a", 0, 2}, GroupDesc{"b", 2, 1}}, {3.0, 4.0, 7.0});
  for (std::uint64_t s = 0; s < 20; ++s) {
    const NoiseSpec noise{Seed{s}, ZDist::gaussian};
    const auto z = materialize_noise(theta, noise, {true, false});
    const double est = zo_group_grad_norm(theta, q, full_batch(q), 1e-3, noise, "a");
    EXPECT_NEAR(est, std::abs(3.0 * z[0] + 4.0 * z[1]), 1e-9);
  }
}

TEST(GroupGradNorm, MeanSquareEstimatesTheSquaredNorm) {
  const QuadraticObjective q({{1, 1, 1}, {}, {}});
  auto theta = ParamStore({GroupDesc{"a", 0, 2}, GroupDesc{"b", 2, 1}}, {3.0, 4.0, 7.0});
  const int samples = 100000;
  double mean = 0.0;
  for (int s = 0; s < samples; ++s) {
    const double e = zo_group_grad_norm(theta, q, full_batch(q), 1e-3, {Seed{static_cast<std::uint64_t>(s)}}, "a");
    mean += e * e / samples;
  }
  EXPECT_NEAR(mean / 25.0, 1.0, 0.03);
  EXPECT_THROW(zo_group_grad_norm(theta, q, full_batch(q), 1e-3, {Seed{1}}, "c"), InvalidArgument);
}

TEST(ScaleVector, ExternalAndMaskedGroups) {
  auto theta = split_store({1, 2, 3, 4, 5});
  EstimatorConfig cfg;
  cfg.kind = EstimatorKind::expectation_modified;
  cfg.scale_source = ScaleSource::external;
  cfg.external_scale = {2.0, 5.0};
  const auto d = build_scale_vector(theta, nullptr, {}, cfg, {false, true}, Seed{0}, 0);
  EXPECT_EQ(d, (std::vector<double>{1.0, 5.0}));
  cfg.external_scale = {2.0};
  EXPECT_THROW(build_scale_vector(theta, nullptr, {}, cfg, {true, true}, Seed{0}, 0), InvalidArgument);
}

TEST(ScaleVector, ParamNormIsFloored) {
  auto theta = split_store({0, 0, 3, 4, 0});
  EstimatorConfig cfg;
  cfg.kind = EstimatorKind::variance_modified;
  cfg.scale_source = ScaleSource::param_norm;
  cfg.min_scale = 1e-3;
  const auto d = build_scale_vector(theta, nullptr, {}, cfg, {true, true}, Seed{0}, 0);
  EXPECT_EQ(d[0], 1e-3);
  EXPECT_EQ(d[1], 5.0);
}

TEST(ScaleVector, GradNormIsDeterministicAndLeavesThetaAlone) {
  const QuadraticObjective q({{1, 1, 1, 1, 1}, {}, {}});
  auto theta = split_store({1, 2, 3, 4, 5});
  const std::vector<double> before(theta.values().begin(), theta.values().end());
  EstimatorConfig cfg;
  cfg.kind = EstimatorKind::variance_modified;
  cfg.scale_source = ScaleSource::grad_norm;
  cfg.norm_probes = 16;
  const auto a = build_scale_vector(theta, &q, full_batch(q), cfg, {true, true}, Seed{3}, 7);
  const auto b = build_scale_vector(theta, &q, full_batch(q), cfg, {true, true}, Seed{3}, 7);
  EXPECT_EQ(a, b);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(theta.values()[i], before[i], 1e-12);
  EXPECT_THROW(build_scale_vector(theta, nullptr, {}, cfg, {true, true}, Seed{3}, 7), InvalidArgument);
}

TEST(EstimatorConfig, Validation) {
  EstimatorConfig c;
  EXPECT_NO_THROW(c.validate());
  c.n = 0;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = {};
  c.epsilon = 0.0;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = {};
  c.kind = EstimatorKind::one_point;
  c.n = 2;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = {};
  c.scale_source = ScaleSource::param_norm;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c.kind = EstimatorKind::variance_modified;
  EXPECT_NO_THROW(c.validate());
}

TEST(Quantize, Bf16TruncatesTheFloat) {
  EXPECT_EQ(quantize_grad(std::numbers::pi, GradPrecision::bf16), 3.140625);
  EXPECT_EQ(quantize_grad(1.0 + std::ldexp(1.0, -10), GradPrecision::bf16), 1.0);
  EXPECT_EQ(quantize_grad(-2.0, GradPrecision::bf16), -2.0);
  EXPECT_EQ(quantize_grad(0.1, GradPrecision::f32), static_cast<double>(0.1f));
  EXPECT_EQ(quantize_grad(0.1, GradPrecision::f64), 0.1);
  EXPECT_EQ(grad_width(GradPrecision::bf16), 2u);
  EXPECT_EQ(grad_width(GradPrecision::f32), 4u);
  EXPECT_EQ(grad_width(GradPrecision::f64), 8u);
}

TEST(Quantize, Idempotent) {
  auto s = NoiseStream::gaussian(Seed{1});
  for (int i = 0; i < 1000; ++i) {
    const double v = 100.0 * s.next();
    for (auto p : {GradPrecision::bf16, GradPrecision::f32}) {
      const double q = quantize_grad(v, p);
      EXPECT_EQ(quantize_grad(q, p), q);
    }
  }
}

TEST(EnumNames, RoundTrip) {
  for (auto k : {EstimatorKind::spsa, EstimatorKind::one_point, EstimatorKind::variance_modified,
                 EstimatorKind::expectation_modified}) {
    EXPECT_EQ(parse_estimator_kind(to_string(k)), k);
  }
  for (auto p : {GradPrecision::bf16, GradPrecision::f32, GradPrecision::f64}) EXPECT_EQ(parse_grad_precision(to_string(p)), p);
  for (auto z : {ZDist::gaussian, ZDist::sphere}) EXPECT_EQ(parse_zdist(to_string(z)), z);
  EXPECT_THROW(parse_estimator_kind("nope"), InvalidArgument);
}

}  // namespace
}  // namespace zoforge
