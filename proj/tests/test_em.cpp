#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "cascade/em.hpp"
#include "cascade/errors.hpp"
#include "support.hpp"

using namespace cascade;

namespace {

Dataset labels(const std::vector<std::pair<double, int>>& ev, double T, int L) {
  std::vector<Event> e;
  for (auto [t, l] : ev) e.push_back({t, Label{l}, 0});
  return Dataset::build(std::move(e), T, MarkSchema::categorical(L));
}

ModelSpec baseline_only(double rate, std::vector<double> probs) {
  ModelSpec m;
  m.name = "base";
  m.baseline = {HomogeneousRate{rate}, CategoricalPrior{std::move(probs)}, true};
  return m;
}

KernelComponent component(FertilitySpec f, TransitionSpec t, DelaySpec d, std::string name = "k") {
  return {std::move(name), std::move(f), std::move(t), std::move(d), SourceFilter::any, ""};
}

// Three events and a one-component model small enough to write every
// responsibility by hand.
struct Toy {
  Dataset data = labels({{1.0, 0}, {2.0, 1}, {2.5, 0}}, 4.0, 2);
  ModelSpec model;
  Toy() {
    model = baseline_only(0.5, {0.6, 0.4});
    Eigen::MatrixXd theta(2, 2);
    theta << 0.7, 0.3, 0.2, 0.8;
    model.components.push_back(component(ConstantFertility{0.8}, CategoricalTransition{theta, std::nullopt},
                                         ExponentialDelay{1.5}));
    model.epsilon = 0.0;
  }
};

}  // namespace

TEST(Intensity, BaselineOnly) {
  const Dataset empty = labels({}, 10, 2);
  EXPECT_DOUBLE_EQ(intensity(baseline_only(2.0, {0.5, 0.5}), empty, 1.0, Label{0}), 1.0);
}

TEST(Intensity, IdentityMismatchLeavesBaseline) {
  ModelSpec m = baseline_only(2.0, {0.5, 0.5});
  m.components.push_back(component(ConstantFertility{1.0}, IdentityTransition{}, ExponentialDelay{1.0}));
  const Dataset h = labels({{1.0, 0}}, 10, 2);
  EXPECT_DOUBLE_EQ(intensity(m, h, 2.0, Label{1}), 1.0);
}

TEST(Intensity, SingleParentKernel) {
  ModelSpec m = baseline_only(2.0, {1.0});
  m.components.push_back(component(ConstantFertility{1.0}, IdentityTransition{}, ExponentialDelay{1.0}));
  const Dataset h = labels({{1.0, 0}}, 10, 1);
  EXPECT_NEAR(intensity(m, h, 2.0, Label{0}), 2.0 + std::exp(-1.0), 1e-15);
  // parents must be strictly earlier
  EXPECT_DOUBLE_EQ(intensity(m, h, 1.0, Label{0}), 2.0);
}

TEST(LogLikelihood, BaselineClosedForm) {
  EXPECT_NEAR(log_likelihood(baseline_only(2.0, {1.0}), labels({{0.5, 0}}, 1.0, 1)), -2.0 + std::log(2.0), 1e-15);
  EXPECT_NEAR(log_likelihood(baseline_only(0.7, {1.0}), labels({}, 3.0, 1)), -2.1, 1e-15);
}

TEST(LogLikelihood, NullComponentChangesNothing) {
  const Toy toy;
  ModelSpec with = toy.model;
  with.components.push_back(component(ConstantFertility{0.0}, IdentityTransition{}, ExponentialDelay{2.0}, "null"));
  EXPECT_DOUBLE_EQ(log_likelihood(with, toy.data), log_likelihood(toy.model, toy.data));
}

TEST(LogLikelihood, ZeroIntensityIsFlagged) {
  try {
    (void)log_likelihood(baseline_only(0.0, {1.0}), labels({{0.5, 0}}, 1.0, 1));
    FAIL();
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("event 0"), std::string::npos) << e.what();
  }
}

TEST(LogLikelihood, ToyMatchesHandComputation) {
  const Toy toy;
  const double k = 0.8 * 1.5;
  const double l0 = 0.5 * 0.6;
  const double l1 = 0.5 * 0.4 + k * 0.3 * std::exp(-1.5);
  const double l2 = 0.5 * 0.6 + k * 0.7 * std::exp(-1.5 * 1.5) + k * 0.2 * std::exp(-1.5 * 0.5);
  const double comp = 0.5 * 4.0 + 0.8 * ((1 - std::exp(-1.5 * 3.0)) + (1 - std::exp(-1.5 * 2.0)) + (1 - std::exp(-1.5 * 1.5)));
  EXPECT_NEAR(log_likelihood(toy.model, toy.data), std::log(l0) + std::log(l1) + std::log(l2) - comp, 1e-12);
  EXPECT_NEAR(compensator(toy.model, toy.data), comp, 1e-12);
}

TEST(EStep, ProportionalToKernelValues) {
  // baseline value 1, kernel value 3 (uniform density 1 times fertility 3)
  ModelSpec m = baseline_only(1.0, {1.0});
  m.components.push_back(component(ConstantFertility{3.0}, IdentityTransition{}, UniformDelay{1.0}));
  const auto z = e_step(m, labels({{1.0, 0}, {1.5, 0}}, 5, 1));
  ASSERT_EQ(z.rows(), 2u);
  ASSERT_EQ(z.row(0).size(), 1u);
  EXPECT_EQ(z.row(0)[0].component, kBaselineCause);
  EXPECT_DOUBLE_EQ(z.row(0)[0].z, 1.0);
  ASSERT_EQ(z.row(1).size(), 2u);
  EXPECT_DOUBLE_EQ(z.row(1)[0].z, 0.25);
  EXPECT_DOUBLE_EQ(z.row(1)[1].z, 0.75);
}

TEST(EStep, ToyRatioTable) {
  const Toy toy;
  const auto z = e_step(toy.model, toy.data);
  const double k = 0.8 * 1.5;
  const double b1 = 0.5 * 0.4, p10 = k * 0.3 * std::exp(-1.5);
  const double b2 = 0.5 * 0.6, p20 = k * 0.7 * std::exp(-2.25), p21 = k * 0.2 * std::exp(-0.75);
  ASSERT_EQ(z.rows(), 3u);
  ASSERT_EQ(z.row(1).size(), 2u);
  EXPECT_NEAR(z.row(1)[0].z, b1 / (b1 + p10), 1e-12);
  EXPECT_NEAR(z.row(1)[1].z, p10 / (b1 + p10), 1e-12);
  ASSERT_EQ(z.row(2).size(), 3u);
  const double s = b2 + p20 + p21;
  EXPECT_NEAR(z.row(2)[0].z, b2 / s, 1e-12);
  EXPECT_EQ(z.row(2)[1].parent, 0u);
  EXPECT_NEAR(z.row(2)[1].z, p20 / s, 1e-12);
  EXPECT_EQ(z.row(2)[2].parent, 1u);
  EXPECT_NEAR(z.row(2)[2].z, p21 / s, 1e-12);
}

TEST(EStep, SimultaneousEventsAreNotParents) {
  ModelSpec m = baseline_only(1.0, {1.0});
  m.components.push_back(component(ConstantFertility{1.0}, IdentityTransition{}, ExponentialDelay{1.0}));
  const auto z = e_step(m, labels({{1.0, 0}, {1.0, 0}}, 5, 1));
  EXPECT_EQ(z.row(1).size(), 1u);
}

TEST(EStep, RowsSumToOneAndBoundIsTight) {
  for (int family = 0; family < fixtures::kFamilies; ++family) {
    const auto in = fixtures::make_instance(family, 3);
    const auto z = e_step(in.init, in.data);
    for (std::size_t r = 0; r < z.rows(); ++r) {
      double s = 0;
      for (const auto& c : z.row(r)) s += c.z;
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
    const double ll = log_likelihood(in.init, in.data);
    EXPECT_NEAR(lower_bound(in.init, in.data, z), ll, 1e-9 * std::abs(ll)) << in.family;
    // responsibilities from another model give a looser bound
    const auto other = e_step(in.truth, in.data);
    EXPECT_LE(lower_bound(in.init, in.data, other), ll + 1e-9 * std::abs(ll)) << in.family;
  }
}

TEST(EStep, TruncationIsSound) {
  for (int family : {1, 3, 5, 7}) {
    auto in = fixtures::make_instance(family, 5);
    ModelSpec exact = in.truth, cut = in.truth;
    exact.epsilon = 0.0;
    cut.epsilon = 1e-6;
    const double a = log_likelihood(exact, in.data), b = log_likelihood(cut, in.data);
    EXPECT_LT(std::abs(a - b), 1e-4 * std::abs(a)) << in.family;
  }
}

TEST(EStep, WorkerCountDoesNotChangeResult) {
  const auto in = fixtures::make_instance(3, 8);
  const auto a = e_step(in.init, in.data, 1);
  const auto b = e_step(in.init, in.data, 4);
  ASSERT_EQ(a.causes.size(), b.causes.size());
  for (std::size_t i = 0; i < a.causes.size(); ++i) EXPECT_EQ(a.causes[i].z, b.causes[i].z);
  EXPECT_EQ(log_likelihood(in.init, in.data, 1), log_likelihood(in.init, in.data, 3));
}

TEST(MStep, BaselineRate) {
  const Dataset d = labels({{1, 0}, {2, 1}, {4, 0}, {6, 0}, {9, 1}}, 10, 2);
  const ModelSpec m = m_step(baseline_only(3.0, {0.5, 0.5}), d, e_step(baseline_only(3.0, {0.5, 0.5}), d));
  EXPECT_DOUBLE_EQ(std::get<HomogeneousRate>(m.baseline.rate).rate, 0.5);
  EXPECT_DOUBLE_EQ(std::get<CategoricalPrior>(m.baseline.prior).probs[0], 0.6);
}

TEST(MStep, PeriodicBucketRates) {
  ModelSpec m = baseline_only(1.0, {1.0});
  m.baseline.rate = PeriodicRate{2.0, {1.0, 1.0}};
  // T = 3: bucket 0 covers (0,1] and (2,3] (duration 2), bucket 1 covers (1,2]
  const Dataset d = labels({{0.5, 0}, {1.5, 0}, {1.7, 0}, {2.2, 0}}, 3, 1);
  const ModelSpec out = m_step(m, d, e_step(m, d));
  const auto& r = std::get<PeriodicRate>(out.baseline.rate).rates;
  EXPECT_DOUBLE_EQ(r[0], 1.0);
  EXPECT_DOUBLE_EQ(r[1], 2.0);
}

TEST(MStep, ExponentialDelayFromAssignedGaps) {
  ModelSpec m = baseline_only(1.0, {1.0});
  m.components.push_back(component(ConstantFertility{0.5}, IdentityTransition{}, ExponentialDelay{3.0}));
  const Dataset d = labels({{1, 0}, {3, 0}, {5, 0}}, 1000, 1);
  Responsibilities z;
  z.child = {0, 1, 2};
  z.offsets = {0, 1, 2, 3};
  z.causes = {{0, kBaselineCause, 0, 1.0}, {0, 0, 0, 1.0}, {1, 0, 0, 1.0}};
  z.intensity = {1, 1, 1};
  const ModelSpec out = m_step(m, d, z);
  EXPECT_NEAR(std::get<ExponentialDelay>(out.components[0].delay).rate, 0.5, 1e-12);
  // same z, same output
  const ModelSpec again = m_step(m, d, z);
  EXPECT_EQ(std::get<ExponentialDelay>(again.components[0].delay).rate,
            std::get<ExponentialDelay>(out.components[0].delay).rate);
  EXPECT_EQ(std::get<ConstantFertility>(again.components[0].fertility).alpha0,
            std::get<ConstantFertility>(out.components[0].fertility).alpha0);
}

TEST(Normalize, ScalesToEventCount) {
  const Dataset d = labels({{1, 0}, {2, 0}, {3, 0}, {4, 0}}, 10, 1);
  // compensator 8 = 2N: every rate halves
  const ModelSpec n = normalize(baseline_only(0.8, {1.0}), d);
  EXPECT_DOUBLE_EQ(std::get<HomogeneousRate>(n.baseline.rate).rate, 0.4);
  EXPECT_DOUBLE_EQ(std::get<HomogeneousRate>(normalize(baseline_only(0.4, {1.0}), d).baseline.rate).rate, 0.4);
}

TEST(Normalize, NeverLowersLikelihood) {
  for (int i = 0; i < 20; ++i) {
    const auto in = fixtures::make_instance(i % fixtures::kFamilies, 100 + i);
    const ModelSpec n = normalize(in.init, in.data);
    EXPECT_NEAR(compensator(n, in.data), static_cast<double>(in.data.target_count()),
                1e-10 * static_cast<double>(in.data.target_count()));
    EXPECT_GE(log_likelihood(n, in.data), log_likelihood(in.init, in.data) - 1e-9) << in.family;
  }
}

TEST(Fit, ZeroIterationsKeepsInitialSpec) {
  const Toy toy;
  EmOptions o;
  o.max_iters = 0;
  const auto r = fit(toy.model, toy.data, o);
  ASSERT_EQ(r.train_ll.size(), 1u);
  EXPECT_EQ(r.iterations, 0);
  EXPECT_EQ(std::get<ExponentialDelay>(r.model.components[0].delay).rate, 1.5);
  EXPECT_DOUBLE_EQ(r.train_ll[0], log_likelihood(toy.model, toy.data));
}

TEST(Fit, MonotoneAcrossFamilies) {
  for (int family = 0; family < fixtures::kFamilies; ++family) {
    const auto in = fixtures::make_instance(family, 11);
    EmOptions o;
    o.max_iters = 25;
    const auto r = fit(in.init, in.data, o);
    for (std::size_t i = 1; i < r.train_ll.size(); ++i)
      EXPECT_GE(r.train_ll[i], r.train_ll[i - 1] - 1e-8 * std::abs(r.train_ll[i - 1])) << in.family << " step " << i;
  }
}

TEST(Fit, NearOptimumSelfConsistent) {
  const auto in = fixtures::make_instance(3, 21, 400, 500);
  EmOptions o;
  o.max_iters = 200;
  o.tol = 1e-7;
  const auto r = fit(in.truth, in.data, o);
  EXPECT_TRUE(r.converged);
  const auto again = fit(r.model, in.data, o);
  EXPECT_LT(std::abs(again.train_ll.back() - r.train_ll.back()), 1e-5 * std::abs(r.train_ll.back()));
  EXPECT_LE(again.iterations, 3);
}

TEST(Fit, Deterministic) {
  const auto in = fixtures::make_instance(7, 4);
  EmOptions o;
  o.max_iters = 10;
  const auto a = fit(in.init, in.data, o);
  o.workers = 3;
  const auto b = fit(in.init, in.data, o);
  EXPECT_EQ(a.train_ll, b.train_ll);
  std::ostringstream ta, tb;
  write_trace_csv(ta, a);
  write_trace_csv(tb, b);
  EXPECT_EQ(ta.str(), tb.str());
}

TEST(Fit, TraceCsvLayout) {
  const Toy toy;
  EmOptions o;
  o.max_iters = 2;
  const auto r = fit(toy.model, toy.data, o, &toy.data);
  std::ostringstream out;
  write_trace_csv(out, r);
  std::istringstream in(out.str());
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "iteration,train_ll,test_ll,share_k,delay_mean_k");
}

TEST(FastPath, TwoEventKernelValue) {
  ModelSpec m = baseline_only(0.5, {1.0});
  m.components.push_back(component(ConstantFertility{1.0}, IdentityTransition{}, ExponentialDelay{1.0}));
  m.epsilon = 0.0;
  const Dataset d = labels({{1, 0}, {2, 0}}, 3, 1);
  ASSERT_TRUE(fast_path_applies(m, d));
  const auto s = fast_estep_exponential(m, d);
  EXPECT_NEAR(s.intensity[1] - 0.5, std::exp(-1.0), 1e-15);
  EXPECT_NEAR(s.intensity[1] - 0.5, 0.36788, 1e-5);
  EXPECT_DOUBLE_EQ(s.intensity[0], 0.5);
}

TEST(FastPath, SingleEventHasNoTriggeredIntensity) {
  ModelSpec m = baseline_only(0.5, {1.0});
  m.components.push_back(component(ConstantFertility{1.0}, IdentityTransition{}, ExponentialDelay{1.0}));
  const auto s = fast_estep_exponential(m, labels({{1, 0}}, 3, 1));
  EXPECT_DOUBLE_EQ(s.intensity[0], 0.5);
  EXPECT_DOUBLE_EQ(s.components[0].credit, 0.0);
}

TEST(FastPath, MatchesDirectStatistics) {
  std::mt19937_64 rng(99);
  MarkSchema schema;
  ModelSpec truth = fixtures::family_truth(5, rng, schema);
  // exponential delays only: two plain components with distinct rates
  truth.components[0].delay = ExponentialDelay{3.0};
  truth.components.push_back(component(ConstantFertility{0.2}, IdentityTransition{}, ExponentialDelay{0.4}, "slow"));
  const Dataset d = simulate(truth, schema, 160.0, 7).data;
  ASSERT_GT(d.size(), 150u);
  ModelSpec m = truth;
  m.epsilon = 0.0;
  ASSERT_TRUE(fast_path_applies(m, d));
  const auto fast = fast_estep_exponential(m, d);
  const auto direct = collect_stats(m, d, e_step(m, d));
  const auto diff = fixtures::compare_stats(fast, direct);
  EXPECT_LT(diff.worst, 1e-9) << diff.where;
}

TEST(FastPath, RejectsOutsideDomain) {
  ModelSpec m = baseline_only(0.5, {1.0});
  m.components.push_back(component(ConstantFertility{1.0}, IdentityTransition{}, GammaDelay{2.0, 1.0}));
  EXPECT_FALSE(fast_path_applies(m, labels({{1, 0}}, 3, 1)));
  EXPECT_ANY_THROW((void)fast_estep_exponential(m, labels({{1, 0}}, 3, 1)));
}
