#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "dualprice/evaluation.hpp"
#include "dualprice/rng.hpp"

using namespace dualprice;

namespace {

// All capacity-respecting assignments by brute force.
double brute_force_best(std::size_t n, int m1, const std::vector<double>& values,
                        const std::vector<std::size_t>& caps) {
  std::vector<int> assign(n, 0);
  double best = -std::numeric_limits<double>::infinity();
  for (;;) {
    std::vector<std::size_t> used(m1, 0);
    bool ok = true;
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      used[assign[i]]++;
      total += values[i * m1 + assign[i]];
    }
    for (int t = 0; t < m1; ++t) {
      if (used[t] > caps[t]) ok = false;
    }
    if (ok && total > best) best = total;
    std::size_t i = 0;
    while (i < n && ++assign[i] == m1) assign[i++] = 0;
    if (i == n) break;
  }
  return best;
}

OutcomePredictor nn_model(const std::vector<double>& xs, const std::vector<double>& ys,
                          int treatment) {
  OutcomePredictor::KnnState st;
  st.k = 1;
  st.dim = 1;
  st.points = xs;
  st.outcomes = ys;
  return {PredictorKind::knn, Adjustment::direct, treatment, std::move(st)};
}

// Policy over one covariate reproducing the example scores via 1-NN.
PolicyArtifact example_a_artifact(double mu1) {
  OutcomeModelSet models;
  models.feature_dim = 1;
  models.treatment_count = 2;
  std::vector<double> xs = {0.0, 1.0, 2.0, 3.0};
  models.models.push_back(nn_model(xs, {0.0, 0.0, 0.0, 0.0}, 0));
  models.models.push_back(nn_model(xs, {1.0, 2.0, 3.0, 4.0}, 1));
  DualSolution dual;
  dual.mu = {0.0, mu1};
  dual.group_labels = {"all"};
  dual.group_counts = {4};
  ArtifactMetadata meta;
  meta.feature_dim = 1;
  return PolicyArtifact::make(std::move(models), std::move(dual), {},
                              CapacityVector({1.0, 0.25}), std::move(meta));
}

Dataset example_a_testset() {
  Dataset ds(1, 2);
  int g = ds.intern_group("all");
  for (int i = 0; i < 4; ++i) {
    double x[] = {static_cast<double>(i)};
    double po[] = {0.0, static_cast<double>(i + 1)};
    ds.add_row(x, g, 0, 0.0, po);
  }
  return ds;
}

}  // namespace

TEST_CASE("perfect foresight with open capacities is the row-wise max") {
  Rng rng(5);
  std::size_t n = 40;
  std::vector<double> values(n * 3);
  for (auto& v : values) v = rng.normal();
  auto pf = perfect_foresight(n, 3, values, CapacityVector({1.0, 1.0, 1.0}));
  double expect = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    expect += std::max({values[i * 3], values[i * 3 + 1], values[i * 3 + 2]});
  }
  CHECK(pf.total == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("perfect foresight on the example instance selects the best row") {
  std::vector<double> values = {0, 1, 0, 2, 0, 3, 0, 4};
  auto pf = perfect_foresight(4, 2, values, CapacityVector({1.0, 0.25}));
  CHECK(pf.total == doctest::Approx(4.0));
  CHECK(pf.assignment == std::vector<int>{0, 0, 0, 1});
}

TEST_CASE("adding a constant to one row shifts the total without moving it") {
  Rng rng(13);
  std::size_t n = 12;
  std::vector<double> values(n * 3);
  for (auto& v : values) v = rng.normal();
  CapacityVector caps({1.0, 0.25, 0.25});
  auto base = perfect_foresight(n, 3, values, caps);
  auto bumped = values;
  for (int t = 0; t < 3; ++t) bumped[5 * 3 + t] += 2.0;
  auto moved = perfect_foresight(n, 3, bumped, caps);
  CHECK(moved.total == doctest::Approx(base.total + 2.0).epsilon(1e-12));
  CHECK(moved.assignment == base.assignment);
}

TEST_CASE("perfect foresight equals brute force on 200 random instances") {
  Rng rng(2718);
  for (int trial = 0; trial < 200; ++trial) {
    std::size_t n = 1 + rng.uniform_index(8);
    int m = 1 + static_cast<int>(rng.uniform_index(2));
    int m1 = m + 1;
    std::vector<double> values(n * m1);
    for (auto& v : values) v = rng.normal();
    std::vector<double> b = {1.0};
    for (int t = 0; t < m; ++t) b.push_back(rng.uniform());
    CapacityVector caps(b);
    std::vector<std::size_t> icaps(m1);
    icaps[0] = n;
    for (int t = 1; t < m1; ++t) {
      icaps[t] = static_cast<std::size_t>(std::floor(b[t] * static_cast<double>(n)));
    }
    auto pf = perfect_foresight(n, m1, values, caps);
    double brute = brute_force_best(n, m1, values, icaps);
    CHECK(pf.total == brute);  // exact, zero tolerance
  }
}

TEST_CASE("perfect foresight total matches the dual optimum when caps are integral") {
  // Rows-to-treatments transportation is integral, so the flow total and the
  // price-based dual bound coincide; two independent routes to one number.
  Rng rng(31415);
  std::size_t n = 200;
  ScoreMatrix s;
  s.n = n;
  s.treatment_count = 3;
  s.values.resize(n * 3);
  for (auto& v : s.values) v = rng.uniform();
  s.groups.assign(n, 0);
  s.group_labels = {"all"};
  s.group_counts = {n};
  CapacityVector caps({1.0, 0.1, 0.05});  // 20 and 10 units exactly
  auto pf = perfect_foresight(n, 3, s.values, caps);
  auto dual = solve(s, caps, {}, 1e-10);
  CHECK(pf.total / static_cast<double>(n) == doctest::Approx(dual.objective).epsilon(1e-8));
}

TEST_CASE("forced no-treatment when every other capacity is zero") {
  Dataset ds = example_a_testset();
  auto artifact = example_a_artifact(3.5);
  auto report = evaluate_policy(artifact, ds, OutcomeSource::from_potential_outcomes(),
                                CapacityVector({1.0, 0.0}));
  CHECK(report.allocation_counts[0] == 4);
  CHECK(report.policy_outcome == doctest::Approx(0.0));
}

TEST_CASE("example policy hits the perfect foresight value") {
  Dataset ds = example_a_testset();
  auto artifact = example_a_artifact(3.5);
  auto report = evaluate_policy(artifact, ds, OutcomeSource::from_potential_outcomes(),
                                CapacityVector({1.0, 0.25}));
  CHECK(report.policy_outcome == doctest::Approx(1.0));
  CHECK(report.perfect_foresight_outcome == doctest::Approx(1.0));
  CHECK(report.ratio == doctest::Approx(1.0));
}

TEST_CASE("feasible policies never beat perfect foresight") {
  Rng rng(1618);
  for (int trial = 0; trial < 10; ++trial) {
    Dataset ds(1, 2);
    int g = ds.intern_group("all");
    std::size_t n = 30;
    for (std::size_t i = 0; i < n; ++i) {
      double x[] = {static_cast<double>(i)};
      double po[] = {rng.uniform(), rng.uniform() * 2.0};
      ds.add_row(x, g, 0, po[0], po);
    }
    std::vector<double> xs(n), y0(n), y1(n);
    for (std::size_t i = 0; i < n; ++i) {
      xs[i] = static_cast<double>(i);
      y0[i] = rng.uniform();
      y1[i] = rng.uniform();
    }
    OutcomeModelSet models;
    models.feature_dim = 1;
    models.treatment_count = 2;
    models.models.push_back(nn_model(xs, y0, 0));
    models.models.push_back(nn_model(xs, y1, 1));
    DualSolution dual;
    dual.mu = {0.0, 0.3};
    dual.group_labels = {"all"};
    dual.group_counts = {n};
    ArtifactMetadata meta;
    meta.feature_dim = 1;
    auto artifact = PolicyArtifact::make(std::move(models), std::move(dual), {},
                                         CapacityVector({1.0, 0.4}), std::move(meta));
    auto report = evaluate_policy(artifact, ds, OutcomeSource::from_potential_outcomes(),
                                  CapacityVector({1.0, 0.4}));
    CHECK(report.ratio <= 1.0 + 1e-12);
    // Cap compliance.
    CHECK(report.allocation_counts[1] <= static_cast<std::size_t>(0.4 * n));
  }
}

TEST_CASE("fairness report worked examples") {
  std::vector<std::string> labels = {"A", "B"};
  FairnessSpec none;
  {
    std::vector<int> assign = {1, 1, 1, 1};
    std::vector<double> outcomes = {1, 1, 1, 1};
    std::vector<int> groups = {0, 0, 1, 1};
    auto report = fairness_report(assign, outcomes, groups, labels, none);
    for (double gap : report.max_alloc_gap) CHECK(gap == doctest::Approx(0.0));
    CHECK_FALSE(report.priority_satisfied.has_value());
  }
  {
    std::vector<int> assign = {1, 1, 1, 0};
    std::vector<double> outcomes = {1, 1, 0, 0};
    std::vector<int> groups = {0, 0, 1, 1};
    auto report = fairness_report(assign, outcomes, groups, labels, none);
    CHECK(report.max_alloc_gap[1] == doctest::Approx(0.5));
  }
}

TEST_CASE("fairness report flags priority violations") {
  std::vector<std::string> labels = {"A", "B"};
  FairnessSpec spec;
  spec.kind = FairnessKind::alloc_minority_priority;
  spec.delta = 0.0;
  spec.minority = {"A"};
  spec.majority = {"B"};
  std::vector<int> assign = {0, 0, 1, 1};  // minority A never gets t=1
  std::vector<double> outcomes = {0, 0, 1, 1};
  std::vector<int> groups = {0, 0, 1, 1};
  auto report = fairness_report(assign, outcomes, groups, labels, spec);
  REQUIRE(report.priority_satisfied.has_value());
  CHECK_FALSE(*report.priority_satisfied);

  std::vector<int> fair_assign = {1, 0, 1, 0};
  auto ok = fairness_report(fair_assign, outcomes, groups, labels, spec);
  CHECK(*ok.priority_satisfied);
}

TEST_CASE("fairness report rejects groups missing from the data") {
  std::vector<std::string> labels = {"A", "B"};
  std::vector<int> assign = {0, 0};
  std::vector<double> outcomes = {0, 0};
  std::vector<int> groups = {0, 0};  // B absent
  CHECK_THROWS_AS(
      static_cast<void>(fairness_report(assign, outcomes, groups, labels, FairnessSpec{})),
      Error);
}

TEST_CASE("historical baseline replays observed outcomes") {
  Scenario sc;
  sc.sigma = 0.5;
  Dataset ds = generate(sc, 800, 27);
  BaselineSpec spec;
  spec.kind = BaselineKind::historical;
  auto report =
      baseline(spec, ds, CapacityVector({1.0, 0.3, 0.3}), OutcomeSource::from_potential_outcomes());
  double mean_y = 0.0;
  for (std::size_t i = 0; i < ds.size(); ++i) mean_y += ds.outcome(i);
  mean_y /= static_cast<double>(ds.size());
  CHECK(report.policy_outcome == doctest::Approx(mean_y).epsilon(1e-12));
}

TEST_CASE("no-treatment baseline sits near zero on the linear scenario") {
  Scenario sc;
  sc.sigma = 0.1;
  Dataset ds = generate(sc, 50000, 40);
  BaselineSpec spec;
  spec.kind = BaselineKind::no_treatment;
  auto report = baseline(spec, ds, CapacityVector({1.0, 0.1, 0.05}),
                         OutcomeSource::from_true_means(sc));
  // E[m0(X)] = 0 and Var(m0) = 0.625.
  double se = std::sqrt(0.625 / static_cast<double>(ds.size()));
  CHECK(std::abs(report.policy_outcome) < 3.0 * se);
}

TEST_CASE("random baseline respects caps and is deterministic in the seed") {
  Scenario sc;
  sc.sigma = 0.1;
  Dataset ds = generate(sc, 5000, 41);
  BaselineSpec spec;
  spec.kind = BaselineKind::random;
  spec.seed = 9;
  CapacityVector caps({1.0, 0.1, 0.05});
  auto a = baseline(spec, ds, caps, OutcomeSource::from_true_means(sc));
  auto b = baseline(spec, ds, caps, OutcomeSource::from_true_means(sc));
  CHECK(a.policy_outcome == b.policy_outcome);
  CHECK(a.allocation_counts[1] <= 500);
  CHECK(a.allocation_counts[2] <= 250);
  // Caps bind under uniform draws over three arms.
  CHECK(a.allocation_counts[1] == 500);
  CHECK(a.allocation_counts[2] == 250);
}

TEST_CASE("threshold baseline orders treatments by score") {
  Scenario sc;
  sc.sigma = 0.1;
  Dataset train = generate(sc, 4000, 42);
  Dataset test = generate(sc, 4000, 43);
  CapacityVector caps({1.0, 0.1, 0.05});
  BaselineSpec spec;
  spec.kind = BaselineKind::threshold;
  spec.score_column = 1;  // x2 drives the most supportive treatment
  spec.cutoffs = learn_threshold_cutoffs(train, spec.score_column, caps);
  CHECK(spec.cutoffs[2] >= spec.cutoffs[1]);
  auto report = baseline(spec, test, caps, OutcomeSource::from_true_means(sc));
  CHECK(report.allocation_counts[2] <= 200);
  CHECK(report.allocation_counts[1] <= 400);
  // The top-scoring rows that arrived before the caps filled got treatment 2.
  bool found_t2 = report.allocation_counts[2] > 0;
  CHECK(found_t2);
}

TEST_CASE("outcome sources fail loudly when data is missing") {
  Dataset ds(1, 2);
  int g = ds.intern_group("all");
  double x[] = {0.0};
  ds.add_row(x, g, 0, 1.0);
  auto source = OutcomeSource::from_potential_outcomes();
  CHECK_THROWS_AS(static_cast<void>(source.value(ds, 0, 1)), Error);
}
