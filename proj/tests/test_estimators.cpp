#include <doctest.h>

#include <array>
#include <cmath>

#include "dualprice/estimators.hpp"
#include "dualprice/rng.hpp"
#include "dualprice/synthetic.hpp"

using namespace dualprice;

namespace {

PropensityModel constant_propensity(std::vector<double> probs, int feature_dim) {
  TreeNode leaf;
  leaf.value = std::move(probs);
  PropensityModel::TreeState st{{leaf}};
  return {PropensityKind::classification_tree, static_cast<int>(leaf.value.size()), feature_dim,
          0.01, std::move(st)};
}

OutcomePredictor constant_model(double value, int dim, int treatment) {
  OutcomePredictor::LinearState st;
  st.intercept = value;
  st.coef.assign(dim, 0.0);
  return {PredictorKind::ols, Adjustment::direct, treatment, std::move(st)};
}

}  // namespace

TEST_CASE("1-nn interpolates its training point") {
  Dataset ds(2, 2);
  int g = ds.intern_group("all");
  double x[] = {0.0, 0.0};
  ds.add_row(x, g, 0, 1.0);
  double x1[] = {5.0, 5.0};
  ds.add_row(x1, g, 1, 2.0);
  KindParams params;
  params.k = 1;
  auto models = fit_outcome_models(ds, PredictorKind::knn, params, Adjustment::direct);
  CHECK(models.models[0].predict(x) == 1.0);
}

TEST_CASE("knn ties break toward the lowest row index") {
  Dataset ds(1, 1);
  int g = ds.intern_group("all");
  double a[] = {-1.0};
  double b[] = {1.0};
  ds.add_row(a, g, 0, 10.0);
  ds.add_row(b, g, 0, 20.0);
  KindParams params;
  params.k = 1;
  auto models = fit_outcome_models(ds, PredictorKind::knn, params, Adjustment::direct);
  double mid[] = {0.0};
  CHECK(models.models[0].predict(mid) == 10.0);
}

TEST_CASE("1-nn interpolation holds at every training covariate") {
  Scenario sc;
  sc.sigma = 0.5;
  Dataset ds = generate(sc, 300, 17);
  KindParams params;
  params.k = 1;
  auto models = fit_outcome_models(ds, PredictorKind::knn, params, Adjustment::direct);
  for (int t = 0; t < 3; ++t) {
    for (auto i : ds.arm_indices(t)) {
      CHECK(models.models[t].predict(ds.covariates(i)) == ds.outcome(i));
    }
  }
}

TEST_CASE("ols recovers the linear scenario coefficients") {
  Scenario sc;
  sc.sigma = 0.1;
  Dataset ds = generate(sc, 10000, 31);
  auto models = fit_outcome_models(ds, PredictorKind::ols, {}, Adjustment::direct);
  const auto* lin = models.models[1].linear_state();
  REQUIRE(lin != nullptr);

  // Independent oracle: Cramer's rule on the arm-1 normal equations.
  auto arm = ds.arm_indices(1);
  double s[3][3] = {};
  double rhs[3] = {};
  for (auto i : arm) {
    auto x = ds.covariates(i);
    double row[3] = {1.0, x[0], x[1]};
    for (int a = 0; a < 3; ++a) {
      rhs[a] += row[a] * ds.outcome(i);
      for (int b = 0; b < 3; ++b) s[a][b] += row[a] * row[b];
    }
  }
  auto det3 = [](double m[3][3]) {
    return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
           m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
           m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
  };
  double base = det3(s);
  double beta[3];
  for (int c = 0; c < 3; ++c) {
    double tmp[3][3];
    for (int a = 0; a < 3; ++a) {
      for (int b = 0; b < 3; ++b) tmp[a][b] = s[a][b];
    }
    for (int a = 0; a < 3; ++a) tmp[a][c] = rhs[a];
    beta[c] = det3(tmp) / base;
  }
  CHECK(lin->intercept == doctest::Approx(beta[0]).epsilon(1e-9));
  CHECK(lin->coef[0] == doctest::Approx(beta[1]).epsilon(1e-9));
  CHECK(lin->coef[1] == doctest::Approx(beta[2]).epsilon(1e-9));
  // True arm-1 surface is 0.75 x1 + 0.75 x2.
  CHECK(std::abs(lin->coef[0] - 0.75) < 0.02);
  CHECK(std::abs(lin->coef[1] - 0.75) < 0.02);
  CHECK(std::abs(lin->intercept) < 0.02);
}

TEST_CASE("ols rejects a singular design") {
  Dataset ds(2, 1);
  int g = ds.intern_group("all");
  for (int i = 0; i < 10; ++i) {
    double v = static_cast<double>(i);
    double x[] = {v, 2.0 * v};  // second column is collinear
    ds.add_row(x, g, 0, v);
  }
  CHECK_THROWS_WITH_AS(
      static_cast<void>(fit_outcome_models(ds, PredictorKind::ols, {}, Adjustment::direct)),
      doctest::Contains("singular"), Error);
}

TEST_CASE("full-shrinkage lasso returns the arm mean everywhere") {
  Scenario sc;
  sc.sigma = 0.3;
  Dataset ds = generate(sc, 2000, 5);
  KindParams params;
  params.alpha = 1e6;
  auto models = fit_outcome_models(ds, PredictorKind::lasso, params, Adjustment::direct);
  for (int t = 0; t < 3; ++t) {
    auto arm = ds.arm_indices(t);
    double mean = 0.0;
    for (auto i : arm) mean += ds.outcome(i);
    mean /= static_cast<double>(arm.size());
    double probe_a[] = {0.3, -0.7};
    double probe_b[] = {4.0, 9.0};
    CHECK(models.models[t].predict(probe_a) == doctest::Approx(mean).epsilon(1e-9));
    CHECK(models.models[t].predict(probe_b) == doctest::Approx(mean).epsilon(1e-9));
    const auto* lin = models.models[t].linear_state();
    REQUIRE(lin != nullptr);
    CHECK(lin->coef[0] == 0.0);
    CHECK(lin->coef[1] == 0.0);
  }
}

TEST_CASE("penalty-free lasso agrees with ols") {
  Scenario sc;
  sc.sigma = 0.4;
  Dataset ds = generate(sc, 3000, 77);
  KindParams params;
  params.alpha = 0.0;
  auto lasso = fit_outcome_models(ds, PredictorKind::lasso, params, Adjustment::direct);
  auto ols = fit_outcome_models(ds, PredictorKind::ols, {}, Adjustment::direct);
  for (int t = 0; t < 3; ++t) {
    const auto* a = lasso.models[t].linear_state();
    const auto* b = ols.models[t].linear_state();
    CHECK(std::abs(a->intercept - b->intercept) < 1e-6);
    CHECK(std::abs(a->coef[0] - b->coef[0]) < 1e-6);
    CHECK(std::abs(a->coef[1] - b->coef[1]) < 1e-6);
  }
}

TEST_CASE("weighted ols matches a hand-computed fit") {
  // Three points, weights 1/p with hand-picked propensities.
  Dataset ds(1, 2);
  int g = ds.intern_group("all");
  double xs[] = {0.0, 1.0, 2.0};
  double ys[] = {1.0, 2.0, 5.0};
  for (int i = 0; i < 3; ++i) {
    double x[] = {xs[i]};
    ds.add_row(x, g, 0, ys[i]);
  }
  double x_other[] = {9.0};
  ds.add_row(x_other, g, 1, 0.0);

  // Propensity tree: p0 = 0.5 for x <= 0.5, p0 = 0.25 beyond.
  TreeNode root, left, right;
  root.feature = 0;
  root.threshold = 0.5;
  root.left = 1;
  root.right = 2;
  left.value = {0.5, 0.5};
  right.value = {0.25, 0.75};
  PropensityModel prop(PropensityKind::classification_tree, 2, 1, 0.01,
                       PropensityModel::TreeState{{root, left, right}});

  auto models = fit_outcome_models(ds, PredictorKind::ols, {}, Adjustment::ipw, &prop);
  // Weighted normal equations with w = (2, 4, 4):
  double w[] = {2.0, 4.0, 4.0};
  double sw = 0, swx = 0, swxx = 0, swy = 0, swxy = 0;
  for (int i = 0; i < 3; ++i) {
    sw += w[i];
    swx += w[i] * xs[i];
    swxx += w[i] * xs[i] * xs[i];
    swy += w[i] * ys[i];
    swxy += w[i] * xs[i] * ys[i];
  }
  double det = sw * swxx - swx * swx;
  double intercept = (swy * swxx - swx * swxy) / det;
  double slope = (sw * swxy - swx * swy) / det;
  const auto* lin = models.models[0].linear_state();
  CHECK(lin->intercept == doctest::Approx(intercept).epsilon(1e-12));
  CHECK(lin->coef[0] == doctest::Approx(slope).epsilon(1e-12));
}

TEST_CASE("ipw and dr require a propensity model") {
  Scenario sc;
  Dataset ds = generate(sc, 100, 3);
  CHECK_THROWS_AS(
      static_cast<void>(fit_outcome_models(ds, PredictorKind::ols, {}, Adjustment::ipw)), Error);
  CHECK_THROWS_AS(
      static_cast<void>(fit_outcome_models(ds, PredictorKind::ols, {}, Adjustment::dr)), Error);
}

TEST_CASE("empty treatment arm is reported by index") {
  Dataset ds(1, 3);
  int g = ds.intern_group("all");
  double x[] = {0.0};
  ds.add_row(x, g, 0, 1.0);
  ds.add_row(x, g, 1, 1.0);
  CHECK_THROWS_WITH_AS(
      static_cast<void>(fit_outcome_models(ds, PredictorKind::knn, {}, Adjustment::direct)),
      doctest::Contains("arm 2"), Error);
}

TEST_CASE("dr pseudo-outcomes are unbiased at the truth") {
  // With the true outcome model and true propensities, the mean pseudo-outcome
  // matches E[m^t(X)] = 0 up to sampling noise.
  Scenario sc;
  sc.sigma = 0.5;
  const std::size_t n = 100000;
  Dataset ds = generate(sc, n, 123);
  int t = 1;
  double sum = 0.0, sumsq = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    auto x = ds.covariates(i);
    double mdir = true_means(sc, t, x);
    double p = true_propensity(sc, x)[t];
    double pseudo = mdir;
    if (ds.treatment(i) == t) pseudo += (ds.outcome(i) - mdir) / p;
    sum += pseudo;
    sumsq += pseudo * pseudo;
  }
  double mean = sum / static_cast<double>(n);
  double var = sumsq / static_cast<double>(n) - mean * mean;
  double se = std::sqrt(var / static_cast<double>(n));
  CHECK(std::abs(mean - 0.0) < 3.0 * se);
}

TEST_CASE("dr-adjusted ols stays close to the direct fit on well-specified data") {
  Scenario sc;
  sc.sigma = 0.2;
  Dataset ds = generate(sc, 20000, 9);
  auto prop = fit_propensity(ds, PropensityKind::classification_tree, {}, 0.01);
  auto direct = fit_outcome_models(ds, PredictorKind::ols, {}, Adjustment::direct);
  auto dr = fit_outcome_models(ds, PredictorKind::ols, {}, Adjustment::dr, &prop);
  Rng rng(4);
  for (int probe = 0; probe < 50; ++probe) {
    double x[] = {rng.normal(), rng.normal()};
    for (int t = 0; t < 3; ++t) {
      CHECK(std::abs(direct.models[t].predict(x) - dr.models[t].predict(x)) < 0.15);
    }
  }
}

TEST_CASE("propensity fit rejects single-treatment data and bad floors") {
  Dataset ds(1, 2);
  int g = ds.intern_group("all");
  double x[] = {0.0};
  ds.add_row(x, g, 0, 1.0);
  ds.add_row(x, g, 0, 2.0);
  CHECK_THROWS_WITH_AS(
      static_cast<void>(fit_propensity(ds, PropensityKind::classification_tree, {})),
      doctest::Contains("single treatment"), Error);

  Scenario sc;
  Dataset ok = generate(sc, 200, 1);
  CHECK_THROWS_AS(
      static_cast<void>(fit_propensity(ok, PropensityKind::classification_tree, {}, 0.0)), Error);
  CHECK_THROWS_AS(
      static_cast<void>(fit_propensity(ok, PropensityKind::classification_tree, {}, 0.5)), Error);
}

TEST_CASE("classification tree recovers the region propensities") {
  Scenario sc;
  sc.sigma = 0.1;
  Dataset ds = generate(sc, 50000, 2025);
  auto prop = fit_propensity(ds, PropensityKind::classification_tree, {}, 0.01);
  // Deep in the x1 <= 0, x2 <= 0 region treatment 0 is best, so the
  // historical mix is [0.8, 0.1, 0.1].
  Rng rng(8);
  for (int probe = 0; probe < 25; ++probe) {
    double x[] = {-0.3 - rng.uniform(), -0.3 - rng.uniform()};
    auto p = prop.predict(x);
    CHECK(std::abs(p[0] - 0.8) < 0.05);
    CHECK(std::abs(p[1] - 0.1) < 0.05);
    CHECK(std::abs(p[2] - 0.1) < 0.05);
  }
}

TEST_CASE("propensity outputs form a clipped simplex for random probes") {
  Scenario sc;
  sc.sigma = 0.8;
  Dataset ds = generate(sc, 5000, 41);
  for (auto kind : {PropensityKind::classification_tree, PropensityKind::multinomial_logistic}) {
    auto prop = fit_propensity(ds, kind, {}, 0.01);
    Rng rng(6);
    for (int probe = 0; probe < 200; ++probe) {
      double x[] = {rng.normal() * 2.0, rng.normal() * 2.0};
      auto p = prop.predict(x);
      double sum = 0.0;
      for (double v : p) {
        CHECK(v >= 0.01);
        sum += v;
      }
      CHECK(std::abs(sum - 1.0) < 1e-9);
    }
  }
}

TEST_CASE("clip_to_simplex respects the floor exactly") {
  auto p = clip_to_simplex({1.0, 0.0, 0.0}, 0.05);
  CHECK(p[0] == doctest::Approx(0.9));
  CHECK(p[1] == doctest::Approx(0.05));
  CHECK(p[2] == doctest::Approx(0.05));
  auto q = clip_to_simplex({0.97, 0.02, 0.01}, 0.05);
  for (double v : q) CHECK(v >= 0.05 - 1e-15);
  CHECK(q[0] + q[1] + q[2] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS_AS(clip_to_simplex({0.5, 0.5, 0.0}, 0.4), Error);
}

TEST_CASE("hajek calibration worked example") {
  Dataset ds(1, 2);
  int g = ds.intern_group("all");
  double ys[] = {1.0, 0.0, 1.0, 0.0};
  double xs[] = {0.0, 0.0, 1.0, 1.0};
  for (int i = 0; i < 4; ++i) {
    double x[] = {xs[i]};
    ds.add_row(x, g, 0, ys[i]);
  }
  // p0 = 0.5 on the first two rows, 0.25 on the last two.
  TreeNode root, left, right;
  root.feature = 0;
  root.threshold = 0.5;
  root.left = 1;
  root.right = 2;
  left.value = {0.5, 0.5};
  right.value = {0.25, 0.75};
  PropensityModel prop(PropensityKind::classification_tree, 2, 1, 0.01,
                       PropensityModel::TreeState{{root, left, right}});
  auto model = constant_model(0.5, 1, 0);
  auto curve = weighted_calibration(model, ds, prop, 1);
  REQUIRE(curve.buckets.size() == 1);
  CHECK(curve.buckets[0].mean_prediction == doctest::Approx(0.5));
  // (2*1 + 2*0 + 4*1 + 4*0) / (2+2+4+4) = 0.5
  CHECK(curve.buckets[0].hajek_outcome_rate == doctest::Approx(0.5));
  CHECK(curve.buckets[0].weight_mass == doctest::Approx(12.0));

  auto singletons = weighted_calibration(model, ds, prop, 4);
  CHECK(singletons.buckets.size() == 4);
  for (const auto& b : singletons.buckets) {
    CHECK(b.mean_prediction == doctest::Approx(0.5));
  }
  CHECK_THROWS_AS(static_cast<void>(weighted_calibration(model, ds, prop, 5)), Error);
  CHECK_THROWS_AS(static_cast<void>(weighted_calibration(model, ds, prop, 0)), Error);
  auto model1 = constant_model(0.5, 1, 1);
  CHECK_THROWS_AS(static_cast<void>(weighted_calibration(model1, ds, prop, 1)), Error);
}

TEST_CASE("well-calibrated model lands on the diagonal under uniform weights") {
  // Binary outcomes with success probability linear in x; the model predicts
  // that exact probability, so every bucket should sit near the diagonal.
  Dataset ds(1, 2);
  int g = ds.intern_group("all");
  Rng rng(55);
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    double u = rng.uniform();
    double q = 0.1 + 0.8 * u;
    double x[] = {u};
    ds.add_row(x, g, 0, rng.uniform() < q ? 1.0 : 0.0);
  }
  OutcomePredictor::LinearState st;
  st.intercept = 0.1;
  st.coef = {0.8};
  OutcomePredictor model(PredictorKind::ols, Adjustment::direct, 0, std::move(st));
  auto prop = constant_propensity({0.5, 0.5}, 1);
  auto curve = weighted_calibration(model, ds, prop, 10);
  double prev = -1.0;
  for (const auto& b : curve.buckets) {
    CHECK(b.mean_prediction >= prev);
    prev = b.mean_prediction;
    CHECK(std::abs(b.hajek_outcome_rate - b.mean_prediction) < 0.045);
    CHECK(b.hajek_outcome_rate >= 0.0);
    CHECK(b.hajek_outcome_rate <= 1.0);
  }
}

TEST_CASE("hajek bucket rates stay inside the bucket outcome range") {
  Scenario sc;
  sc.sigma = 1.0;
  Dataset ds = generate(sc, 3000, 21);
  auto prop = fit_propensity(ds, PropensityKind::classification_tree, {}, 0.01);
  auto models = fit_outcome_models(ds, PredictorKind::tree, {}, Adjustment::direct);
  auto curve = weighted_calibration(models.models[1], ds, prop, 7);
  auto arm = ds.arm_indices(1);
  double ymin = ds.outcome(arm[0]), ymax = ymin;
  for (auto i : arm) {
    ymin = std::min(ymin, ds.outcome(i));
    ymax = std::max(ymax, ds.outcome(i));
  }
  for (const auto& b : curve.buckets) {
    CHECK(b.hajek_outcome_rate >= ymin - 1e-12);
    CHECK(b.hajek_outcome_rate <= ymax + 1e-12);
    CHECK(b.weight_mass > 0.0);
  }
}

TEST_CASE("fits are deterministic") {
  Scenario sc;
  sc.sigma = 0.7;
  Dataset ds = generate(sc, 4000, 99);
  for (auto kind :
       {PredictorKind::knn, PredictorKind::ols, PredictorKind::lasso, PredictorKind::tree}) {
    auto m1 = fit_outcome_models(ds, kind, {}, Adjustment::direct);
    auto m2 = fit_outcome_models(ds, kind, {}, Adjustment::direct);
    Rng rng(12);
    for (int probe = 0; probe < 20; ++probe) {
      double x[] = {rng.normal(), rng.normal()};
      for (int t = 0; t < 3; ++t) {
        CHECK(m1.models[t].predict(x) == m2.models[t].predict(x));
      }
    }
  }
}

TEST_CASE("regression tree fits a step function") {
  Dataset ds(1, 1);
  int g = ds.intern_group("all");
  for (int i = 0; i < 200; ++i) {
    double v = static_cast<double>(i) / 100.0 - 1.0;
    double x[] = {v};
    ds.add_row(x, g, 0, v <= 0.0 ? -1.0 : 1.0);
  }
  KindParams params;
  params.max_depth = 3;
  params.min_leaf = 5;
  auto models = fit_outcome_models(ds, PredictorKind::tree, params, Adjustment::direct);
  double lo[] = {-0.5};
  double hi[] = {0.5};
  CHECK(models.models[0].predict(lo) == doctest::Approx(-1.0));
  CHECK(models.models[0].predict(hi) == doctest::Approx(1.0));
}

TEST_CASE("model serialization round-trips predictions") {
  Scenario sc;
  sc.sigma = 0.6;
  Dataset ds = generate(sc, 1500, 8);
  for (auto kind :
       {PredictorKind::knn, PredictorKind::ols, PredictorKind::lasso, PredictorKind::tree}) {
    auto models = fit_outcome_models(ds, kind, {}, Adjustment::direct);
    auto j = models.to_json();
    auto back = OutcomeModelSet::from_json(j);
    Rng rng(3);
    for (int probe = 0; probe < 25; ++probe) {
      double x[] = {rng.normal(), rng.normal()};
      for (int t = 0; t < 3; ++t) {
        CHECK(models.models[t].predict(x) == back.models[t].predict(x));
      }
    }
  }
}
