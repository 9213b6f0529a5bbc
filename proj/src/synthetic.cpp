#include "dualprice/synthetic.hpp"

#include <array>

#include "dualprice/rng.hpp"

namespace dualprice {

ScenarioKind scenario_kind_from_string(const std::string& s) {
  if (s == "linear") return ScenarioKind::linear;
  if (s == "quadratic") return ScenarioKind::quadratic;
  throw Error(Errc::invalid_argument, "unknown scenario kind: " + s);
}

std::string to_string(ScenarioKind k) {
  return k == ScenarioKind::linear ? "linear" : "quadratic";
}

GroupRule group_rule_from_string(const std::string& s) {
  if (s == "single") return GroupRule::single;
  if (s == "bernoulli") return GroupRule::bernoulli;
  if (s == "sign_x2") return GroupRule::sign_x2;
  throw Error(Errc::invalid_argument, "unknown group rule: " + s);
}

std::string to_string(GroupRule r) {
  switch (r) {
    case GroupRule::single: return "single";
    case GroupRule::bernoulli: return "bernoulli";
    default: return "sign_x2";
  }
}

double true_means(const Scenario& scenario, int treatment, std::span<const double> x) {
  if (treatment < 0 || treatment >= Scenario::kTreatmentCount) {
    throw Error(Errc::invalid_argument, "treatment out of range for synthetic scenario");
  }
  if (x.size() != Scenario::kFeatureDim) {
    throw Error(Errc::invalid_argument, "synthetic scenario expects 2 covariates");
  }
  double x1 = x[0], x2 = x[1];
  if (scenario.kind == ScenarioKind::quadratic) {
    x1 *= x1;
    x2 *= x2;
  }
  switch (treatment) {
    case 0: return 0.25 * x1 + 0.75 * x2;
    case 1: return 0.75 * x1 + 0.75 * x2;
    default: return 0.25 * x1 + 1.25 * x2;
  }
}

std::vector<double> true_propensity(const Scenario& scenario, std::span<const double> x) {
  int best = 0;
  double best_val = true_means(scenario, 0, x);
  for (int t = 1; t < Scenario::kTreatmentCount; ++t) {
    double v = true_means(scenario, t, x);
    if (v > best_val) {
      best_val = v;
      best = t;
    }
  }
  switch (best) {
    case 0: return {0.8, 0.1, 0.1};
    case 1: return {0.6, 0.3, 0.1};
    default: return {0.6, 0.1, 0.3};
  }
}

Dataset generate(const Scenario& scenario, std::size_t n, std::uint64_t seed, GroupRule rule) {
  if (n < 1) throw Error(Errc::invalid_argument, "generate requires n >= 1");
  if (!(scenario.sigma > 0.0)) throw Error(Errc::invalid_argument, "sigma must be > 0");
  Dataset ds(Scenario::kFeatureDim, Scenario::kTreatmentCount);
  int g_all = -1, g_a = -1, g_b = -1;
  if (rule == GroupRule::single) {
    g_all = ds.intern_group("all");
  } else {
    g_a = ds.intern_group("a");
    g_b = ds.intern_group("b");
  }
  Rng rng(seed);
  std::array<double, 2> x;
  std::array<double, 3> po;
  for (std::size_t i = 0; i < n; ++i) {
    x[0] = rng.normal();
    x[1] = rng.normal();
    for (int t = 0; t < Scenario::kTreatmentCount; ++t) {
      po[t] = true_means(scenario, t, x) + scenario.sigma * rng.normal();
    }
    auto p = true_propensity(scenario, x);
    double u = rng.uniform();
    int t_hist = 0;
    double acc = 0.0;
    for (int t = 0; t < Scenario::kTreatmentCount; ++t) {
      acc += p[t];
      if (u < acc) {
        t_hist = t;
        break;
      }
      t_hist = t;  // guards the u ~ 1 edge after rounding
    }
    int g;
    if (rule == GroupRule::single) {
      g = g_all;
    } else if (rule == GroupRule::bernoulli) {
      g = rng.uniform() < 0.5 ? g_a : g_b;
    } else {
      g = x[1] <= 0.0 ? g_a : g_b;
    }
    ds.add_row(x, g, t_hist, po[t_hist], po);
  }
  return ds;
}

}  // namespace dualprice
