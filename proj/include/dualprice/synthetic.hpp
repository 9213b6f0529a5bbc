#pragma once

#include <span>
#include <string>
#include <vector>

#include "dualprice/dataset.hpp"

namespace dualprice {

// Synthetic benchmark scenarios: two covariates, three treatments, known
// conditional mean outcomes, known region-based propensities, capacities
// b = (1, 0.1, 0.05).
//
// linear:    m0 = x1/4 + 3*x2/4,  m1 = 3*x1/4 + 3*x2/4,  m2 = x1/4 + 5*x2/4
// quadratic: same coefficient pattern on squared covariates
//
// Potential outcomes add N(0, sigma) noise per treatment; sigma is read as a
// standard deviation.
enum class ScenarioKind { linear, quadratic };

struct Scenario {
  ScenarioKind kind = ScenarioKind::linear;
  double sigma = 0.1;

  static constexpr int kFeatureDim = 2;
  static constexpr int kTreatmentCount = 3;

  std::vector<double> capacities() const { return {1.0, 0.1, 0.05}; }
};

ScenarioKind scenario_kind_from_string(const std::string& s);
std::string to_string(ScenarioKind k);

double true_means(const Scenario& scenario, int treatment, std::span<const double> x);

// Propensity vector keyed on which treatment is best in expectation
// (min-argmax with lexicographic ties):
//   best 0 -> [0.8, 0.1, 0.1], best 1 -> [0.6, 0.3, 0.1], best 2 -> [0.6, 0.1, 0.3]
std::vector<double> true_propensity(const Scenario& scenario, std::span<const double> x);

// How generated rows are labelled into protected groups.
//   single:    every row in group "all"
//   bernoulli: group "a" with probability 0.5 else "b" (independent of X)
//   sign_x2:   group "a" when x2 <= 0 else "b" (correlated with outcomes)
enum class GroupRule { single, bernoulli, sign_x2 };

GroupRule group_rule_from_string(const std::string& s);
std::string to_string(GroupRule r);

// Draws n rows: X ~ N(0, I2); potential outcomes with independent noise per
// treatment; T from the true propensity; outcome = potential[T]. Fully
// determined by (scenario, n, seed, rule).
Dataset generate(const Scenario& scenario, std::size_t n, std::uint64_t seed,
                 GroupRule rule = GroupRule::single);

}  // namespace dualprice
