#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dualprice/dataset.hpp"
#include "dualprice/policy.hpp"
#include "dualprice/synthetic.hpp"

namespace dualprice {

// Where counterfactual values come from when scoring an assignment.
class OutcomeSource {
 public:
  static OutcomeSource from_true_means(Scenario scenario);
  static OutcomeSource from_potential_outcomes();
  static OutcomeSource from_models(const OutcomeModelSet* models);

  double value(const Dataset& data, std::size_t row, int treatment) const;

 private:
  enum class Kind { true_means, potential, model } kind_;
  Scenario scenario_{};
  const OutcomeModelSet* models_ = nullptr;
};

struct EvalReport {
  double policy_outcome = 0.0;            // mean outcome per arrival
  double perfect_foresight_outcome = 0.0; // mean under the offline optimum
  double ratio = 0.0;                     // policy / perfect foresight
  std::vector<std::size_t> allocation_counts;
  std::vector<double> allocation_rates;
  std::vector<int> assignments;
  std::map<std::string, double> baseline_outcomes;

  ordered_json to_json() const;
};

struct FairnessReport {
  std::vector<std::string> group_labels;
  std::vector<std::vector<double>> allocation_rates;  // [group][treatment]
  std::vector<double> group_mean_outcomes;
  std::vector<double> max_alloc_gap;  // per treatment
  double max_outcome_gap = 0.0;
  std::optional<bool> priority_satisfied;  // priority kinds only

  ordered_json to_json() const;
};

// Exactly optimal capacity-respecting assignment maximizing the sum of
// selected entries, by successive shortest augmenting paths on the
// rows-to-treatments graph (row nodes collapsed into per-edge heaps). Caps
// are floor(b_t * N) for t != 0 and N for t = 0.
struct PerfectForesightResult {
  std::vector<int> assignment;
  double total = 0.0;
};

PerfectForesightResult perfect_foresight(std::size_t n, int treatment_count,
                                         std::span<const double> values,
                                         const CapacityVector& capacities);

// Assignments row-by-row in arrival order under running caps floor(b_t * N);
// a row whose argmax is exhausted takes its best remaining treatment under
// the same scoring rule.
std::vector<int> capped_assignments(const PolicyArtifact& artifact, const Dataset& testset,
                                    const CapacityVector& capacities);

// Scores the artifact on a held-out set using capped_assignments.
EvalReport evaluate_policy(const PolicyArtifact& artifact, const Dataset& testset,
                           const OutcomeSource& source, const CapacityVector& capacities);

FairnessReport fairness_report(std::span<const int> assignments,
                               std::span<const double> outcomes, std::span<const int> groups,
                               const std::vector<std::string>& group_labels,
                               const FairnessSpec& spec);

enum class BaselineKind { historical, random, no_treatment, threshold };

BaselineKind baseline_kind_from_string(const std::string& s);
std::string to_string(BaselineKind k);

struct BaselineSpec {
  BaselineKind kind = BaselineKind::no_treatment;
  std::uint64_t seed = 0;          // random
  int score_column = 0;            // threshold
  std::vector<double> cutoffs;     // threshold; from learn_threshold_cutoffs
};

// Capacity-matched score cutoffs from a training set: treatment m goes to the
// top b_m quantile, treatment m-1 to the next b_{m-1} mass, and so on.
std::vector<double> learn_threshold_cutoffs(const Dataset& train, int score_column,
                                            const CapacityVector& capacities);

EvalReport baseline(const BaselineSpec& spec, const Dataset& testset,
                    const CapacityVector& capacities, const OutcomeSource& source);

}  // namespace dualprice
