#pragma once

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dualprice/common.hpp"

namespace dualprice {

using ordered_json = nlohmann::ordered_json;

// Estimated scores m̂ᵗ(xᵢ) evaluated on the training sample, plus the group
// labelling needed by the fairness variants.
struct ScoreMatrix {
  std::size_t n = 0;
  int treatment_count = 0;
  std::vector<double> values;        // n x treatment_count, row-major
  std::vector<int> groups;           // length n, indices into group_labels
  std::vector<std::string> group_labels;
  std::vector<std::size_t> group_counts;  // per label

  double at(std::size_t i, int t) const { return values[i * treatment_count + t]; }
  std::span<const double> row(std::size_t i) const {
    return {values.data() + i * treatment_count, static_cast<std::size_t>(treatment_count)};
  }
  double max_abs() const;
  void validate() const;  // finite entries, consistent groups, n >= 1
};

// Capacities per treatment; b[0] is the no-treatment slot and must be 1.
struct CapacityVector {
  std::vector<double> b;

  explicit CapacityVector(std::vector<double> values);
  int treatment_count() const { return static_cast<int>(b.size()); }
};

enum class FairnessKind {
  none,
  alloc_parity,
  alloc_minority_priority,
  outcome_parity,
  outcome_minority_priority,
};

FairnessKind fairness_kind_from_string(const std::string& s);
std::string to_string(FairnessKind k);

inline bool is_alloc_kind(FairnessKind k) {
  return k == FairnessKind::alloc_parity || k == FairnessKind::alloc_minority_priority;
}
inline bool is_priority_kind(FairnessKind k) {
  return k == FairnessKind::alloc_minority_priority ||
         k == FairnessKind::outcome_minority_priority;
}

struct FairnessSpec {
  FairnessKind kind = FairnessKind::none;
  double delta = 0.01;                 // parity kinds; priority kinds use 0
  std::vector<std::string> minority;   // priority kinds only
  std::vector<std::string> majority;

  // Checks the spec against the groups present (disjoint covering sets for
  // priority kinds, delta >= 0, every constrained group populated).
  void validate(const std::vector<std::string>& labels,
                const std::vector<std::size_t>& counts) const;

  ordered_json to_json() const;
  static FairnessSpec from_json(const ordered_json& j);
};

// One fairness multiplier: treatment index t (-1 for outcome kinds, which
// have no treatment dimension) and an ordered group pair (g, g_prime).
struct LambdaTerm {
  int t = -1;
  int g = 0;
  int g_prime = 0;
  double value = 0.0;
};

// Deterministic enumeration of the active constraint set for a spec.
std::vector<LambdaTerm> enumerate_lambda_terms(const FairnessSpec& spec,
                                               const std::vector<std::string>& labels,
                                               int treatment_count);

struct DualSolution {
  std::vector<double> mu;  // length treatment_count, mu[0] == 0
  std::vector<LambdaTerm> lambda;
  std::vector<std::string> group_labels;
  std::vector<std::size_t> group_counts;
  FairnessSpec fairness;
  double objective = 0.0;
  double gap_bound = 0.0;
  int iterations = 0;

  ordered_json to_json() const;
  static DualSolution from_json(const ordered_json& j);
};

// Precomputed scoring adjustment at a fixed dual point. This is the single
// source of truth for the policy argmax: the solver, the KKT report, and the
// deployed policy all route through it.
class AdjustmentTable {
 public:
  AdjustmentTable(const FairnessSpec& spec, int treatment_count,
                  std::vector<std::size_t> group_counts, std::span<const double> mu,
                  const std::vector<LambdaTerm>& lambda);

  // out[t] = adjusted score of treatment t for raw scores `raw` and group g.
  void adjust(std::span<const double> raw, int g, std::span<double> out) const;
  // Lexicographic min-argmax of the adjusted scores.
  int assign(std::span<const double> raw, int g) const;

  int treatment_count() const { return treatment_count_; }
  std::size_t total_count() const { return n_; }
  const std::vector<double>& mu() const { return mu_; }

 private:
  FairnessKind kind_;
  int treatment_count_;
  std::size_t n_;
  std::vector<std::size_t> group_counts_;
  std::vector<double> mu_;
  std::vector<double> gamma_;  // alloc kinds: [t][g]; outcome kinds: [g]
};

// Exact evaluation of the dual objective at (mu, lambda). Pure.
double dual_objective(const ScoreMatrix& scores, const CapacityVector& b,
                      const FairnessSpec& spec, std::span<const double> mu,
                      const std::vector<LambdaTerm>& lambda);

// Thrown when the tolerance is not reached within the cut budget; carries the
// incumbent so callers can inspect how close the solve got.
class SolverNonConvergence : public Error {
 public:
  SolverNonConvergence(std::string msg, DualSolution best)
      : Error(Errc::solver, std::move(msg)), best_iterate(std::move(best)) {}
  DualSolution best_iterate;
};

// Kelley cutting-plane minimization of the piecewise-linear dual over the box
// [0, 2*max|s|+1] per coordinate. Terminates when best F minus the master
// lower bound is <= tol (absolute). tol <= 0 selects 1e-6 * (1 + max|s|).
DualSolution solve(const ScoreMatrix& scores, const CapacityVector& b, const FairnessSpec& spec,
                   double tol = 0.0, int max_cuts = 10000);

// Exhaustive grid search reference; requires dual dimension <= 3 and n <= 200.
DualSolution oracle_solve(const ScoreMatrix& scores, const CapacityVector& b,
                          const FairnessSpec& spec, double grid_step);

struct KktTreatmentRow {
  int treatment;
  double mu;
  double rate;      // in-sample allocation rate under the induced policy
  double slack;     // b - rate
  double cs_residual;
};

struct KktFairnessRow {
  LambdaTerm term;
  double constraint_value;  // empirical gap for the pair (and treatment)
  double slack;             // delta - constraint_value
  double residual;          // |lambda * slack|
};

struct KktReport {
  std::vector<KktTreatmentRow> treatments;
  std::vector<KktFairnessRow> fairness;
  std::vector<int> assignments;  // per row argmax, shared tie-break

  ordered_json to_json() const;
};

KktReport kkt_report(const ScoreMatrix& scores, const CapacityVector& b, const FairnessSpec& spec,
                     const DualSolution& solution);

}  // namespace dualprice
