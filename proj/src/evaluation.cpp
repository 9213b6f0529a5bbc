#include "dualprice/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>

#include "dualprice/rng.hpp"

namespace dualprice {

OutcomeSource OutcomeSource::from_true_means(Scenario scenario) {
  OutcomeSource s;
  s.kind_ = Kind::true_means;
  s.scenario_ = scenario;
  return s;
}

OutcomeSource OutcomeSource::from_potential_outcomes() {
  OutcomeSource s;
  s.kind_ = Kind::potential;
  return s;
}

OutcomeSource OutcomeSource::from_models(const OutcomeModelSet* models) {
  if (models == nullptr) {
    throw Error(Errc::invalid_argument, "model outcome source needs a model set");
  }
  OutcomeSource s;
  s.kind_ = Kind::model;
  s.models_ = models;
  return s;
}

double OutcomeSource::value(const Dataset& data, std::size_t row, int treatment) const {
  switch (kind_) {
    case Kind::true_means:
      return true_means(scenario_, treatment, data.covariates(row));
    case Kind::potential:
      if (!data.has_potential_outcomes()) {
        throw Error(Errc::data, "dataset has no potential outcomes to evaluate against");
      }
      return data.potential_outcomes(row)[treatment];
    default:
      return models_->models[treatment].predict(data.covariates(row));
  }
}

// ---------------------------------------------------------------------------
// Perfect foresight: successive shortest augmenting paths with the row nodes
// collapsed into lazy heaps (one entry heap per treatment, one exchange heap
// per ordered treatment pair).

namespace {

struct HeapEntry {
  double gain;
  std::uint32_t row;
  bool operator<(const HeapEntry& o) const {
    return gain != o.gain ? gain < o.gain : row > o.row;  // max-heap, low row wins ties
  }
};

}  // namespace

PerfectForesightResult perfect_foresight(std::size_t n, int treatment_count,
                                         std::span<const double> values,
                                         const CapacityVector& capacities) {
  if (values.size() != n * treatment_count) {
    throw Error(Errc::invalid_argument, "perfect foresight value matrix shape mismatch");
  }
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw Error(Errc::invalid_argument, "non-finite value in perfect foresight input");
    }
  }
  if (capacities.treatment_count() != treatment_count) {
    throw Error(Errc::invalid_argument, "capacity vector does not match value matrix");
  }
  int m1 = treatment_count;
  std::vector<std::size_t> caps(m1);
  caps[0] = n;
  for (int t = 1; t < m1; ++t) {
    caps[t] = static_cast<std::size_t>(std::floor(capacities.b[t] * static_cast<double>(n)));
  }

  std::vector<int> assigned(n, -1);
  std::vector<std::size_t> count(m1, 0);
  // entry[t]: unassigned rows by value; exchange[t][t']: rows on t by move gain.
  std::vector<std::priority_queue<HeapEntry>> entry(m1);
  std::vector<std::vector<std::priority_queue<HeapEntry>>> exchange(
      m1, std::vector<std::priority_queue<HeapEntry>>(m1));
  auto val = [&](std::size_t i, int t) { return values[i * m1 + t]; };
  for (std::size_t i = 0; i < n; ++i) {
    for (int t = 0; t < m1; ++t) entry[t].push({val(i, t), static_cast<std::uint32_t>(i)});
  }
  auto push_exchanges = [&](std::size_t i, int from) {
    for (int t = 0; t < m1; ++t) {
      if (t != from) exchange[from][t].push({val(i, t) - val(i, from), static_cast<std::uint32_t>(i)});
    }
  };
  auto top_entry = [&](int t) -> const HeapEntry* {
    auto& heap = entry[t];
    while (!heap.empty() && assigned[heap.top().row] != -1) heap.pop();
    return heap.empty() ? nullptr : &heap.top();
  };
  auto top_exchange = [&](int from, int to) -> const HeapEntry* {
    auto& heap = exchange[from][to];
    while (!heap.empty() && assigned[heap.top().row] != from) heap.pop();
    return heap.empty() ? nullptr : &heap.top();
  };

  const double neg_inf = -std::numeric_limits<double>::infinity();
  std::vector<double> dist(m1);
  std::vector<int> pred(m1);

  for (std::size_t step = 0; step < n; ++step) {
    // Best path: enter some treatment, then exchange hops, end where cap free.
    for (int t = 0; t < m1; ++t) {
      const HeapEntry* e = top_entry(t);
      dist[t] = e ? e->gain : neg_inf;
      pred[t] = -1;  // -1 marks the entry edge
    }
    for (int round = 0; round < m1 - 1; ++round) {
      bool improved = false;
      for (int from = 0; from < m1; ++from) {
        if (dist[from] == neg_inf) continue;
        for (int to = 0; to < m1; ++to) {
          if (to == from) continue;
          const HeapEntry* e = top_exchange(from, to);
          if (!e) continue;
          double cand = dist[from] + e->gain;
          if (cand > dist[to] + 1e-15 * (1.0 + std::abs(cand))) {
            dist[to] = cand;
            pred[to] = from;
            improved = true;
          }
        }
      }
      if (!improved) break;
    }
    int best_t = -1;
    for (int t = 0; t < m1; ++t) {
      if (count[t] < caps[t] && dist[t] > neg_inf && (best_t < 0 || dist[t] > dist[best_t])) {
        best_t = t;
      }
    }
    if (best_t < 0) {
      throw Error(Errc::solver, "perfect foresight ran out of capacity (internal)");
    }
    // Unwind the path: reassign along exchange hops, then admit the new row.
    std::vector<int> path;  // treatments from terminal back to the entry
    int cur = best_t;
    while (cur != -1) {
      path.push_back(cur);
      cur = pred[cur];
    }
    // path = [terminal, ..., entry treatment]
    for (std::size_t k = 0; k + 1 < path.size(); ++k) {
      int to = path[k], from = path[k + 1];
      const HeapEntry* e = top_exchange(from, to);
      std::size_t row = e->row;
      exchange[from][to].pop();
      assigned[row] = to;
      push_exchanges(row, to);
    }
    int enter_t = path.back();
    const HeapEntry* e = top_entry(enter_t);
    std::size_t row = e->row;
    entry[enter_t].pop();
    assigned[row] = enter_t;
    push_exchanges(row, enter_t);
    count[best_t]++;
  }

  PerfectForesightResult out;
  out.assignment.assign(assigned.begin(), assigned.end());
  out.total = 0.0;
  for (std::size_t i = 0; i < n; ++i) out.total += val(i, assigned[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

namespace {

std::vector<double> value_matrix(const Dataset& data, const OutcomeSource& source,
                                 int treatment_count) {
  std::vector<double> values(data.size() * treatment_count);
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (int t = 0; t < treatment_count; ++t) {
      values[i * treatment_count + t] = source.value(data, i, t);
    }
  }
  return values;
}

std::vector<std::size_t> integer_caps(const CapacityVector& capacities, std::size_t n) {
  std::vector<std::size_t> caps(capacities.b.size());
  caps[0] = n;
  for (std::size_t t = 1; t < caps.size(); ++t) {
    caps[t] = static_cast<std::size_t>(std::floor(capacities.b[t] * static_cast<double>(n)));
  }
  return caps;
}

EvalReport finish_report(const Dataset& data, const OutcomeSource& source,
                         const CapacityVector& capacities, std::vector<int> assignments,
                         int treatment_count) {
  auto values = value_matrix(data, source, treatment_count);
  EvalReport report;
  report.allocation_counts.assign(treatment_count, 0);
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    report.allocation_counts[assignments[i]]++;
    total += values[i * treatment_count + assignments[i]];
  }
  double n = static_cast<double>(data.size());
  report.policy_outcome = total / n;
  auto pf = perfect_foresight(data.size(), treatment_count, values, capacities);
  report.perfect_foresight_outcome = pf.total / n;
  report.ratio = report.perfect_foresight_outcome != 0.0
                     ? report.policy_outcome / report.perfect_foresight_outcome
                     : 0.0;
  report.allocation_rates.resize(treatment_count);
  for (int t = 0; t < treatment_count; ++t) {
    report.allocation_rates[t] = static_cast<double>(report.allocation_counts[t]) / n;
  }
  report.assignments = std::move(assignments);
  return report;
}

}  // namespace

std::vector<int> capped_assignments(const PolicyArtifact& artifact, const Dataset& testset,
                                    const CapacityVector& capacities) {
  if (testset.size() == 0) throw Error(Errc::invalid_argument, "empty test set");
  if (testset.feature_dim() != artifact.feature_dim()) {
    throw Error(Errc::invalid_argument, "test set feature_dim does not match the policy");
  }
  int m1 = artifact.treatment_count();
  auto caps = integer_caps(capacities, testset.size());
  std::vector<std::size_t> used(m1, 0);
  std::vector<int> assignments(testset.size());
  std::vector<int> order(m1);
  for (std::size_t i = 0; i < testset.size(); ++i) {
    auto scores = adjusted_scores(artifact, testset.covariates(i),
                                  testset.group_labels()[testset.group(i)]);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      return scores[a] != scores[b] ? scores[a] > scores[b] : a < b;
    });
    for (int t : order) {
      if (used[t] < caps[t]) {
        used[t]++;
        assignments[i] = t;
        break;
      }
    }
  }
  return assignments;
}

EvalReport evaluate_policy(const PolicyArtifact& artifact, const Dataset& testset,
                           const OutcomeSource& source, const CapacityVector& capacities) {
  auto assignments = capped_assignments(artifact, testset, capacities);
  return finish_report(testset, source, capacities, std::move(assignments),
                       artifact.treatment_count());
}

FairnessReport fairness_report(std::span<const int> assignments,
                               std::span<const double> outcomes, std::span<const int> groups,
                               const std::vector<std::string>& group_labels,
                               const FairnessSpec& spec) {
  if (assignments.size() != outcomes.size() || assignments.size() != groups.size()) {
    throw Error(Errc::invalid_argument, "fairness report inputs must have equal length");
  }
  std::size_t G = group_labels.size();
  int m1 = 0;
  for (int a : assignments) m1 = std::max(m1, a + 1);
  std::vector<std::size_t> group_n(G, 0);
  std::vector<std::vector<double>> rate(G, std::vector<double>(m1, 0.0));
  std::vector<double> mean_out(G, 0.0);
  for (std::size_t i = 0; i < assignments.size(); ++i) {
    int g = groups[i];
    group_n[g]++;
    rate[g][assignments[i]] += 1.0;
    mean_out[g] += outcomes[i];
  }
  spec.validate(group_labels, group_n);
  for (std::size_t g = 0; g < G; ++g) {
    if (group_n[g] == 0) {
      throw Error(Errc::invalid_argument, "group '" + group_labels[g] + "' absent from data");
    }
    for (int t = 0; t < m1; ++t) rate[g][t] /= static_cast<double>(group_n[g]);
    mean_out[g] /= static_cast<double>(group_n[g]);
  }

  FairnessReport report;
  report.group_labels = group_labels;
  report.allocation_rates = rate;
  report.group_mean_outcomes = mean_out;
  report.max_alloc_gap.assign(m1, 0.0);
  for (int t = 0; t < m1; ++t) {
    for (std::size_t g = 0; g < G; ++g) {
      for (std::size_t h = 0; h < G; ++h) {
        report.max_alloc_gap[t] = std::max(report.max_alloc_gap[t], rate[g][t] - rate[h][t]);
      }
    }
  }
  for (std::size_t g = 0; g < G; ++g) {
    for (std::size_t h = 0; h < G; ++h) {
      report.max_outcome_gap = std::max(report.max_outcome_gap, mean_out[g] - mean_out[h]);
    }
  }

  if (is_priority_kind(spec.kind)) {
    auto index_of = [&](const std::string& name) {
      return static_cast<std::size_t>(
          std::find(group_labels.begin(), group_labels.end(), name) - group_labels.begin());
    };
    bool ok = true;
    for (const auto& maj : spec.majority) {
      for (const auto& mino : spec.minority) {
        std::size_t gm = index_of(maj), gn = index_of(mino);
        if (spec.kind == FairnessKind::alloc_minority_priority) {
          for (int t = 1; t < m1; ++t) {
            if (rate[gn][t] < rate[gm][t]) ok = false;
          }
        } else {
          if (mean_out[gn] < mean_out[gm]) ok = false;
        }
      }
    }
    report.priority_satisfied = ok;
  }
  return report;
}

BaselineKind baseline_kind_from_string(const std::string& s) {
  if (s == "historical") return BaselineKind::historical;
  if (s == "random") return BaselineKind::random;
  if (s == "no_treatment") return BaselineKind::no_treatment;
  if (s == "threshold") return BaselineKind::threshold;
  throw Error(Errc::invalid_argument, "unknown baseline kind: " + s);
}

std::string to_string(BaselineKind k) {
  switch (k) {
    case BaselineKind::historical: return "historical";
    case BaselineKind::random: return "random";
    case BaselineKind::no_treatment: return "no_treatment";
    default: return "threshold";
  }
}

std::vector<double> learn_threshold_cutoffs(const Dataset& train, int score_column,
                                            const CapacityVector& capacities) {
  if (score_column < 0 || score_column >= train.feature_dim()) {
    throw Error(Errc::invalid_argument, "threshold baseline score column out of range");
  }
  std::vector<double> scores(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) scores[i] = train.covariates(i)[score_column];
  std::sort(scores.begin(), scores.end());
  int m1 = capacities.treatment_count();
  std::vector<double> cutoffs(m1, -std::numeric_limits<double>::infinity());
  double mass_above = 0.0;
  for (int t = m1 - 1; t >= 1; --t) {
    mass_above += capacities.b[t];
    double q = std::clamp(1.0 - mass_above, 0.0, 1.0);
    std::size_t idx = std::min(scores.size() - 1,
                               static_cast<std::size_t>(q * static_cast<double>(scores.size())));
    cutoffs[t] = scores[idx];
  }
  return cutoffs;
}

EvalReport baseline(const BaselineSpec& spec, const Dataset& testset,
                    const CapacityVector& capacities, const OutcomeSource& source) {
  if (testset.size() == 0) throw Error(Errc::invalid_argument, "empty test set");
  int m1 = capacities.treatment_count();
  std::vector<int> assignments(testset.size(), 0);
  auto caps = integer_caps(capacities, testset.size());
  std::vector<std::size_t> used(m1, 0);

  switch (spec.kind) {
    case BaselineKind::historical:
      for (std::size_t i = 0; i < testset.size(); ++i) {
        if (testset.treatment(i) >= m1) {
          throw Error(Errc::data, "historical treatment exceeds capacity vector");
        }
        assignments[i] = testset.treatment(i);
      }
      break;
    case BaselineKind::no_treatment:
      break;
    case BaselineKind::random: {
      Rng rng(spec.seed);
      for (std::size_t i = 0; i < testset.size(); ++i) {
        // Uniform over treatments with remaining capacity; t = 0 always has room.
        int open = 0;
        for (int t = 0; t < m1; ++t) {
          if (used[t] < caps[t]) open++;
        }
        std::uint64_t pick = rng.uniform_index(open);
        for (int t = 0; t < m1; ++t) {
          if (used[t] < caps[t] && pick-- == 0) {
            assignments[i] = t;
            used[t]++;
            break;
          }
        }
      }
      break;
    }
    case BaselineKind::threshold: {
      if (spec.cutoffs.size() != static_cast<std::size_t>(m1)) {
        throw Error(Errc::invalid_argument, "threshold baseline needs learned cutoffs");
      }
      if (spec.score_column < 0 || spec.score_column >= testset.feature_dim()) {
        throw Error(Errc::invalid_argument, "threshold baseline score column out of range");
      }
      for (std::size_t i = 0; i < testset.size(); ++i) {
        double s = testset.covariates(i)[spec.score_column];
        int chosen = 0;
        for (int t = m1 - 1; t >= 1; --t) {
          if (s >= spec.cutoffs[t] && used[t] < caps[t]) {
            chosen = t;
            break;
          }
        }
        assignments[i] = chosen;
        used[chosen]++;
      }
      break;
    }
  }
  return finish_report(testset, source, capacities, std::move(assignments), m1);
}

// ---------------------------------------------------------------------------
// Serialization

ordered_json EvalReport::to_json() const {
  ordered_json j;
  j["policy_outcome"] = policy_outcome;
  j["perfect_foresight_outcome"] = perfect_foresight_outcome;
  j["ratio"] = ratio;
  j["allocation_counts"] = allocation_counts;
  j["allocation_rates"] = allocation_rates;
  if (!baseline_outcomes.empty()) j["baseline_outcomes"] = baseline_outcomes;
  return j;
}

ordered_json FairnessReport::to_json() const {
  ordered_json j;
  ordered_json per_group = ordered_json::array();
  for (std::size_t g = 0; g < group_labels.size(); ++g) {
    per_group.push_back({{"group", group_labels[g]},
                         {"allocation_rates", allocation_rates[g]},
                         {"mean_outcome", group_mean_outcomes[g]}});
  }
  j["groups"] = std::move(per_group);
  j["max_alloc_gap"] = max_alloc_gap;
  j["max_outcome_gap"] = max_outcome_gap;
  if (priority_satisfied.has_value()) j["priority_satisfied"] = *priority_satisfied;
  return j;
}

}  // namespace dualprice
