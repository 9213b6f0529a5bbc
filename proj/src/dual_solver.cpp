#include "dualprice/dual_solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace dualprice {

// ---------------------------------------------------------------------------
// Inputs

double ScoreMatrix::max_abs() const {
  double v = 0.0;
  for (double s : values) v = std::max(v, std::abs(s));
  return v;
}

void ScoreMatrix::validate() const {
  if (n < 1) throw Error(Errc::invalid_argument, "score matrix needs at least one row");
  if (treatment_count < 1) throw Error(Errc::invalid_argument, "score matrix needs treatments");
  if (values.size() != n * treatment_count) {
    throw Error(Errc::invalid_argument, "score matrix shape mismatch");
  }
  for (double v : values) {
    if (!std::isfinite(v)) throw Error(Errc::invalid_argument, "non-finite score");
  }
  if (groups.size() != n) throw Error(Errc::invalid_argument, "group vector length mismatch");
  std::vector<std::size_t> counts(group_labels.size(), 0);
  for (int g : groups) {
    if (g < 0 || g >= static_cast<int>(group_labels.size())) {
      throw Error(Errc::invalid_argument, "group index out of range");
    }
    counts[g]++;
  }
  if (counts != group_counts) {
    throw Error(Errc::invalid_argument, "group_counts inconsistent with groups");
  }
}

CapacityVector::CapacityVector(std::vector<double> values) : b(std::move(values)) {
  if (b.empty()) throw Error(Errc::invalid_argument, "capacity vector is empty");
  if (b[0] != 1.0) throw Error(Errc::invalid_argument, "capacity b0 must be exactly 1");
  for (double v : b) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw Error(Errc::invalid_argument, "capacities must lie in [0,1]");
    }
  }
}

FairnessKind fairness_kind_from_string(const std::string& s) {
  if (s == "none") return FairnessKind::none;
  if (s == "alloc_parity") return FairnessKind::alloc_parity;
  if (s == "alloc_minority_priority") return FairnessKind::alloc_minority_priority;
  if (s == "outcome_parity") return FairnessKind::outcome_parity;
  if (s == "outcome_minority_priority") return FairnessKind::outcome_minority_priority;
  throw Error(Errc::invalid_argument, "unknown fairness kind: " + s);
}

std::string to_string(FairnessKind k) {
  switch (k) {
    case FairnessKind::none: return "none";
    case FairnessKind::alloc_parity: return "alloc_parity";
    case FairnessKind::alloc_minority_priority: return "alloc_minority_priority";
    case FairnessKind::outcome_parity: return "outcome_parity";
    default: return "outcome_minority_priority";
  }
}

void FairnessSpec::validate(const std::vector<std::string>& labels,
                            const std::vector<std::size_t>& counts) const {
  if (kind == FairnessKind::none) return;
  if (is_priority_kind(kind)) {
    if (delta != 0.0) {
      throw Error(Errc::invalid_argument, "priority fairness kinds require delta = 0");
    }
    if (minority.empty() || majority.empty()) {
      throw Error(Errc::invalid_argument, "priority fairness kinds need both group sets");
    }
    std::vector<bool> used(labels.size(), false);
    auto mark = [&](const std::vector<std::string>& side, const char* name) {
      for (const auto& g : side) {
        auto it = std::find(labels.begin(), labels.end(), g);
        if (it == labels.end()) {
          throw Error(Errc::invalid_argument,
                      std::string(name) + " group '" + g + "' not present in the data");
        }
        std::size_t idx = it - labels.begin();
        if (used[idx]) {
          throw Error(Errc::invalid_argument, "minority/majority sets must be disjoint");
        }
        used[idx] = true;
      }
    };
    mark(minority, "minority");
    mark(majority, "majority");
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (!used[i]) {
        throw Error(Errc::invalid_argument,
                    "group '" + labels[i] + "' missing from minority/majority sets");
      }
    }
  } else {
    if (delta < 0.0) throw Error(Errc::invalid_argument, "delta must be >= 0");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (counts[i] == 0) {
      throw Error(Errc::invalid_argument,
                  "group '" + labels[i] + "' has no rows; the n/n_g factor is undefined");
    }
  }
}

ordered_json FairnessSpec::to_json() const {
  ordered_json j;
  j["kind"] = to_string(kind);
  j["delta"] = delta;
  j["minority"] = minority;
  j["majority"] = majority;
  return j;
}

FairnessSpec FairnessSpec::from_json(const ordered_json& j) {
  FairnessSpec s;
  s.kind = fairness_kind_from_string(j.at("kind").get<std::string>());
  s.delta = j.at("delta").get<double>();
  s.minority = j.at("minority").get<std::vector<std::string>>();
  s.majority = j.at("majority").get<std::vector<std::string>>();
  return s;
}

std::vector<LambdaTerm> enumerate_lambda_terms(const FairnessSpec& spec,
                                               const std::vector<std::string>& labels,
                                               int treatment_count) {
  std::vector<LambdaTerm> terms;
  int G = static_cast<int>(labels.size());
  auto index_of = [&](const std::string& name) {
    auto it = std::find(labels.begin(), labels.end(), name);
    return static_cast<int>(it - labels.begin());
  };
  switch (spec.kind) {
    case FairnessKind::none:
      break;
    case FairnessKind::alloc_parity:
      for (int t = 0; t < treatment_count; ++t) {
        for (int g = 0; g < G; ++g) {
          for (int gp = 0; gp < G; ++gp) {
            if (g != gp) terms.push_back({t, g, gp, 0.0});
          }
        }
      }
      break;
    case FairnessKind::alloc_minority_priority:
      for (int t = 1; t < treatment_count; ++t) {
        for (const auto& g : spec.majority) {
          for (const auto& gp : spec.minority) {
            terms.push_back({t, index_of(g), index_of(gp), 0.0});
          }
        }
      }
      break;
    case FairnessKind::outcome_parity:
      for (int g = 0; g < G; ++g) {
        for (int gp = 0; gp < G; ++gp) {
          if (g != gp) terms.push_back({-1, g, gp, 0.0});
        }
      }
      break;
    case FairnessKind::outcome_minority_priority:
      for (const auto& g : spec.majority) {
        for (const auto& gp : spec.minority) {
          terms.push_back({-1, index_of(g), index_of(gp), 0.0});
        }
      }
      break;
  }
  return terms;
}

// ---------------------------------------------------------------------------
// Adjustment table

AdjustmentTable::AdjustmentTable(const FairnessSpec& spec, int treatment_count,
                                 std::vector<std::size_t> group_counts,
                                 std::span<const double> mu,
                                 const std::vector<LambdaTerm>& lambda)
    : kind_(spec.kind),
      treatment_count_(treatment_count),
      group_counts_(std::move(group_counts)),
      mu_(mu.begin(), mu.end()) {
  if (static_cast<int>(mu_.size()) != treatment_count_) {
    throw Error(Errc::invalid_argument, "mu length does not match treatment count");
  }
  n_ = std::accumulate(group_counts_.begin(), group_counts_.end(), std::size_t{0});
  std::size_t G = group_counts_.size();
  if (kind_ == FairnessKind::none) return;
  if (is_alloc_kind(kind_)) {
    gamma_.assign(static_cast<std::size_t>(treatment_count_) * G, 0.0);
    for (const auto& term : lambda) {
      gamma_[term.t * G + term.g] += term.value;
      gamma_[term.t * G + term.g_prime] -= term.value;
    }
  } else {
    gamma_.assign(G, 0.0);
    for (const auto& term : lambda) {
      gamma_[term.g] += term.value;
      gamma_[term.g_prime] -= term.value;
    }
  }
}

void AdjustmentTable::adjust(std::span<const double> raw, int g, std::span<double> out) const {
  std::size_t G = group_counts_.size();
  switch (kind_) {
    case FairnessKind::none:
      for (int t = 0; t < treatment_count_; ++t) out[t] = raw[t] - mu_[t];
      break;
    case FairnessKind::alloc_parity:
    case FairnessKind::alloc_minority_priority: {
      double ratio = static_cast<double>(n_) / static_cast<double>(group_counts_[g]);
      for (int t = 0; t < treatment_count_; ++t) {
        out[t] = raw[t] - mu_[t] - ratio * gamma_[t * G + g];
      }
      break;
    }
    default: {
      double scale = 1.0 - static_cast<double>(n_) / static_cast<double>(group_counts_[g]) *
                               gamma_[g];
      for (int t = 0; t < treatment_count_; ++t) out[t] = raw[t] * scale - mu_[t];
      break;
    }
  }
}

int AdjustmentTable::assign(std::span<const double> raw, int g) const {
  thread_local std::vector<double> buf;
  buf.resize(treatment_count_);
  adjust(raw, g, buf);
  int best = 0;
  for (int t = 1; t < treatment_count_; ++t) {
    if (buf[t] > buf[best]) best = t;
  }
  return best;
}

// ---------------------------------------------------------------------------
// Objective and subgradient

namespace {

struct EvalResult {
  double value = 0.0;
  std::vector<double> grad;  // layout: mu[1..m] then lambda terms
};

// Evaluates F (and optionally a subgradient, using the lexicographically
// smallest maximizing treatment per row, consistent with the policy).
EvalResult eval_dual(const ScoreMatrix& scores, const CapacityVector& b, const FairnessSpec& spec,
                     std::span<const double> mu, const std::vector<LambdaTerm>& lambda,
                     bool want_grad) {
  int m1 = scores.treatment_count;
  std::size_t G = scores.group_labels.size();
  AdjustmentTable table(spec, m1, scores.group_counts, mu, lambda);

  std::vector<double> buf(m1);
  std::vector<double> treat_count(m1, 0.0);
  std::vector<double> alloc_count;   // [t][g]
  std::vector<double> outcome_sum;   // [g]
  bool alloc = is_alloc_kind(spec.kind);
  if (want_grad && spec.kind != FairnessKind::none) {
    if (alloc) {
      alloc_count.assign(static_cast<std::size_t>(m1) * G, 0.0);
    } else {
      outcome_sum.assign(G, 0.0);
    }
  }

  double total = 0.0;
  for (std::size_t i = 0; i < scores.n; ++i) {
    int g = scores.groups[i];
    table.adjust(scores.row(i), g, buf);
    int best = 0;
    for (int t = 1; t < m1; ++t) {
      if (buf[t] > buf[best]) best = t;
    }
    total += buf[best];
    if (want_grad) {
      treat_count[best] += 1.0;
      if (alloc && !alloc_count.empty()) {
        alloc_count[best * G + g] += 1.0;
      } else if (!outcome_sum.empty()) {
        outcome_sum[g] += scores.at(i, best);
      }
    }
  }
  double n = static_cast<double>(scores.n);
  double lambda_sum = 0.0;
  for (const auto& term : lambda) lambda_sum += term.value;

  EvalResult out;
  out.value = total / n;
  for (int t = 0; t < m1; ++t) out.value += mu[t] * b.b[t];
  out.value += spec.delta * lambda_sum;

  if (want_grad) {
    int m = m1 - 1;
    out.grad.assign(m + lambda.size(), 0.0);
    for (int t = 1; t < m1; ++t) out.grad[t - 1] = b.b[t] - treat_count[t] / n;
    for (std::size_t k = 0; k < lambda.size(); ++k) {
      const auto& term = lambda[k];
      double ng = static_cast<double>(scores.group_counts[term.g]);
      double ngp = static_cast<double>(scores.group_counts[term.g_prime]);
      double gap;
      if (alloc) {
        gap = alloc_count[term.t * G + term.g] / ng -
              alloc_count[term.t * G + term.g_prime] / ngp;
      } else {
        gap = outcome_sum[term.g] / ng - outcome_sum[term.g_prime] / ngp;
      }
      out.grad[m + k] = spec.delta - gap;
    }
  }
  return out;
}

std::vector<LambdaTerm> with_values(std::vector<LambdaTerm> terms,
                                    std::span<const double> values) {
  for (std::size_t k = 0; k < terms.size(); ++k) terms[k].value = values[k];
  return terms;
}

}  // namespace

double dual_objective(const ScoreMatrix& scores, const CapacityVector& b,
                      const FairnessSpec& spec, std::span<const double> mu,
                      const std::vector<LambdaTerm>& lambda) {
  scores.validate();
  if (static_cast<int>(mu.size()) != scores.treatment_count ||
      b.treatment_count() != scores.treatment_count) {
    throw Error(Errc::invalid_argument, "mu/capacity dimension mismatch");
  }
  auto expected = enumerate_lambda_terms(spec, scores.group_labels, scores.treatment_count);
  if (expected.size() != lambda.size()) {
    throw Error(Errc::invalid_argument, "lambda dimension mismatch for fairness spec");
  }
  for (std::size_t k = 0; k < lambda.size(); ++k) {
    if (lambda[k].t != expected[k].t || lambda[k].g != expected[k].g ||
        lambda[k].g_prime != expected[k].g_prime) {
      throw Error(Errc::invalid_argument, "lambda terms do not match the fairness spec order");
    }
  }
  return eval_dual(scores, b, spec, mu, lambda, false).value;
}

// ---------------------------------------------------------------------------
// Dense two-phase simplex with Bland's rule (min c.v, Av = b, v >= 0).

namespace {

struct LpSolution {
  double value = 0.0;
  std::vector<double> primal;
  std::vector<double> row_duals;
};

class DenseSimplex {
 public:
  DenseSimplex(int rows, int cols, std::vector<double> a_colmajor, std::vector<double> b,
               std::vector<double> c)
      : rows_(rows), cols_(cols), a_(std::move(a_colmajor)), b_(std::move(b)), c_(std::move(c)) {}

  LpSolution solve() {
    for (int i = 0; i < rows_; ++i) {
      if (b_[i] < 0.0) {
        b_[i] = -b_[i];
        for (int j = 0; j < cols_; ++j) a_[j * rows_ + i] = -a_[j * rows_ + i];
      }
    }
    basis_.resize(rows_);
    binv_.assign(rows_ * rows_, 0.0);
    xb_ = b_;
    for (int i = 0; i < rows_; ++i) {
      basis_[i] = cols_ + i;  // artificials
      binv_[i * rows_ + i] = 1.0;
    }
    // Phase 1: minimize the artificial mass.
    std::vector<double> c1(cols_, 0.0);
    run(c1, true);
    double infeas = 0.0;
    for (int i = 0; i < rows_; ++i) {
      if (basis_[i] >= cols_) infeas += xb_[i];
    }
    if (infeas > 1e-7) {
      throw Error(Errc::solver, "master LP infeasible (internal)");
    }
    drive_out_artificials();
    run(c_, false);

    LpSolution out;
    out.primal.assign(cols_, 0.0);
    for (int i = 0; i < rows_; ++i) {
      if (basis_[i] < cols_) out.primal[basis_[i]] = xb_[i];
    }
    out.value = 0.0;
    for (int j = 0; j < cols_; ++j) out.value += c_[j] * out.primal[j];
    out.row_duals.assign(rows_, 0.0);
    for (int i = 0; i < rows_; ++i) {
      double cb = basis_[i] < cols_ ? c_[basis_[i]] : 0.0;
      if (cb == 0.0) continue;
      for (int r = 0; r < rows_; ++r) out.row_duals[r] += cb * binv_[i * rows_ + r];
    }
    return out;
  }

 private:
  double column_entry(int j, int i) const {
    if (j < cols_) return a_[j * rows_ + i];
    return j - cols_ == i ? 1.0 : 0.0;  // artificial
  }

  double reduced_cost(int j, const std::vector<double>& y, const std::vector<double>& cost,
                      bool phase1) const {
    double c = j < cols_ ? cost[j] : (phase1 ? 1.0 : 0.0);
    double dot = 0.0;
    if (j < cols_) {
      const double* col = a_.data() + static_cast<std::size_t>(j) * rows_;
      for (int i = 0; i < rows_; ++i) dot += y[i] * col[i];
    } else {
      dot = y[j - cols_];
    }
    return c - dot;
  }

  void compute_duals(const std::vector<double>& cost, bool phase1, std::vector<double>* y) const {
    y->assign(rows_, 0.0);
    for (int i = 0; i < rows_; ++i) {
      double cb = basis_[i] < cols_ ? cost[basis_[i]] : (phase1 ? 1.0 : 0.0);
      if (cb == 0.0) continue;
      for (int r = 0; r < rows_; ++r) (*y)[r] += cb * binv_[i * rows_ + r];
    }
  }

  void pivot(int entering, int leaving_row, const std::vector<double>& d) {
    double pd = d[leaving_row];
    for (int i = 0; i < rows_; ++i) {
      if (i == leaving_row) continue;
      double f = d[i] / pd;
      if (f == 0.0) continue;
      for (int r = 0; r < rows_; ++r) {
        binv_[i * rows_ + r] -= f * binv_[leaving_row * rows_ + r];
      }
      xb_[i] -= f * xb_[leaving_row];
    }
    for (int r = 0; r < rows_; ++r) binv_[leaving_row * rows_ + r] /= pd;
    xb_[leaving_row] /= pd;
    basis_[leaving_row] = entering;
  }

  void run(const std::vector<double>& cost, bool phase1) {
    double cscale = 1.0;
    for (double v : cost) cscale = std::max(cscale, std::abs(v));
    const double rc_eps = 1e-9 * cscale;
    std::vector<double> y, d(rows_);
    const long max_pivots = 200000;
    for (long it = 0; it < max_pivots; ++it) {
      compute_duals(cost, phase1, &y);
      int entering = -1;
      int limit = phase1 ? cols_ + rows_ : cols_;
      for (int j = 0; j < limit; ++j) {
        bool in_basis = false;
        for (int i = 0; i < rows_; ++i) {
          if (basis_[i] == j) {
            in_basis = true;
            break;
          }
        }
        if (in_basis) continue;
        if (reduced_cost(j, y, cost, phase1) < -rc_eps) {
          entering = j;  // Bland: first eligible index
          break;
        }
      }
      if (entering < 0) return;
      for (int i = 0; i < rows_; ++i) {
        double acc = 0.0;
        for (int r = 0; r < rows_; ++r) acc += binv_[i * rows_ + r] * column_entry(entering, r);
        d[i] = acc;
      }
      int leaving = -1;
      double best_ratio = std::numeric_limits<double>::infinity();
      for (int i = 0; i < rows_; ++i) {
        if (d[i] > 1e-11) {
          double ratio = xb_[i] / d[i];
          if (ratio < best_ratio - 1e-12 * (1.0 + best_ratio)) {
            best_ratio = ratio;
            leaving = i;
          } else if (ratio <= best_ratio + 1e-12 * (1.0 + best_ratio) && leaving >= 0 &&
                     basis_[i] < basis_[leaving]) {
            leaving = i;  // Bland tie-break on basis variable index
          }
        }
      }
      if (leaving < 0) {
        throw Error(Errc::solver, "master LP unbounded (internal)");
      }
      pivot(entering, leaving, d);
    }
    throw Error(Errc::solver, "master LP pivot budget exceeded (internal)");
  }

  void drive_out_artificials() {
    for (int i = 0; i < rows_; ++i) {
      if (basis_[i] < cols_) continue;
      int replacement = -1;
      for (int j = 0; j < cols_ && replacement < 0; ++j) {
        bool in_basis = false;
        for (int r = 0; r < rows_; ++r) {
          if (basis_[r] == j) {
            in_basis = true;
            break;
          }
        }
        if (in_basis) continue;
        double acc = 0.0;
        for (int r = 0; r < rows_; ++r) acc += binv_[i * rows_ + r] * column_entry(j, r);
        if (std::abs(acc) > 1e-9) replacement = j;
      }
      if (replacement >= 0) {
        std::vector<double> d(rows_);
        for (int r = 0; r < rows_; ++r) {
          double acc = 0.0;
          for (int q = 0; q < rows_; ++q) {
            acc += binv_[r * rows_ + q] * column_entry(replacement, q);
          }
          d[r] = acc;
        }
        pivot(replacement, i, d);
      }
      // A redundant row keeps its artificial basic at value zero; with the
      // master structure (slack columns span rows 1..p) this does not occur.
    }
  }

  int rows_, cols_;
  std::vector<double> a_;  // column-major
  std::vector<double> b_;
  std::vector<double> c_;
  std::vector<int> basis_;
  std::vector<double> binv_;  // row-major rows_ x rows_
  std::vector<double> xb_;
};

struct Cut {
  std::vector<double> grad;
  double offset;  // F(x_k) - grad . x_k
  int age_inactive = 0;
};

struct MasterResult {
  double lower_bound;
  std::vector<double> x;
  std::vector<double> theta;
};

// Solves min z s.t. z >= offset_k + grad_k . x, 0 <= x <= box, via the LP
// dual (simplex of cut weights), recovering x from the row duals.
MasterResult solve_master(const std::vector<Cut>& cuts, const std::vector<double>& box) {
  int p = static_cast<int>(box.size());
  int K = static_cast<int>(cuts.size());
  int rows = p + 1;
  int cols = K + 2 * p;
  std::vector<double> a(static_cast<std::size_t>(cols) * rows, 0.0);
  std::vector<double> c(cols, 0.0);
  std::vector<double> b(rows, 0.0);
  b[0] = 1.0;
  for (int k = 0; k < K; ++k) {
    double* col = a.data() + static_cast<std::size_t>(k) * rows;
    col[0] = 1.0;
    for (int j = 0; j < p; ++j) col[j + 1] = -box[j] * cuts[k].grad[j];
    c[k] = -cuts[k].offset;
  }
  for (int j = 0; j < p; ++j) {
    a[static_cast<std::size_t>(K + j) * rows + (j + 1)] = -1.0;  // u_j
    c[K + j] = 1.0;
    a[static_cast<std::size_t>(K + p + j) * rows + (j + 1)] = 1.0;  // slack
  }
  DenseSimplex lp(rows, cols, std::move(a), std::move(b), std::move(c));
  LpSolution sol = lp.solve();
  MasterResult out;
  out.lower_bound = -sol.value;
  out.x.resize(p);
  for (int j = 0; j < p; ++j) {
    out.x[j] = std::clamp(-box[j] * sol.row_duals[j + 1], 0.0, box[j]);
  }
  out.theta.assign(sol.primal.begin(), sol.primal.begin() + K);
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Kelley cutting-plane solve

DualSolution solve(const ScoreMatrix& scores, const CapacityVector& b, const FairnessSpec& spec,
                   double tol, int max_cuts) {
  scores.validate();
  if (b.treatment_count() != scores.treatment_count) {
    throw Error(Errc::invalid_argument, "capacity vector does not match treatment count");
  }
  spec.validate(scores.group_labels, scores.group_counts);
  auto terms = enumerate_lambda_terms(spec, scores.group_labels, scores.treatment_count);

  double max_abs = scores.max_abs();
  if (tol <= 0.0) tol = 1e-6 * (1.0 + max_abs);
  int m = scores.treatment_count - 1;
  int p = m + static_cast<int>(terms.size());
  double box_hi = 2.0 * max_abs + 1.0;
  std::vector<double> box(p, box_hi);

  auto make_solution = [&](std::span<const double> x, double objective, double gap, int iters) {
    DualSolution s;
    s.mu.assign(scores.treatment_count, 0.0);
    for (int t = 1; t < scores.treatment_count; ++t) s.mu[t] = x[t - 1];
    s.lambda = with_values(terms, x.subspan(m));
    s.group_labels = scores.group_labels;
    s.group_counts = scores.group_counts;
    s.fairness = spec;
    s.objective = objective;
    s.gap_bound = gap;
    s.iterations = iters;
    return s;
  };

  auto eval_at = [&](std::span<const double> x, bool grad) {
    std::vector<double> mu(scores.treatment_count, 0.0);
    for (int t = 1; t < scores.treatment_count; ++t) mu[t] = x[t - 1];
    return eval_dual(scores, b, spec, mu, with_values(terms, x.subspan(m)), grad);
  };

  std::vector<double> x(p, 0.0);
  std::vector<double> x_best(p, 0.0);
  double f_best = std::numeric_limits<double>::infinity();
  double gap = std::numeric_limits<double>::infinity();
  std::vector<Cut> cuts;
  bool converged = false;
  int iters = 0;

  for (int it = 0; it < max_cuts; ++it) {
    iters = it + 1;
    EvalResult ev = eval_at(x, true);
    if (ev.value < f_best) {
      f_best = ev.value;
      x_best = x;
    }
    Cut cut;
    cut.grad = std::move(ev.grad);
    cut.offset = ev.value;
    for (int j = 0; j < p; ++j) cut.offset -= cut.grad[j] * x[j];
    cuts.push_back(std::move(cut));

    MasterResult master = solve_master(cuts, box);
    gap = std::max(0.0, f_best - master.lower_bound);
    if (gap <= tol) {
      converged = true;
      break;
    }
    // Cut management: dropping long-inactive cuts keeps the master small; any
    // subset of cuts still under-estimates F, so the lower bound stays valid.
    for (std::size_t k = 0; k < cuts.size(); ++k) {
      if (master.theta[k] > 1e-12) {
        cuts[k].age_inactive = 0;
      } else {
        cuts[k].age_inactive++;
      }
    }
    if (cuts.size() > 600) {
      std::vector<Cut> kept;
      kept.reserve(cuts.size());
      std::size_t dropped = 0;
      for (std::size_t k = 0; k < cuts.size(); ++k) {
        bool recent = k + 150 >= cuts.size();
        if (!recent && cuts[k].age_inactive > 20 && dropped + 450 < cuts.size()) {
          ++dropped;
          continue;
        }
        kept.push_back(std::move(cuts[k]));
      }
      cuts.swap(kept);
    }
    x = std::move(master.x);
  }

  if (!converged) {
    DualSolution best = make_solution(x_best, f_best, gap, iters);
    throw SolverNonConvergence(
        "dual solve did not reach tolerance " + format_double(tol) + " within " +
            std::to_string(max_cuts) + " cuts; achieved gap " + format_double(gap),
        std::move(best));
  }

  // An incumbent pinned at the box edge with the objective still strictly
  // decreasing toward it means the unboxed dual descends past the compactness
  // bound, which only happens for inconsistent inputs.
  for (int j = 0; j < p; ++j) {
    if (x_best[j] >= box_hi - 1e-7 * (1.0 + box_hi)) {
      double h = 1e-6 * (1.0 + box_hi);
      std::vector<double> probe(x_best);
      probe[j] -= h;
      double inner = eval_at(probe, false).value;
      if (f_best < inner - 1e-10 * (1.0 + std::abs(f_best))) {
        throw Error(Errc::solver, "dual unbounded");
      }
    }
  }

  return make_solution(x_best, f_best, gap, iters);
}

// ---------------------------------------------------------------------------
// Grid-search oracle

DualSolution oracle_solve(const ScoreMatrix& scores, const CapacityVector& b,
                          const FairnessSpec& spec, double grid_step) {
  scores.validate();
  spec.validate(scores.group_labels, scores.group_counts);
  if (!(grid_step > 0.0)) throw Error(Errc::invalid_argument, "grid_step must be > 0");
  auto terms = enumerate_lambda_terms(spec, scores.group_labels, scores.treatment_count);
  int m = scores.treatment_count - 1;
  int p = m + static_cast<int>(terms.size());
  if (p > 3 || scores.n > 200) {
    throw Error(Errc::invalid_argument, "oracle scale exceeded");
  }

  double box_hi = 2.0 * scores.max_abs() + 1.0;
  std::vector<double> grid;
  for (double v = 0.0; v <= box_hi; v += grid_step) grid.push_back(v);
  if (grid.back() < box_hi) grid.push_back(box_hi);

  auto objective_at = [&](const std::vector<double>& x) {
    std::vector<double> mu(scores.treatment_count, 0.0);
    for (int t = 1; t < scores.treatment_count; ++t) mu[t] = x[t - 1];
    return eval_dual(scores, b, spec, mu, with_values(terms, std::span(x).subspan(m)), false)
        .value;
  };

  std::vector<double> best_x(p, 0.0);
  double best_f = std::numeric_limits<double>::infinity();

  if (p == 0) {
    best_f = objective_at(best_x);
  } else if (m == 0) {
    // No sweepable capacity coordinate; plain enumeration over lambda dims.
    std::vector<std::size_t> idx(p, 0);
    std::vector<double> x(p, 0.0);
    for (;;) {
      for (int j = 0; j < p; ++j) x[j] = grid[idx[j]];
      double f = objective_at(x);
      if (f < best_f) {
        best_f = f;
        best_x = x;
      }
      int j = p - 1;
      while (j >= 0 && ++idx[j] == grid.size()) idx[j--] = 0;
      if (j < 0) break;
    }
  } else {
    // Outer odometer over every coordinate except mu[m]; the last capacity
    // price is swept in one pass per outer point using the crossover points
    // where a row's maximizer leaves treatment m.
    int sweep_dim = m - 1;  // x-index of mu[m]
    std::vector<int> outer_dims;
    for (int j = 0; j < p; ++j) {
      if (j != sweep_dim) outer_dims.push_back(j);
    }
    std::vector<std::size_t> idx(outer_dims.size(), 0);
    std::vector<double> x(p, 0.0);
    std::vector<double> buf(scores.treatment_count);
    std::vector<double> line_val(scores.n), other_max(scores.n);
    std::vector<std::size_t> order(scores.n);
    double delta_cost = 0.0;

    for (;;) {
      for (std::size_t k = 0; k < outer_dims.size(); ++k) x[outer_dims[k]] = grid[idx[k]];
      x[sweep_dim] = 0.0;
      std::vector<double> mu(scores.treatment_count, 0.0);
      for (int t = 1; t < scores.treatment_count; ++t) mu[t] = x[t - 1];
      auto lam = with_values(terms, std::span(x).subspan(m));
      AdjustmentTable table(spec, scores.treatment_count, scores.group_counts, mu, lam);
      double lambda_sum = 0.0;
      for (const auto& t : lam) lambda_sum += t.value;
      delta_cost = spec.delta * lambda_sum;
      double fixed_price = 0.0;
      for (int t = 1; t < m; ++t) fixed_price += mu[t] * b.b[t];

      for (std::size_t i = 0; i < scores.n; ++i) {
        table.adjust(scores.row(i), scores.groups[i], buf);
        double cmax = buf[0];
        for (int t = 1; t < m; ++t) cmax = std::max(cmax, buf[t]);
        other_max[i] = cmax;
        line_val[i] = buf[m];  // adjusted score of treatment m at mu[m] = 0
        order[i] = i;
      }
      // Row i prefers treatment m while mu_m < line_val - other_max.
      std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t bq) {
        return line_val[a] - other_max[a] < line_val[bq] - other_max[bq];
      });
      double sum_line = 0.0, sum_other = 0.0;
      std::size_t cnt_line = scores.n;
      for (std::size_t i = 0; i < scores.n; ++i) sum_line += line_val[i];
      std::size_t ptr = 0;
      double inv_n = 1.0 / static_cast<double>(scores.n);
      for (double v : grid) {
        while (ptr < scores.n && line_val[order[ptr]] - other_max[order[ptr]] <= v) {
          sum_line -= line_val[order[ptr]];
          sum_other += other_max[order[ptr]];
          --cnt_line;
          ++ptr;
        }
        double f = (sum_line - static_cast<double>(cnt_line) * v + sum_other) * inv_n +
                   fixed_price + v * b.b[m] + delta_cost;
        if (f < best_f) {
          best_f = f;
          for (std::size_t k = 0; k < outer_dims.size(); ++k) best_x[outer_dims[k]] = grid[idx[k]];
          best_x[sweep_dim] = v;
        }
      }
      if (outer_dims.empty()) break;
      int j = static_cast<int>(outer_dims.size()) - 1;
      while (j >= 0 && ++idx[j] == grid.size()) idx[j--] = 0;
      if (j < 0) break;
    }
  }

  DualSolution s;
  s.mu.assign(scores.treatment_count, 0.0);
  for (int t = 1; t < scores.treatment_count; ++t) s.mu[t] = best_x[t - 1];
  s.lambda = with_values(terms, std::span(best_x).subspan(m));
  s.group_labels = scores.group_labels;
  s.group_counts = scores.group_counts;
  s.fairness = spec;
  // Recomputed directly so the reported objective is an exact evaluation at
  // the returned point rather than a swept accumulation.
  s.objective = dual_objective(scores, b, spec, s.mu, s.lambda);
  s.gap_bound = 0.0;
  s.iterations = 0;
  return s;
}

// ---------------------------------------------------------------------------
// KKT diagnostics

KktReport kkt_report(const ScoreMatrix& scores, const CapacityVector& b, const FairnessSpec& spec,
                     const DualSolution& solution) {
  scores.validate();
  AdjustmentTable table(spec, scores.treatment_count, scores.group_counts, solution.mu,
                        solution.lambda);
  int m1 = scores.treatment_count;
  std::size_t G = scores.group_labels.size();

  KktReport report;
  report.assignments.resize(scores.n);
  std::vector<double> treat_count(m1, 0.0);
  std::vector<double> alloc_count(static_cast<std::size_t>(m1) * G, 0.0);
  std::vector<double> outcome_sum(G, 0.0);
  for (std::size_t i = 0; i < scores.n; ++i) {
    int g = scores.groups[i];
    int t = table.assign(scores.row(i), g);
    report.assignments[i] = t;
    treat_count[t] += 1.0;
    alloc_count[t * G + g] += 1.0;
    outcome_sum[g] += scores.at(i, t);
  }
  double n = static_cast<double>(scores.n);
  for (int t = 0; t < m1; ++t) {
    KktTreatmentRow row;
    row.treatment = t;
    row.mu = solution.mu[t];
    row.rate = treat_count[t] / n;
    row.slack = b.b[t] - row.rate;
    row.cs_residual = std::abs(solution.mu[t] * row.slack);
    report.treatments.push_back(row);
  }
  for (const auto& term : solution.lambda) {
    double ng = static_cast<double>(scores.group_counts[term.g]);
    double ngp = static_cast<double>(scores.group_counts[term.g_prime]);
    double gap;
    if (is_alloc_kind(spec.kind)) {
      gap = alloc_count[term.t * G + term.g] / ng -
            alloc_count[term.t * G + term.g_prime] / ngp;
    } else {
      gap = outcome_sum[term.g] / ng - outcome_sum[term.g_prime] / ngp;
    }
    KktFairnessRow row;
    row.term = term;
    row.constraint_value = gap;
    row.slack = spec.delta - gap;
    row.residual = std::abs(term.value * row.slack);
    report.fairness.push_back(row);
  }
  return report;
}

ordered_json KktReport::to_json() const {
  ordered_json j;
  ordered_json treats = ordered_json::array();
  for (const auto& row : treatments) {
    treats.push_back({{"treatment", row.treatment},
                      {"mu", row.mu},
                      {"rate", row.rate},
                      {"slack", row.slack},
                      {"cs_residual", row.cs_residual}});
  }
  j["treatments"] = std::move(treats);
  ordered_json fair = ordered_json::array();
  for (const auto& row : fairness) {
    ordered_json e;
    if (row.term.t >= 0) {
      e["t"] = row.term.t;
    } else {
      e["t"] = nullptr;
    }
    e["g"] = row.term.g;
    e["g_prime"] = row.term.g_prime;
    e["lambda"] = row.term.value;
    e["constraint_value"] = row.constraint_value;
    e["slack"] = row.slack;
    e["residual"] = row.residual;
    fair.push_back(std::move(e));
  }
  j["fairness"] = std::move(fair);
  return j;
}

// ---------------------------------------------------------------------------
// Serialization

ordered_json DualSolution::to_json() const {
  ordered_json j;
  j["mu"] = mu;
  ordered_json lam = ordered_json::array();
  for (const auto& term : lambda) {
    ordered_json e;
    if (term.t >= 0) {
      e["t"] = term.t;
    } else {
      e["t"] = nullptr;
    }
    e["g"] = group_labels[term.g];
    e["g_prime"] = group_labels[term.g_prime];
    e["value"] = term.value;
    lam.push_back(std::move(e));
  }
  j["lambda"] = std::move(lam);
  j["objective"] = objective;
  j["gap_bound"] = gap_bound;
  ordered_json counts;
  for (std::size_t g = 0; g < group_labels.size(); ++g) {
    counts[group_labels[g]] = group_counts[g];
  }
  j["group_counts"] = std::move(counts);
  j["fairness"] = fairness.to_json();
  return j;
}

DualSolution DualSolution::from_json(const ordered_json& j) {
  DualSolution s;
  s.mu = j.at("mu").get<std::vector<double>>();
  s.objective = j.at("objective").get<double>();
  s.gap_bound = j.at("gap_bound").get<double>();
  s.fairness = FairnessSpec::from_json(j.at("fairness"));
  for (auto it = j.at("group_counts").begin(); it != j.at("group_counts").end(); ++it) {
    s.group_labels.push_back(it.key());
    s.group_counts.push_back(it.value().get<std::size_t>());
  }
  auto index_of = [&](const std::string& name) {
    auto it = std::find(s.group_labels.begin(), s.group_labels.end(), name);
    if (it == s.group_labels.end()) {
      throw Error(Errc::schema, "lambda term references unknown group '" + name + "'");
    }
    return static_cast<int>(it - s.group_labels.begin());
  };
  for (const auto& e : j.at("lambda")) {
    LambdaTerm term;
    term.t = e.at("t").is_null() ? -1 : e.at("t").get<int>();
    term.g = index_of(e.at("g").get<std::string>());
    term.g_prime = index_of(e.at("g_prime").get<std::string>());
    term.value = e.at("value").get<double>();
    s.lambda.push_back(term);
  }
  if (s.mu.empty() || s.mu[0] != 0.0) {
    throw Error(Errc::schema, "dual solution must pin mu[0] to zero");
  }
  return s;
}

}  // namespace dualprice
