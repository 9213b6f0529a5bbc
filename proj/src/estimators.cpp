#include "dualprice/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace dualprice {

PredictorKind predictor_kind_from_string(const std::string& s) {
  if (s == "knn") return PredictorKind::knn;
  if (s == "ols") return PredictorKind::ols;
  if (s == "lasso") return PredictorKind::lasso;
  if (s == "tree") return PredictorKind::tree;
  throw Error(Errc::invalid_argument, "unknown predictor kind: " + s);
}

std::string to_string(PredictorKind k) {
  switch (k) {
    case PredictorKind::knn: return "knn";
    case PredictorKind::ols: return "ols";
    case PredictorKind::lasso: return "lasso";
    default: return "tree";
  }
}

Adjustment adjustment_from_string(const std::string& s) {
  if (s == "direct") return Adjustment::direct;
  if (s == "ipw") return Adjustment::ipw;
  if (s == "dr") return Adjustment::dr;
  throw Error(Errc::invalid_argument, "unknown adjustment: " + s);
}

std::string to_string(Adjustment a) {
  switch (a) {
    case Adjustment::direct: return "direct";
    case Adjustment::ipw: return "ipw";
    default: return "dr";
  }
}

PropensityKind propensity_kind_from_string(const std::string& s) {
  if (s == "multinomial_logistic") return PropensityKind::multinomial_logistic;
  if (s == "classification_tree") return PropensityKind::classification_tree;
  throw Error(Errc::invalid_argument, "unknown propensity kind: " + s);
}

std::string to_string(PropensityKind k) {
  return k == PropensityKind::multinomial_logistic ? "multinomial_logistic" : "classification_tree";
}

// ---------------------------------------------------------------------------
// Trees

double tree_predict_value(const std::vector<TreeNode>& nodes, std::span<const double> x) {
  return tree_predict_vector(nodes, x)[0];
}

const std::vector<double>& tree_predict_vector(const std::vector<TreeNode>& nodes,
                                               std::span<const double> x) {
  int cur = 0;
  for (;;) {
    const TreeNode& node = nodes[cur];
    if (node.feature < 0) return node.value;
    cur = x[node.feature] <= node.threshold ? node.left : node.right;
  }
}

namespace {

struct FitMatrix {
  std::size_t n = 0;
  int d = 0;
  const double* x = nullptr;  // n x d row-major
  const double* y = nullptr;
  const double* w = nullptr;  // nullptr => uniform

  double weight(std::size_t i) const { return w ? w[i] : 1.0; }
  std::span<const double> row(std::size_t i) const {
    return {x + i * d, static_cast<std::size_t>(d)};
  }
};

// Regression tree: variance-reduction splits, weighted leaf means.
std::vector<TreeNode> fit_regression_tree(const FitMatrix& m, int max_depth, int min_leaf) {
  std::vector<TreeNode> nodes;
  struct Job {
    std::vector<std::size_t> rows;
    int depth;
    int node_index;
  };
  std::vector<Job> stack;
  std::vector<std::size_t> all(m.n);
  std::iota(all.begin(), all.end(), 0);
  nodes.emplace_back();
  stack.push_back({std::move(all), 0, 0});

  while (!stack.empty()) {
    Job job = std::move(stack.back());
    stack.pop_back();
    const auto& rows = job.rows;
    double wsum = 0.0, wy = 0.0;
    for (auto i : rows) {
      double wi = m.weight(i);
      wsum += wi;
      wy += wi * m.y[i];
    }
    double mean = wsum > 0.0 ? wy / wsum : 0.0;

    auto make_leaf = [&] { nodes[job.node_index].value = {mean}; };

    if (job.depth >= max_depth || rows.size() < 2 * static_cast<std::size_t>(min_leaf)) {
      make_leaf();
      continue;
    }

    // Best split: maximize sum over children of (sum w*y)^2 / (sum w).
    double base = wsum > 0.0 ? wy * wy / wsum : 0.0;
    double best_gain = 0.0;
    int best_feature = -1;
    double best_threshold = 0.0;
    std::vector<std::size_t> order(rows);
    for (int f = 0; f < m.d; ++f) {
      std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        double va = m.x[a * m.d + f], vb = m.x[b * m.d + f];
        return va != vb ? va < vb : a < b;
      });
      double wl = 0.0, wyl = 0.0;
      for (std::size_t pos = 0; pos + 1 < order.size(); ++pos) {
        std::size_t i = order[pos];
        double wi = m.weight(i);
        wl += wi;
        wyl += wi * m.y[i];
        double v = m.x[i * m.d + f];
        double vn = m.x[order[pos + 1] * m.d + f];
        if (v == vn) continue;
        if (pos + 1 < static_cast<std::size_t>(min_leaf) ||
            order.size() - pos - 1 < static_cast<std::size_t>(min_leaf)) {
          continue;
        }
        double wr = wsum - wl, wyr = wy - wyl;
        if (wl <= 0.0 || wr <= 0.0) continue;
        double gain = wyl * wyl / wl + wyr * wyr / wr - base;
        if (gain > best_gain + 1e-12 * (std::abs(base) + 1.0)) {
          best_gain = gain;
          best_feature = f;
          best_threshold = 0.5 * (v + vn);
        }
      }
    }
    if (best_feature < 0) {
      make_leaf();
      continue;
    }
    std::vector<std::size_t> left, right;
    for (auto i : rows) {
      (m.x[i * m.d + best_feature] <= best_threshold ? left : right).push_back(i);
    }
    if (left.empty() || right.empty()) {
      make_leaf();
      continue;
    }
    int li = static_cast<int>(nodes.size());
    nodes.emplace_back();
    int ri = static_cast<int>(nodes.size());
    nodes.emplace_back();
    nodes[job.node_index].feature = best_feature;
    nodes[job.node_index].threshold = best_threshold;
    nodes[job.node_index].left = li;
    nodes[job.node_index].right = ri;
    stack.push_back({std::move(right), job.depth + 1, ri});
    stack.push_back({std::move(left), job.depth + 1, li});
  }
  return nodes;
}

// Classification tree: Gini splits, leaf values are class frequencies.
std::vector<TreeNode> fit_classification_tree(std::size_t n, int d, const double* x,
                                              const int* labels, int num_classes, int max_depth,
                                              int min_leaf) {
  std::vector<TreeNode> nodes;
  struct Job {
    std::vector<std::size_t> rows;
    int depth;
    int node_index;
  };
  std::vector<Job> stack;
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), 0);
  nodes.emplace_back();
  stack.push_back({std::move(all), 0, 0});

  while (!stack.empty()) {
    Job job = std::move(stack.back());
    stack.pop_back();
    const auto& rows = job.rows;
    std::vector<double> counts(num_classes, 0.0);
    for (auto i : rows) counts[labels[i]] += 1.0;
    double total = static_cast<double>(rows.size());

    auto make_leaf = [&] {
      std::vector<double> freq(num_classes);
      for (int c = 0; c < num_classes; ++c) freq[c] = counts[c] / total;
      nodes[job.node_index].value = std::move(freq);
    };

    bool pure = false;
    for (int c = 0; c < num_classes; ++c) {
      if (counts[c] == total) pure = true;
    }
    if (pure || job.depth >= max_depth || rows.size() < 2 * static_cast<std::size_t>(min_leaf)) {
      make_leaf();
      continue;
    }

    // Gini: maximize sum over children of sum_c n_c^2 / n_child.
    double base = 0.0;
    for (int c = 0; c < num_classes; ++c) base += counts[c] * counts[c];
    base /= total;
    double best_gain = 0.0;
    int best_feature = -1;
    double best_threshold = 0.0;
    std::vector<std::size_t> order(rows);
    std::vector<double> lc(num_classes);
    for (int f = 0; f < d; ++f) {
      std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        double va = x[a * d + f], vb = x[b * d + f];
        return va != vb ? va < vb : a < b;
      });
      std::fill(lc.begin(), lc.end(), 0.0);
      double nl = 0.0;
      for (std::size_t pos = 0; pos + 1 < order.size(); ++pos) {
        std::size_t i = order[pos];
        lc[labels[i]] += 1.0;
        nl += 1.0;
        double v = x[i * d + f];
        double vn = x[order[pos + 1] * d + f];
        if (v == vn) continue;
        if (pos + 1 < static_cast<std::size_t>(min_leaf) ||
            order.size() - pos - 1 < static_cast<std::size_t>(min_leaf)) {
          continue;
        }
        double sl = 0.0, sr = 0.0;
        for (int c = 0; c < num_classes; ++c) {
          sl += lc[c] * lc[c];
          double rc = counts[c] - lc[c];
          sr += rc * rc;
        }
        double gain = sl / nl + sr / (total - nl) - base;
        if (gain > best_gain + 1e-12 * (base + 1.0)) {
          best_gain = gain;
          best_feature = f;
          best_threshold = 0.5 * (v + vn);
        }
      }
    }
    if (best_feature < 0) {
      make_leaf();
      continue;
    }
    std::vector<std::size_t> left, right;
    for (auto i : rows) {
      (x[i * d + best_feature] <= best_threshold ? left : right).push_back(i);
    }
    if (left.empty() || right.empty()) {
      make_leaf();
      continue;
    }
    int li = static_cast<int>(nodes.size());
    nodes.emplace_back();
    int ri = static_cast<int>(nodes.size());
    nodes.emplace_back();
    nodes[job.node_index].feature = best_feature;
    nodes[job.node_index].threshold = best_threshold;
    nodes[job.node_index].left = li;
    nodes[job.node_index].right = ri;
    stack.push_back({std::move(right), job.depth + 1, ri});
    stack.push_back({std::move(left), job.depth + 1, li});
  }
  return nodes;
}

// ---------------------------------------------------------------------------
// Linear fits

struct Standardizer {
  std::vector<double> mean;
  std::vector<double> scale;

  static Standardizer fit(const FitMatrix& m) {
    Standardizer s;
    s.mean.assign(m.d, 0.0);
    s.scale.assign(m.d, 1.0);
    for (std::size_t i = 0; i < m.n; ++i) {
      for (int j = 0; j < m.d; ++j) s.mean[j] += m.x[i * m.d + j];
    }
    for (int j = 0; j < m.d; ++j) s.mean[j] /= static_cast<double>(m.n);
    std::vector<double> ss(m.d, 0.0);
    for (std::size_t i = 0; i < m.n; ++i) {
      for (int j = 0; j < m.d; ++j) {
        double c = m.x[i * m.d + j] - s.mean[j];
        ss[j] += c * c;
      }
    }
    for (int j = 0; j < m.d; ++j) {
      double v = std::sqrt(ss[j] / static_cast<double>(m.n));
      s.scale[j] = v > 0.0 ? v : 1.0;
    }
    return s;
  }

  double z(const FitMatrix& m, std::size_t i, int j) const {
    return (m.x[i * m.d + j] - mean[j]) / scale[j];
  }
};

// Solves A b = rhs in place by Gaussian elimination with partial pivoting.
// Throws on (numerically) singular systems.
std::vector<double> solve_linear_system(std::vector<double> a, std::vector<double> rhs,
                                        int dim, const char* context) {
  double scale = 0.0;
  for (double v : a) scale = std::max(scale, std::abs(v));
  if (scale == 0.0) scale = 1.0;
  for (int col = 0; col < dim; ++col) {
    int pivot = col;
    for (int r = col + 1; r < dim; ++r) {
      if (std::abs(a[r * dim + col]) > std::abs(a[pivot * dim + col])) pivot = r;
    }
    if (std::abs(a[pivot * dim + col]) <= 1e-12 * scale) {
      throw Error(Errc::data, std::string("singular design in ") + context);
    }
    if (pivot != col) {
      for (int j = 0; j < dim; ++j) std::swap(a[col * dim + j], a[pivot * dim + j]);
      std::swap(rhs[col], rhs[pivot]);
    }
    double inv = 1.0 / a[col * dim + col];
    for (int r = col + 1; r < dim; ++r) {
      double f = a[r * dim + col] * inv;
      if (f == 0.0) continue;
      for (int j = col; j < dim; ++j) a[r * dim + j] -= f * a[col * dim + j];
      rhs[r] -= f * rhs[col];
    }
  }
  std::vector<double> out(dim);
  for (int r = dim - 1; r >= 0; --r) {
    double acc = rhs[r];
    for (int j = r + 1; j < dim; ++j) acc -= a[r * dim + j] * out[j];
    out[r] = acc / a[r * dim + r];
  }
  return out;
}

OutcomePredictor::LinearState fit_ols(const FitMatrix& m) {
  int dim = m.d + 1;
  std::vector<double> a(dim * dim, 0.0), rhs(dim, 0.0);
  for (std::size_t i = 0; i < m.n; ++i) {
    double wi = m.weight(i);
    auto xi = m.row(i);
    a[0] += wi;
    rhs[0] += wi * m.y[i];
    for (int j = 0; j < m.d; ++j) {
      a[(j + 1)] += wi * xi[j];  // first row
      rhs[j + 1] += wi * xi[j] * m.y[i];
      for (int l = j; l < m.d; ++l) {
        a[(j + 1) * dim + (l + 1)] += wi * xi[j] * xi[l];
      }
    }
  }
  // mirror symmetric entries
  for (int j = 0; j < dim; ++j) {
    for (int l = 0; l < j; ++l) a[j * dim + l] = a[l * dim + j];
  }
  auto beta = solve_linear_system(std::move(a), std::move(rhs), dim, "ols fit");
  OutcomePredictor::LinearState st;
  st.intercept = beta[0];
  st.coef.assign(beta.begin() + 1, beta.end());
  return st;
}

// Cyclic coordinate descent on standardized features; objective
// (1/(2W)) sum w_i r_i^2 + alpha * sum |beta_j|. Coefficients are
// de-standardized before storage.
OutcomePredictor::LinearState fit_lasso(const FitMatrix& m, const KindParams& params) {
  auto stats = Standardizer::fit(m);
  double wsum = 0.0;
  for (std::size_t i = 0; i < m.n; ++i) wsum += m.weight(i);
  if (wsum <= 0.0) throw Error(Errc::data, "lasso fit requires positive total weight");

  std::vector<double> z(m.n * m.d);
  for (std::size_t i = 0; i < m.n; ++i) {
    for (int j = 0; j < m.d; ++j) z[i * m.d + j] = stats.z(m, i, j);
  }
  std::vector<double> kappa(m.d, 0.0);
  for (std::size_t i = 0; i < m.n; ++i) {
    double wi = m.weight(i);
    for (int j = 0; j < m.d; ++j) kappa[j] += wi * z[i * m.d + j] * z[i * m.d + j];
  }
  for (int j = 0; j < m.d; ++j) kappa[j] /= wsum;

  std::vector<double> beta(m.d, 0.0);
  double beta0 = 0.0;
  for (std::size_t i = 0; i < m.n; ++i) beta0 += m.weight(i) * m.y[i];
  beta0 /= wsum;
  std::vector<double> resid(m.n);
  for (std::size_t i = 0; i < m.n; ++i) resid[i] = m.y[i] - beta0;

  for (int sweep = 0; sweep < params.lasso_max_sweeps; ++sweep) {
    double max_change = 0.0;
    for (int j = 0; j < m.d; ++j) {
      double rho = 0.0;
      for (std::size_t i = 0; i < m.n; ++i) {
        rho += m.weight(i) * z[i * m.d + j] * (resid[i] + z[i * m.d + j] * beta[j]);
      }
      rho /= wsum;
      double nb = 0.0;
      if (kappa[j] > 0.0) {
        double soft = std::abs(rho) - params.alpha;
        nb = soft > 0.0 ? (rho > 0.0 ? soft : -soft) / kappa[j] : 0.0;
      }
      double delta = nb - beta[j];
      if (delta != 0.0) {
        for (std::size_t i = 0; i < m.n; ++i) resid[i] -= z[i * m.d + j] * delta;
        beta[j] = nb;
      }
      max_change = std::max(max_change, std::abs(delta));
    }
    double rbar = 0.0;
    for (std::size_t i = 0; i < m.n; ++i) rbar += m.weight(i) * resid[i];
    rbar /= wsum;
    if (rbar != 0.0) {
      beta0 += rbar;
      for (std::size_t i = 0; i < m.n; ++i) resid[i] -= rbar;
    }
    max_change = std::max(max_change, std::abs(rbar));
    if (max_change < params.lasso_tol) break;
  }

  OutcomePredictor::LinearState st;
  st.coef.assign(m.d, 0.0);
  st.intercept = beta0;
  for (int j = 0; j < m.d; ++j) {
    st.coef[j] = beta[j] / stats.scale[j];
    st.intercept -= st.coef[j] * stats.mean[j];
  }
  return st;
}

OutcomePredictor::KnnState fit_knn(const FitMatrix& m, const KindParams& params) {
  OutcomePredictor::KnnState st;
  int k = params.k > 0 ? params.k
                       : static_cast<int>(std::lround(std::sqrt(static_cast<double>(m.n))));
  k = std::clamp<int>(k, 1, static_cast<int>(m.n));
  st.k = k;
  st.dim = m.d;
  st.points.assign(m.x, m.x + m.n * m.d);
  st.outcomes.assign(m.y, m.y + m.n);
  if (m.w) st.weights.assign(m.w, m.w + m.n);
  return st;
}

// Full-batch gradient descent with Armijo backtracking on standardized
// features; class 0 coefficients pinned to zero.
PropensityModel::LogisticState fit_multinomial_logistic(std::size_t n, int d, const double* x,
                                                        const int* labels, int num_classes,
                                                        const KindParams& params) {
  FitMatrix fm{n, d, x, nullptr, nullptr};
  auto stats = Standardizer::fit(fm);
  std::vector<double> z(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) z[i * d + j] = stats.z(fm, i, j);
  }
  int dim = d + 1;
  std::vector<double> theta(num_classes * dim, 0.0);  // class 0 row stays zero
  std::vector<double> probs(num_classes);

  auto nll_and_grad = [&](const std::vector<double>& th, std::vector<double>* grad) {
    if (grad) std::fill(grad->begin(), grad->end(), 0.0);
    double nll = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double maxl = 0.0;
      for (int c = 1; c < num_classes; ++c) {
        double l = th[c * dim];
        for (int j = 0; j < d; ++j) l += th[c * dim + 1 + j] * z[i * d + j];
        probs[c] = l;
        maxl = std::max(maxl, l);
      }
      probs[0] = 0.0;
      double denom = 0.0;
      for (int c = 0; c < num_classes; ++c) denom += std::exp(probs[c] - maxl);
      double log_denom = maxl + std::log(denom);
      nll += log_denom - probs[labels[i]];
      if (grad) {
        for (int c = 1; c < num_classes; ++c) {
          double p = std::exp(probs[c] - log_denom);
          double g = p - (labels[i] == c ? 1.0 : 0.0);
          (*grad)[c * dim] += g;
          for (int j = 0; j < d; ++j) (*grad)[c * dim + 1 + j] += g * z[i * d + j];
        }
      }
    }
    double inv_n = 1.0 / static_cast<double>(n);
    if (grad) {
      for (auto& g : *grad) g *= inv_n;
    }
    return nll * inv_n;
  };

  std::vector<double> grad(theta.size()), trial(theta.size());
  double step = 1.0;
  double f = nll_and_grad(theta, &grad);
  for (int it = 0; it < params.logistic_max_iter; ++it) {
    double gnorm2 = 0.0;
    for (double g : grad) gnorm2 += g * g;
    if (std::sqrt(gnorm2) <= params.logistic_tol) break;
    step = std::min(step * 2.0, 1e6);
    double f_trial = 0.0;
    for (;;) {
      for (std::size_t i = 0; i < theta.size(); ++i) trial[i] = theta[i] - step * grad[i];
      f_trial = nll_and_grad(trial, nullptr);
      if (f_trial <= f - 1e-4 * step * gnorm2 || step < 1e-16) break;
      step *= 0.5;
    }
    theta.swap(trial);
    f = nll_and_grad(theta, &grad);
  }

  // De-standardize into raw-feature coefficients.
  PropensityModel::LogisticState st;
  st.coef.assign(num_classes * dim, 0.0);
  for (int c = 1; c < num_classes; ++c) {
    double b0 = theta[c * dim];
    for (int j = 0; j < d; ++j) {
      double cj = theta[c * dim + 1 + j] / stats.scale[j];
      st.coef[c * dim + 1 + j] = cj;
      b0 -= cj * stats.mean[j];
    }
    st.coef[c * dim] = b0;
  }
  return st;
}

}  // namespace

// ---------------------------------------------------------------------------
// Prediction

double OutcomePredictor::predict(std::span<const double> x) const {
  if (const auto* lin = std::get_if<LinearState>(&state_)) {
    if (x.size() != lin->coef.size()) {
      throw Error(Errc::invalid_argument, "covariate length mismatch in predict");
    }
    double v = lin->intercept;
    for (std::size_t j = 0; j < lin->coef.size(); ++j) v += lin->coef[j] * x[j];
    return v;
  }
  if (const auto* tree = std::get_if<TreeState>(&state_)) {
    return tree_predict_value(tree->nodes, x);
  }
  const auto& knn = std::get<KnnState>(state_);
  if (static_cast<int>(x.size()) != knn.dim) {
    throw Error(Errc::invalid_argument, "covariate length mismatch in predict");
  }
  std::size_t n = knn.outcomes.size();
  thread_local std::vector<std::pair<double, std::uint32_t>> scratch;
  scratch.clear();
  scratch.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    double d2 = 0.0;
    const double* p = knn.points.data() + i * knn.dim;
    for (int j = 0; j < knn.dim; ++j) {
      double diff = p[j] - x[j];
      d2 += diff * diff;
    }
    scratch.emplace_back(d2, static_cast<std::uint32_t>(i));
  }
  std::size_t k = std::min<std::size_t>(knn.k, n);
  std::nth_element(scratch.begin(), scratch.begin() + (k - 1), scratch.end());
  double wsum = 0.0, wy = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    std::uint32_t idx = scratch[i].second;
    double wi = knn.weights.empty() ? 1.0 : knn.weights[idx];
    wsum += wi;
    wy += wi * knn.outcomes[idx];
  }
  return wsum > 0.0 ? wy / wsum : 0.0;
}

std::vector<double> OutcomeModelSet::predict_all(std::span<const double> x) const {
  std::vector<double> out(models.size());
  for (std::size_t t = 0; t < models.size(); ++t) out[t] = models[t].predict(x);
  return out;
}

std::vector<double> PropensityModel::predict(std::span<const double> x) const {
  std::vector<double> p(treatment_count_);
  if (const auto* lg = std::get_if<LogisticState>(&state_)) {
    int dim = feature_dim_ + 1;
    double maxl = 0.0;
    for (int c = 0; c < treatment_count_; ++c) {
      double l = lg->coef[c * dim];
      for (int j = 0; j < feature_dim_; ++j) l += lg->coef[c * dim + 1 + j] * x[j];
      p[c] = l;
      maxl = std::max(maxl, l);
    }
    double denom = 0.0;
    for (int c = 0; c < treatment_count_; ++c) denom += std::exp(p[c] - maxl);
    for (int c = 0; c < treatment_count_; ++c) p[c] = std::exp(p[c] - maxl) / denom;
  } else {
    const auto& tree = std::get<TreeState>(state_);
    p = tree_predict_vector(tree.nodes, x);
  }
  return clip_to_simplex(std::move(p), clip_floor_);
}

std::vector<double> clip_to_simplex(std::vector<double> p, double floor) {
  int k = static_cast<int>(p.size());
  if (floor * k > 1.0) {
    throw Error(Errc::invalid_argument, "clip floor too large for the number of treatments");
  }
  std::vector<bool> fixed(k, false);
  for (int round = 0; round <= k; ++round) {
    int nfixed = 0;
    double free_sum = 0.0;
    for (int i = 0; i < k; ++i) {
      if (fixed[i]) {
        ++nfixed;
      } else {
        free_sum += p[i];
      }
    }
    double remaining = 1.0 - floor * nfixed;
    bool changed = false;
    if (nfixed == k) break;
    if (free_sum <= 0.0) {
      double share = remaining / (k - nfixed);
      for (int i = 0; i < k; ++i) {
        if (!fixed[i]) p[i] = share;
      }
    } else {
      double f = remaining / free_sum;
      for (int i = 0; i < k; ++i) {
        if (!fixed[i]) p[i] *= f;
      }
    }
    for (int i = 0; i < k; ++i) {
      if (!fixed[i] && p[i] < floor) {
        p[i] = floor;
        fixed[i] = true;
        changed = true;
      }
    }
    if (!changed) break;
  }
  return p;
}

// ---------------------------------------------------------------------------
// Fitting entry points

namespace {

OutcomePredictor fit_one(PredictorKind kind, Adjustment adjustment, int treatment,
                         const FitMatrix& m, const KindParams& params) {
  switch (kind) {
    case PredictorKind::knn:
      return {kind, adjustment, treatment, fit_knn(m, params)};
    case PredictorKind::ols:
      return {kind, adjustment, treatment, fit_ols(m)};
    case PredictorKind::lasso:
      return {kind, adjustment, treatment, fit_lasso(m, params)};
    default:
      return {kind, adjustment, treatment,
              OutcomePredictor::TreeState{
                  fit_regression_tree(m, params.max_depth, params.min_leaf)}};
  }
}

}  // namespace

OutcomeModelSet fit_outcome_models(const Dataset& data, PredictorKind kind,
                                   const KindParams& params, Adjustment adjustment,
                                   const PropensityModel* propensity) {
  if (adjustment != Adjustment::direct && propensity == nullptr) {
    throw Error(Errc::invalid_argument, "ipw/dr adjustment requires a propensity model");
  }
  std::size_t n = data.size();
  int d = data.feature_dim();
  int mt = data.treatment_count();

  // Propensities evaluated once per row when needed.
  std::vector<double> prop;
  if (adjustment != Adjustment::direct) {
    prop.resize(n * mt);
    for (std::size_t i = 0; i < n; ++i) {
      auto p = propensity->predict(data.covariates(i));
      std::copy(p.begin(), p.end(), prop.begin() + i * mt);
    }
  }

  OutcomeModelSet out;
  out.feature_dim = d;
  out.treatment_count = mt;

  if (adjustment == Adjustment::dr) {
    OutcomeModelSet direct = fit_outcome_models(data, kind, params, Adjustment::direct);
    std::vector<double> x(n * d), pseudo(n);
    for (std::size_t i = 0; i < n; ++i) {
      auto xi = data.covariates(i);
      std::copy(xi.begin(), xi.end(), x.begin() + i * d);
    }
    for (int t = 0; t < mt; ++t) {
      for (std::size_t i = 0; i < n; ++i) {
        double mdir = direct.models[t].predict(data.covariates(i));
        double corr = 0.0;
        if (data.treatment(i) == t) {
          corr = (data.outcome(i) - mdir) / prop[i * mt + t];
        }
        pseudo[i] = mdir + corr;
      }
      FitMatrix fm{n, d, x.data(), pseudo.data(), nullptr};
      out.models.push_back(fit_one(kind, Adjustment::dr, t, fm, params));
    }
    return out;
  }

  for (int t = 0; t < mt; ++t) {
    auto arm = data.arm_indices(t);
    if (arm.empty()) {
      throw Error(Errc::data, "treatment arm " + std::to_string(t) + " is empty");
    }
    std::vector<double> x(arm.size() * d), y(arm.size()), w;
    for (std::size_t r = 0; r < arm.size(); ++r) {
      auto xi = data.covariates(arm[r]);
      std::copy(xi.begin(), xi.end(), x.begin() + r * d);
      y[r] = data.outcome(arm[r]);
    }
    if (adjustment == Adjustment::ipw) {
      w.resize(arm.size());
      for (std::size_t r = 0; r < arm.size(); ++r) w[r] = 1.0 / prop[arm[r] * mt + t];
    }
    FitMatrix fm{arm.size(), d, x.data(), y.data(), w.empty() ? nullptr : w.data()};
    out.models.push_back(fit_one(kind, adjustment, t, fm, params));
  }
  return out;
}

PropensityModel fit_propensity(const Dataset& data, PropensityKind kind, const KindParams& params,
                               double clip_floor) {
  if (!(clip_floor > 0.0 && clip_floor < 0.5)) {
    throw Error(Errc::invalid_argument, "clip_floor must lie in (0, 0.5)");
  }
  int mt = data.treatment_count();
  if (clip_floor * mt > 1.0) {
    throw Error(Errc::invalid_argument, "clip floor too large for the number of treatments");
  }
  std::vector<bool> seen(mt, false);
  int distinct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!seen[data.treatment(i)]) {
      seen[data.treatment(i)] = true;
      ++distinct;
    }
  }
  if (distinct < 2) {
    throw Error(Errc::data, "single treatment in dataset; propensity fit needs at least two");
  }

  std::size_t n = data.size();
  int d = data.feature_dim();
  std::vector<double> x(n * d);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto xi = data.covariates(i);
    std::copy(xi.begin(), xi.end(), x.begin() + i * d);
    labels[i] = data.treatment(i);
  }
  if (kind == PropensityKind::multinomial_logistic) {
    auto st = fit_multinomial_logistic(n, d, x.data(), labels.data(), mt, params);
    return {kind, mt, d, clip_floor, std::move(st)};
  }
  PropensityModel::TreeState st{
      fit_classification_tree(n, d, x.data(), labels.data(), mt, params.max_depth,
                              params.min_leaf)};
  return {kind, mt, d, clip_floor, std::move(st)};
}

CalibrationCurve weighted_calibration(const OutcomePredictor& model, const Dataset& data,
                                      const PropensityModel& propensity, int bucket_count) {
  if (bucket_count < 1) throw Error(Errc::invalid_argument, "bucket_count must be >= 1");
  auto arm = data.arm_indices(model.treatment());
  if (arm.empty()) {
    throw Error(Errc::data,
                "treatment arm " + std::to_string(model.treatment()) + " is empty");
  }
  if (static_cast<std::size_t>(bucket_count) > arm.size()) {
    throw Error(Errc::invalid_argument, "bucket_count exceeds arm size");
  }
  struct Entry {
    double pred;
    double y;
    double w;
    std::size_t idx;
  };
  std::vector<Entry> entries;
  entries.reserve(arm.size());
  for (auto i : arm) {
    auto x = data.covariates(i);
    double p = propensity.predict(x)[model.treatment()];
    entries.push_back({model.predict(x), data.outcome(i), 1.0 / p, i});
  }
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    return a.pred != b.pred ? a.pred < b.pred : a.idx < b.idx;
  });
  CalibrationCurve curve;
  std::size_t n = entries.size();
  for (int bkt = 0; bkt < bucket_count; ++bkt) {
    std::size_t lo = bkt * n / bucket_count;
    std::size_t hi = (bkt + 1) * n / bucket_count;
    double sp = 0.0, swy = 0.0, sw = 0.0;
    for (std::size_t i = lo; i < hi; ++i) {
      sp += entries[i].pred;
      swy += entries[i].w * entries[i].y;
      sw += entries[i].w;
    }
    curve.buckets.push_back({sp / static_cast<double>(hi - lo), swy / sw, sw});
  }
  return curve;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

ordered_json tree_nodes_to_json(const std::vector<TreeNode>& nodes) {
  ordered_json arr = ordered_json::array();
  for (const auto& n : nodes) {
    arr.push_back({n.feature, n.threshold, n.left, n.right, n.value});
  }
  return arr;
}

std::vector<TreeNode> tree_nodes_from_json(const ordered_json& arr) {
  std::vector<TreeNode> nodes;
  for (const auto& e : arr) {
    TreeNode n;
    n.feature = e.at(0).get<int>();
    n.threshold = e.at(1).get<double>();
    n.left = e.at(2).get<int>();
    n.right = e.at(3).get<int>();
    n.value = e.at(4).get<std::vector<double>>();
    nodes.push_back(std::move(n));
  }
  if (nodes.empty()) throw Error(Errc::schema, "tree model has no nodes");
  return nodes;
}

}  // namespace

ordered_json OutcomePredictor::to_json() const {
  ordered_json j;
  j["treatment"] = treatment_;
  j["kind"] = to_string(kind_);
  j["adjustment"] = to_string(adjustment_);
  ordered_json st;
  if (const auto* lin = linear_state()) {
    st["intercept"] = lin->intercept;
    st["coefficients"] = lin->coef;
  } else if (const auto* tree = tree_state()) {
    st["nodes"] = tree_nodes_to_json(tree->nodes);
  } else {
    const auto& knn = std::get<KnnState>(state_);
    st["k"] = knn.k;
    st["dim"] = knn.dim;
    st["points"] = knn.points;
    st["outcomes"] = knn.outcomes;
    st["weights"] = knn.weights;
  }
  j["state"] = std::move(st);
  return j;
}

OutcomePredictor OutcomePredictor::from_json(const ordered_json& j) {
  PredictorKind kind = predictor_kind_from_string(j.at("kind").get<std::string>());
  Adjustment adj = adjustment_from_string(j.at("adjustment").get<std::string>());
  int treatment = j.at("treatment").get<int>();
  const auto& st = j.at("state");
  switch (kind) {
    case PredictorKind::ols:
    case PredictorKind::lasso: {
      LinearState s;
      s.intercept = st.at("intercept").get<double>();
      s.coef = st.at("coefficients").get<std::vector<double>>();
      return {kind, adj, treatment, std::move(s)};
    }
    case PredictorKind::tree: {
      TreeState s{tree_nodes_from_json(st.at("nodes"))};
      return {kind, adj, treatment, std::move(s)};
    }
    default: {
      KnnState s;
      s.k = st.at("k").get<int>();
      s.dim = st.at("dim").get<int>();
      s.points = st.at("points").get<std::vector<double>>();
      s.outcomes = st.at("outcomes").get<std::vector<double>>();
      s.weights = st.at("weights").get<std::vector<double>>();
      if (s.k < 1 || s.dim < 1 || s.outcomes.empty() ||
          s.points.size() != s.outcomes.size() * s.dim ||
          (!s.weights.empty() && s.weights.size() != s.outcomes.size())) {
        throw Error(Errc::schema, "inconsistent knn state in model payload");
      }
      return {kind, adj, treatment, std::move(s)};
    }
  }
}

ordered_json OutcomeModelSet::to_json() const {
  ordered_json j;
  j["feature_dim"] = feature_dim;
  j["treatment_count"] = treatment_count;
  ordered_json arr = ordered_json::array();
  for (const auto& m : models) arr.push_back(m.to_json());
  j["models"] = std::move(arr);
  return j;
}

OutcomeModelSet OutcomeModelSet::from_json(const ordered_json& j) {
  OutcomeModelSet s;
  s.feature_dim = j.at("feature_dim").get<int>();
  s.treatment_count = j.at("treatment_count").get<int>();
  for (const auto& e : j.at("models")) s.models.push_back(OutcomePredictor::from_json(e));
  if (static_cast<int>(s.models.size()) != s.treatment_count) {
    throw Error(Errc::schema, "model set does not cover every treatment");
  }
  for (int t = 0; t < s.treatment_count; ++t) {
    if (s.models[t].treatment() != t) {
      throw Error(Errc::schema, "model set treatments out of order");
    }
  }
  return s;
}

ordered_json PropensityModel::to_json() const {
  ordered_json j;
  j["kind"] = to_string(kind_);
  j["treatment_count"] = treatment_count_;
  j["feature_dim"] = feature_dim_;
  j["clip_floor"] = clip_floor_;
  ordered_json st;
  if (const auto* lg = std::get_if<LogisticState>(&state_)) {
    st["coef"] = lg->coef;
  } else {
    st["nodes"] = tree_nodes_to_json(std::get<TreeState>(state_).nodes);
  }
  j["state"] = std::move(st);
  return j;
}

PropensityModel PropensityModel::from_json(const ordered_json& j) {
  PropensityKind kind = propensity_kind_from_string(j.at("kind").get<std::string>());
  int mt = j.at("treatment_count").get<int>();
  int d = j.at("feature_dim").get<int>();
  double floor = j.at("clip_floor").get<double>();
  const auto& st = j.at("state");
  if (kind == PropensityKind::multinomial_logistic) {
    LogisticState s;
    s.coef = st.at("coef").get<std::vector<double>>();
    if (s.coef.size() != static_cast<std::size_t>(mt) * (d + 1)) {
      throw Error(Errc::schema, "logistic coefficient shape mismatch");
    }
    return {kind, mt, d, floor, std::move(s)};
  }
  TreeState s{tree_nodes_from_json(st.at("nodes"))};
  return {kind, mt, d, floor, std::move(s)};
}

}  // namespace dualprice
