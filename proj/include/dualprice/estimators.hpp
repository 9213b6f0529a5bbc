#pragma once

#include <span>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "dualprice/dataset.hpp"

namespace dualprice {

using ordered_json = nlohmann::ordered_json;

enum class PredictorKind { knn, ols, lasso, tree };
enum class Adjustment { direct, ipw, dr };
enum class PropensityKind { multinomial_logistic, classification_tree };

PredictorKind predictor_kind_from_string(const std::string& s);
std::string to_string(PredictorKind k);
Adjustment adjustment_from_string(const std::string& s);
std::string to_string(Adjustment a);
PropensityKind propensity_kind_from_string(const std::string& s);
std::string to_string(PropensityKind k);

// Hyperparameters for every predictor kind; unused fields are ignored by the
// other kinds. Defaults follow the project conventions: k = round(sqrt(arm)),
// CART with max_depth 8 / min_leaf 20, lasso by cyclic coordinate descent.
struct KindParams {
  int k = 0;  // knn; 0 selects round(sqrt(arm size))
  double alpha = 0.6;           // lasso penalty
  double lasso_tol = 1e-8;      // max coefficient change per sweep
  int lasso_max_sweeps = 10000;
  int max_depth = 8;   // trees
  int min_leaf = 20;   // trees
  double logistic_tol = 1e-8;   // gradient norm
  int logistic_max_iter = 10000;
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  std::vector<double> value;  // size 1 (regression) or class count (classification)
};

double tree_predict_value(const std::vector<TreeNode>& nodes, std::span<const double> x);
const std::vector<double>& tree_predict_vector(const std::vector<TreeNode>& nodes,
                                               std::span<const double> x);

// One fitted conditional-mean model m̂ᵗ. Immutable after construction;
// predict is pure and safe to call concurrently.
class OutcomePredictor {
 public:
  struct KnnState {
    int k = 1;
    int dim = 0;
    std::vector<double> points;    // n x dim
    std::vector<double> outcomes;  // n
    std::vector<double> weights;   // empty => uniform
  };
  struct LinearState {
    double intercept = 0.0;
    std::vector<double> coef;
  };
  struct TreeState {
    std::vector<TreeNode> nodes;
  };

  OutcomePredictor(PredictorKind kind, Adjustment adjustment, int treatment,
                   std::variant<KnnState, LinearState, TreeState> state)
      : kind_(kind), adjustment_(adjustment), treatment_(treatment), state_(std::move(state)) {}

  PredictorKind kind() const { return kind_; }
  Adjustment adjustment() const { return adjustment_; }
  int treatment() const { return treatment_; }

  double predict(std::span<const double> x) const;

  const LinearState* linear_state() const { return std::get_if<LinearState>(&state_); }
  const KnnState* knn_state() const { return std::get_if<KnnState>(&state_); }
  const TreeState* tree_state() const { return std::get_if<TreeState>(&state_); }

  ordered_json to_json() const;
  static OutcomePredictor from_json(const ordered_json& j);

 private:
  PredictorKind kind_;
  Adjustment adjustment_;
  int treatment_;
  std::variant<KnnState, LinearState, TreeState> state_;
};

struct OutcomeModelSet {
  int feature_dim = 0;
  int treatment_count = 0;
  std::vector<OutcomePredictor> models;  // indexed by treatment

  std::vector<double> predict_all(std::span<const double> x) const;
  ordered_json to_json() const;
  static OutcomeModelSet from_json(const ordered_json& j);
};

// Treatment-assignment model p̂(x). Output is a probability vector with every
// component >= clip_floor after clipping and renormalization.
class PropensityModel {
 public:
  struct LogisticState {
    std::vector<double> coef;  // K x (d+1), class 0 pinned to zero
  };
  struct TreeState {
    std::vector<TreeNode> nodes;
  };

  PropensityModel(PropensityKind kind, int treatment_count, int feature_dim, double clip_floor,
                  std::variant<LogisticState, TreeState> state)
      : kind_(kind),
        treatment_count_(treatment_count),
        feature_dim_(feature_dim),
        clip_floor_(clip_floor),
        state_(std::move(state)) {}

  PropensityKind kind() const { return kind_; }
  int treatment_count() const { return treatment_count_; }
  int feature_dim() const { return feature_dim_; }
  double clip_floor() const { return clip_floor_; }

  std::vector<double> predict(std::span<const double> x) const;

  ordered_json to_json() const;
  static PropensityModel from_json(const ordered_json& j);

 private:
  PropensityKind kind_;
  int treatment_count_;
  int feature_dim_;
  double clip_floor_;
  std::variant<LogisticState, TreeState> state_;
};

struct CalibrationBucket {
  double mean_prediction;
  double hajek_outcome_rate;
  double weight_mass;
};

struct CalibrationCurve {
  std::vector<CalibrationBucket> buckets;
};

// Fits one model per treatment. direct: per-arm fit. ipw: per-arm fit
// weighted by 1/p̂ᵗ(x). dr: regresses doubly robust pseudo-outcomes, built
// from the direct fit and the propensity correction, over all rows.
OutcomeModelSet fit_outcome_models(const Dataset& data, PredictorKind kind,
                                   const KindParams& params, Adjustment adjustment,
                                   const PropensityModel* propensity = nullptr);

PropensityModel fit_propensity(const Dataset& data, PropensityKind kind, const KindParams& params,
                               double clip_floor = 0.01);

// Equal-count buckets over the model's arm sorted by prediction; per bucket
// the outcome rate is the self-normalized (Hajek) IPW average sum(w*y)/sum(w)
// with w = 1/p̂ᵗ(x).
CalibrationCurve weighted_calibration(const OutcomePredictor& model, const Dataset& data,
                                      const PropensityModel& propensity, int bucket_count);

// Lower-bounded simplex projection: every component >= floor, components sum
// to one, mass above the floor rescaled proportionally.
std::vector<double> clip_to_simplex(std::vector<double> p, double floor);

}  // namespace dualprice
