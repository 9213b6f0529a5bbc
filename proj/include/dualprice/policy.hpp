#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dualprice/dataset.hpp"
#include "dualprice/dual_solver.hpp"
#include "dualprice/estimators.hpp"

namespace dualprice {

inline constexpr int kArtifactSchemaVersion = 1;

struct ArtifactMetadata {
  std::string created_at;        // ISO-8601 UTC; SOURCE_DATE_EPOCH overrides the clock
  std::uint64_t seed = 0;
  std::string data_fingerprint;  // hex FNV-1a of the training CSV bytes
  std::string library_version = kLibraryVersion;
  std::string rng;               // generator identity, for trace reproducibility
  std::string config_fingerprint;
  int feature_dim = 0;

  ordered_json to_json() const;
  static ArtifactMetadata from_json(const ordered_json& j);
};

// Current wall-clock time as ISO-8601 UTC; honors SOURCE_DATE_EPOCH so runs
// can be made byte-reproducible.
std::string now_iso8601();

// Everything needed to score an arrival deterministically: fitted models,
// the dual solution, the fairness spec, and capacities. Immutable; the
// adjustment table is prebuilt so assign() is just an argmax.
class PolicyArtifact {
 public:
  static PolicyArtifact make(OutcomeModelSet models, DualSolution dual, FairnessSpec fairness,
                             CapacityVector capacities, ArtifactMetadata metadata);

  const OutcomeModelSet& models() const { return models_; }
  const DualSolution& dual() const { return dual_; }
  const FairnessSpec& fairness() const { return fairness_; }
  const CapacityVector& capacities() const { return capacities_; }
  const ArtifactMetadata& metadata() const { return metadata_; }
  const AdjustmentTable& table() const { return *table_; }

  int treatment_count() const { return models_.treatment_count; }
  int feature_dim() const { return models_.feature_dim; }

  // Group label -> index in the dual's label set; errors when fairness is
  // active and the label is unknown, returns 0 otherwise.
  int resolve_group(const std::string& label) const;

  ordered_json to_json() const;
  static PolicyArtifact from_json(const ordered_json& j);

 private:
  PolicyArtifact(OutcomeModelSet models, DualSolution dual, FairnessSpec fairness,
                 CapacityVector capacities, ArtifactMetadata metadata);

  OutcomeModelSet models_;
  DualSolution dual_;
  FairnessSpec fairness_;
  CapacityVector capacities_;
  ArtifactMetadata metadata_;
  std::shared_ptr<const AdjustmentTable> table_;
};

// The dual-price scoring rule with all fairness adjustments applied.
std::vector<double> adjusted_scores(const PolicyArtifact& artifact, std::span<const double> x,
                                    const std::string& group);

// Lexicographic min-argmax of the adjusted scores; deterministic in (x, g).
int assign(const PolicyArtifact& artifact, std::span<const double> x, const std::string& group);
int assign(const PolicyArtifact& artifact, std::span<const double> x, int group_index);

// Atomic write (temp file + rename); load validates the schema version and
// fails without producing a partial artifact.
void save_artifact(const PolicyArtifact& artifact, const std::string& path);
PolicyArtifact load_artifact(const std::string& path);

// Evaluates every model on every row of `data`, carrying the group labels
// over; the input to solve().
ScoreMatrix build_score_matrix(const OutcomeModelSet& models, const Dataset& data);

}  // namespace dualprice
