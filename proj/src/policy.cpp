#include "dualprice/policy.hpp"

#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>

namespace dualprice {

ordered_json ArtifactMetadata::to_json() const {
  ordered_json j;
  j["created_at"] = created_at;
  j["seed"] = seed;
  j["data_fingerprint"] = data_fingerprint;
  j["library_version"] = library_version;
  j["rng"] = rng;
  j["config_fingerprint"] = config_fingerprint;
  j["feature_dim"] = feature_dim;
  return j;
}

ArtifactMetadata ArtifactMetadata::from_json(const ordered_json& j) {
  ArtifactMetadata m;
  m.created_at = j.at("created_at").get<std::string>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.data_fingerprint = j.at("data_fingerprint").get<std::string>();
  m.library_version = j.at("library_version").get<std::string>();
  m.rng = j.at("rng").get<std::string>();
  m.config_fingerprint = j.at("config_fingerprint").get<std::string>();
  m.feature_dim = j.at("feature_dim").get<int>();
  return m;
}

std::string now_iso8601() {
  std::time_t t;
  if (const char* env = std::getenv("SOURCE_DATE_EPOCH")) {
    t = static_cast<std::time_t>(std::atoll(env));
  } else {
    t = std::time(nullptr);
  }
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[80];
  std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d:%02dZ", tm.tm_year + 1900,
                tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec);
  return buf;
}

PolicyArtifact::PolicyArtifact(OutcomeModelSet models, DualSolution dual, FairnessSpec fairness,
                               CapacityVector capacities, ArtifactMetadata metadata)
    : models_(std::move(models)),
      dual_(std::move(dual)),
      fairness_(std::move(fairness)),
      capacities_(std::move(capacities)),
      metadata_(std::move(metadata)) {
  table_ = std::make_shared<AdjustmentTable>(fairness_, models_.treatment_count,
                                             dual_.group_counts, dual_.mu, dual_.lambda);
}

PolicyArtifact PolicyArtifact::make(OutcomeModelSet models, DualSolution dual,
                                    FairnessSpec fairness, CapacityVector capacities,
                                    ArtifactMetadata metadata) {
  if (models.treatment_count != capacities.treatment_count()) {
    throw Error(Errc::invalid_argument, "models do not cover every treatment in capacities");
  }
  if (static_cast<int>(dual.mu.size()) != models.treatment_count) {
    throw Error(Errc::invalid_argument, "dual solution does not match treatment count");
  }
  auto expected = enumerate_lambda_terms(fairness, dual.group_labels, models.treatment_count);
  if (expected.size() != dual.lambda.size()) {
    throw Error(Errc::invalid_argument, "dual lambda dimensions do not match the fairness spec");
  }
  return PolicyArtifact(std::move(models), std::move(dual), std::move(fairness),
                        std::move(capacities), std::move(metadata));
}

int PolicyArtifact::resolve_group(const std::string& label) const {
  for (std::size_t g = 0; g < dual_.group_labels.size(); ++g) {
    if (dual_.group_labels[g] == label) return static_cast<int>(g);
  }
  if (fairness_.kind != FairnessKind::none) {
    throw Error(Errc::invalid_argument,
                "group '" + label + "' unknown to the fairness-adjusted policy");
  }
  return 0;
}

std::vector<double> adjusted_scores(const PolicyArtifact& artifact, std::span<const double> x,
                                    const std::string& group) {
  int g = artifact.resolve_group(group);
  auto raw = artifact.models().predict_all(x);
  std::vector<double> out(raw.size());
  artifact.table().adjust(raw, g, out);
  return out;
}

int assign(const PolicyArtifact& artifact, std::span<const double> x, int group_index) {
  auto raw = artifact.models().predict_all(x);
  return artifact.table().assign(raw, group_index);
}

int assign(const PolicyArtifact& artifact, std::span<const double> x, const std::string& group) {
  return assign(artifact, x, artifact.resolve_group(group));
}

ordered_json PolicyArtifact::to_json() const {
  ordered_json j;
  j["schema_version"] = kArtifactSchemaVersion;
  ordered_json models = ordered_json::array();
  for (const auto& model : models_.models) models.push_back(model.to_json());
  j["models"] = std::move(models);
  j["dual"] = dual_.to_json();
  j["fairness"] = fairness_.to_json();
  j["capacities"] = capacities_.b;
  ordered_json meta = metadata_.to_json();
  meta["treatment_count"] = models_.treatment_count;
  j["metadata"] = std::move(meta);
  return j;
}

PolicyArtifact PolicyArtifact::from_json(const ordered_json& j) {
  int version = j.at("schema_version").get<int>();
  if (version != kArtifactSchemaVersion) {
    throw Error(Errc::schema, "artifact schema_version " + std::to_string(version) +
                                  " not supported; this build reads version " +
                                  std::to_string(kArtifactSchemaVersion));
  }
  ArtifactMetadata meta = ArtifactMetadata::from_json(j.at("metadata"));
  OutcomeModelSet models;
  models.feature_dim = meta.feature_dim;
  models.treatment_count = j.at("metadata").at("treatment_count").get<int>();
  for (const auto& e : j.at("models")) models.models.push_back(OutcomePredictor::from_json(e));
  if (static_cast<int>(models.models.size()) != models.treatment_count) {
    throw Error(Errc::schema, "artifact models do not cover every treatment");
  }
  DualSolution dual = DualSolution::from_json(j.at("dual"));
  FairnessSpec fairness = FairnessSpec::from_json(j.at("fairness"));
  CapacityVector caps(j.at("capacities").get<std::vector<double>>());
  return make(std::move(models), std::move(dual), std::move(fairness), std::move(caps),
              std::move(meta));
}

void save_artifact(const PolicyArtifact& artifact, const std::string& path) {
  std::string payload = artifact.to_json().dump();
  payload.push_back('\n');
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::io, "cannot write artifact file: " + tmp);
    out << payload;
    if (!out) throw Error(Errc::io, "failed writing artifact file: " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw Error(Errc::io, "cannot move artifact into place: " + path);
  }
}

PolicyArtifact load_artifact(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io, "cannot open artifact file: " + path);
  ordered_json j;
  try {
    j = ordered_json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::schema, std::string("corrupted artifact payload: ") + e.what());
  }
  try {
    return PolicyArtifact::from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::schema, std::string("artifact payload missing fields: ") + e.what());
  }
}

ScoreMatrix build_score_matrix(const OutcomeModelSet& models, const Dataset& data) {
  if (models.feature_dim != data.feature_dim()) {
    throw Error(Errc::invalid_argument, "model feature_dim does not match dataset");
  }
  ScoreMatrix s;
  s.n = data.size();
  s.treatment_count = models.treatment_count;
  s.values.resize(s.n * models.treatment_count);
  s.groups.resize(s.n);
  s.group_labels = data.group_labels();
  for (std::size_t i = 0; i < s.n; ++i) {
    auto x = data.covariates(i);
    for (int t = 0; t < models.treatment_count; ++t) {
      s.values[i * models.treatment_count + t] = models.models[t].predict(x);
    }
    s.groups[i] = data.group(i);
  }
  s.group_counts = data.group_counts();
  return s;
}

}  // namespace dualprice
