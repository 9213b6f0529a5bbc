#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dualprice/dataset.hpp"
#include "dualprice/policy.hpp"
#include "dualprice/rng.hpp"
#include "dualprice/synthetic.hpp"

namespace dualprice {

// Arrival processes: Poisson (exponential inter-arrivals via inverse CDF),
// fixed-interval, or an explicit nondecreasing trace of times (days).
struct ArrivalProcess {
  enum class Kind { poisson, deterministic, trace } kind = Kind::poisson;
  double rate = 1.0;      // poisson, per day
  double interval = 1.0;  // deterministic, days
  std::vector<double> times;

  static ArrivalProcess poisson(double rate);
  static ArrivalProcess deterministic(double interval);
  static ArrivalProcess trace(std::vector<double> times);

  std::vector<double> realize(double horizon, Rng& rng) const;
};

// Where arriving individuals' covariates (and group labels) come from.
struct CovariateSource {
  enum class Kind { resample, synthetic, explicit_list } kind = Kind::synthetic;
  const Dataset* dataset = nullptr;  // resample (uniform with replacement)
  Scenario scenario{};               // synthetic
  // explicit_list: covariates (row-major) + group labels per arrival
  std::vector<double> covariates;
  std::vector<std::string> groups;
  int feature_dim = 0;

  static CovariateSource resample(const Dataset* dataset);
  static CovariateSource synthetic(Scenario scenario);
  static CovariateSource explicit_list(std::vector<double> covariates,
                                       std::vector<std::string> groups, int feature_dim);
};

enum class OutcomeMode { true_means, sampled_potential, none };

OutcomeMode outcome_mode_from_string(const std::string& s);
std::string to_string(OutcomeMode m);

struct SimConfig {
  double horizon = 0.0;  // days
  ArrivalProcess individual_process;
  CovariateSource covariates;
  std::map<int, ArrivalProcess> resource_processes;  // one per treatment != 0
  const PolicyArtifact* policy = nullptr;
  OutcomeMode outcome_mode = OutcomeMode::none;
  // true_means accounting uses this scenario when set, the policy's own
  // estimates otherwise.
  std::optional<Scenario> outcome_scenario;
  std::uint64_t seed = 0;

  void validate() const;
};

struct WaitRecord {
  int treatment;
  double arrival_day;
  double match_day;
  double wait;           // match - arrival, >= 0
  double adjusted_wait;  // wait minus the matched resource's idle time:
                         // positive = person waited, negative = resource idled
};

struct UnmatchedRecord {
  int treatment;  // queue the individual was waiting in; treated as t = 0
  double arrival_day;
};

struct QueuePoint {
  double day;
  long size;  // waiting individuals minus idle resources
};

struct SimulationTrace {
  std::vector<WaitRecord> wait_records;             // in match order
  std::vector<UnmatchedRecord> unmatched;           // still queued at horizon
  std::map<int, std::vector<QueuePoint>> queue_series;
  std::size_t individual_arrivals = 0;
  std::map<int, std::size_t> routed;        // individuals sent to queue t
  std::map<int, std::size_t> resource_arrivals;
  std::map<int, std::size_t> matches;
  std::map<int, std::size_t> idle_resources_at_horizon;
  std::map<int, std::size_t> waiting_at_horizon;
  std::size_t exits_no_treatment = 0;  // assigned t = 0 on arrival
  double realized_outcome_total = 0.0;

  void write_waits_csv(const std::string& path) const;
  void write_queue_series_csv(int treatment, const std::string& path) const;
};

SimulationTrace run_simulation(const SimConfig& config);

// Across-replication statistics: per treatment and per arrival ordinal i
// (the i-th individual routed to that queue on each path), the mean and
// {p10, p25, p75, p90} of wait and adjusted wait over the replications that
// reached ordinal i; plus time-averaged queue sizes per replication.
struct OrdinalStats {
  std::size_t ordinal;       // 1-based
  std::size_t replications;  // paths contributing
  double mean_wait, p10_wait, p25_wait, p75_wait, p90_wait;
  double mean_adjusted, p10_adjusted, p25_adjusted, p75_adjusted, p90_adjusted;
};

struct AggregateStats {
  std::map<int, std::vector<OrdinalStats>> per_treatment;
  std::map<int, std::vector<double>> time_avg_queue_size;  // per replication
  std::size_t replication_count = 0;

  void write_csv(const std::string& path) const;
  ordered_json queue_summary_json() const;
};

AggregateStats aggregate_replications(const SimConfig& config, std::size_t replication_count,
                                      int threads = 0);

// Interpolating percentile on a sorted copy of the input.
double percentile(std::vector<double> values, double p);

}  // namespace dualprice
