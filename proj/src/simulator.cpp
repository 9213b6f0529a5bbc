#include "dualprice/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>

namespace dualprice {

ArrivalProcess ArrivalProcess::poisson(double rate) {
  if (!(rate > 0.0)) throw Error(Errc::invalid_argument, "poisson rate must be > 0");
  ArrivalProcess p;
  p.kind = Kind::poisson;
  p.rate = rate;
  return p;
}

ArrivalProcess ArrivalProcess::deterministic(double interval) {
  if (!(interval > 0.0)) throw Error(Errc::invalid_argument, "interval must be > 0");
  ArrivalProcess p;
  p.kind = Kind::deterministic;
  p.interval = interval;
  return p;
}

ArrivalProcess ArrivalProcess::trace(std::vector<double> times) {
  for (std::size_t i = 1; i < times.size(); ++i) {
    if (times[i] < times[i - 1]) {
      throw Error(Errc::invalid_argument, "trace times must be nondecreasing");
    }
  }
  ArrivalProcess p;
  p.kind = Kind::trace;
  p.times = std::move(times);
  return p;
}

std::vector<double> ArrivalProcess::realize(double horizon, Rng& rng) const {
  std::vector<double> out;
  switch (kind) {
    case Kind::poisson: {
      double t = rng.exponential(rate);
      while (t <= horizon) {
        out.push_back(t);
        t += rng.exponential(rate);
      }
      break;
    }
    case Kind::deterministic: {
      for (double t = interval; t <= horizon; t += interval) out.push_back(t);
      break;
    }
    case Kind::trace:
      for (double t : times) {
        if (t <= horizon) out.push_back(t);
      }
      break;
  }
  return out;
}

CovariateSource CovariateSource::resample(const Dataset* dataset) {
  if (dataset == nullptr || dataset->size() == 0) {
    throw Error(Errc::invalid_argument, "resample source needs a nonempty dataset");
  }
  CovariateSource s;
  s.kind = Kind::resample;
  s.dataset = dataset;
  s.feature_dim = dataset->feature_dim();
  return s;
}

CovariateSource CovariateSource::synthetic(Scenario scenario) {
  CovariateSource s;
  s.kind = Kind::synthetic;
  s.scenario = scenario;
  s.feature_dim = Scenario::kFeatureDim;
  return s;
}

CovariateSource CovariateSource::explicit_list(std::vector<double> covariates,
                                               std::vector<std::string> groups,
                                               int feature_dim) {
  if (feature_dim < 1 || covariates.size() % feature_dim != 0 ||
      groups.size() != covariates.size() / feature_dim) {
    throw Error(Errc::invalid_argument, "explicit covariate list shape mismatch");
  }
  CovariateSource s;
  s.kind = Kind::explicit_list;
  s.covariates = std::move(covariates);
  s.groups = std::move(groups);
  s.feature_dim = feature_dim;
  return s;
}

OutcomeMode outcome_mode_from_string(const std::string& s) {
  if (s == "true_means") return OutcomeMode::true_means;
  if (s == "sampled_potential") return OutcomeMode::sampled_potential;
  if (s == "none") return OutcomeMode::none;
  throw Error(Errc::invalid_argument, "unknown outcome mode: " + s);
}

std::string to_string(OutcomeMode m) {
  switch (m) {
    case OutcomeMode::true_means: return "true_means";
    case OutcomeMode::sampled_potential: return "sampled_potential";
    default: return "none";
  }
}

void SimConfig::validate() const {
  if (!(horizon > 0.0)) throw Error(Errc::invalid_argument, "horizon must be > 0");
  if (policy == nullptr) throw Error(Errc::invalid_argument, "simulation needs a policy");
  int m1 = policy->treatment_count();
  for (int t = 1; t < m1; ++t) {
    if (resource_processes.find(t) == resource_processes.end()) {
      throw Error(Errc::invalid_argument,
                  "missing resource process for treatment " + std::to_string(t));
    }
  }
  for (const auto& [t, proc] : resource_processes) {
    if (t < 1 || t >= m1) {
      throw Error(Errc::invalid_argument,
                  "resource process for invalid treatment " + std::to_string(t));
    }
  }
  if (covariates.feature_dim != policy->feature_dim()) {
    throw Error(Errc::invalid_argument, "policy/feature-dim mismatch in simulation config");
  }
  if (outcome_mode == OutcomeMode::sampled_potential &&
      covariates.kind == CovariateSource::Kind::resample &&
      !covariates.dataset->has_potential_outcomes()) {
    throw Error(Errc::data, "sampled_potential outcome mode needs potential outcomes");
  }
  if (outcome_mode == OutcomeMode::sampled_potential &&
      covariates.kind == CovariateSource::Kind::explicit_list) {
    throw Error(Errc::invalid_argument,
                "sampled_potential outcome mode unavailable for explicit covariates");
  }
}

namespace {

struct QueuedIndividual {
  double arrival_day;
  double value_here;  // outcome if matched in this queue
  double value_zero;  // outcome if still waiting at horizon
};

struct IdleResource {
  double arrival_day;
};

}  // namespace

SimulationTrace run_simulation(const SimConfig& config) {
  config.validate();
  const PolicyArtifact& policy = *config.policy;
  int m1 = policy.treatment_count();

  Rng ind_rng = Rng::derive(config.seed, 1);
  Rng cov_rng = Rng::derive(config.seed, 2);
  std::vector<double> ind_times = config.individual_process.realize(config.horizon, ind_rng);
  std::vector<std::vector<double>> res_times(m1);
  for (int t = 1; t < m1; ++t) {
    Rng res_rng = Rng::derive(config.seed, 100 + static_cast<std::uint64_t>(t));
    res_times[t] = config.resource_processes.at(t).realize(config.horizon, res_rng);
  }

  // Group-label translation from the covariate source into the policy's set.
  std::vector<int> dataset_group_map;
  if (config.covariates.kind == CovariateSource::Kind::resample) {
    for (const auto& label : config.covariates.dataset->group_labels()) {
      dataset_group_map.push_back(policy.resolve_group(label));
    }
  }
  int synthetic_group = -1;
  if (config.covariates.kind == CovariateSource::Kind::synthetic) {
    synthetic_group = policy.resolve_group("all");
  }

  SimulationTrace trace;
  std::vector<std::deque<QueuedIndividual>> queues(m1);
  std::vector<std::deque<IdleResource>> idle(m1);
  for (int t = 1; t < m1; ++t) {
    trace.routed[t] = 0;
    trace.resource_arrivals[t] = 0;
    trace.matches[t] = 0;
    trace.queue_series[t] = {};
  }

  auto queue_step = [&](int t, double day, int delta) {
    long prev = trace.queue_series[t].empty() ? 0 : trace.queue_series[t].back().size;
    trace.queue_series[t].push_back({day, prev + delta});
  };

  std::vector<double> x(config.covariates.feature_dim);
  std::vector<double> po(m1, 0.0);
  std::size_t explicit_next = 0;
  std::size_t ind_ptr = 0;
  std::vector<std::size_t> res_ptr(m1, 0);

  auto match = [&](int t, double ind_arrival, double res_arrival, double value) {
    double match_day = std::max(ind_arrival, res_arrival);
    double adjusted = res_arrival - ind_arrival;  // positive: the person waited
    trace.wait_records.push_back(
        {t, ind_arrival, match_day, std::max(adjusted, 0.0), adjusted});
    trace.matches[t]++;
    trace.realized_outcome_total += value;
  };

  for (;;) {
    // Next event: earliest time; resources beat individuals on ties, lower
    // treatment index first among resources.
    int next_res_t = -1;
    for (int t = 1; t < m1; ++t) {
      if (res_ptr[t] < res_times[t].size()) {
        if (next_res_t < 0 || res_times[t][res_ptr[t]] < res_times[next_res_t][res_ptr[next_res_t]]) {
          next_res_t = t;
        }
      }
    }
    bool have_ind = ind_ptr < ind_times.size();
    bool have_res = next_res_t > 0;
    if (!have_ind && !have_res) break;
    bool take_res =
        have_res && (!have_ind || res_times[next_res_t][res_ptr[next_res_t]] <= ind_times[ind_ptr]);

    if (take_res) {
      int t = next_res_t;
      double day = res_times[t][res_ptr[t]++];
      trace.resource_arrivals[t]++;
      if (!queues[t].empty()) {
        QueuedIndividual q = queues[t].front();
        queues[t].pop_front();
        match(t, q.arrival_day, day, q.value_here);
      } else {
        idle[t].push_back({day});
      }
      queue_step(t, day, -1);
      continue;
    }

    double day = ind_times[ind_ptr++];
    trace.individual_arrivals++;
    int g;
    std::fill(po.begin(), po.end(), 0.0);
    switch (config.covariates.kind) {
      case CovariateSource::Kind::resample: {
        std::size_t row = cov_rng.uniform_index(config.covariates.dataset->size());
        auto xi = config.covariates.dataset->covariates(row);
        std::copy(xi.begin(), xi.end(), x.begin());
        g = dataset_group_map[config.covariates.dataset->group(row)];
        if (config.outcome_mode == OutcomeMode::sampled_potential) {
          auto pr = config.covariates.dataset->potential_outcomes(row);
          std::copy(pr.begin(), pr.end(), po.begin());
        }
        break;
      }
      case CovariateSource::Kind::synthetic: {
        x[0] = cov_rng.normal();
        x[1] = cov_rng.normal();
        g = synthetic_group;
        if (config.outcome_mode == OutcomeMode::sampled_potential) {
          for (int t = 0; t < m1; ++t) {
            po[t] = true_means(config.covariates.scenario, t, x) +
                    config.covariates.scenario.sigma * cov_rng.normal();
          }
        }
        break;
      }
      default: {
        if (explicit_next >= config.covariates.groups.size()) {
          throw Error(Errc::data, "covariate trace exhausted before horizon");
        }
        const double* src =
            config.covariates.covariates.data() + explicit_next * config.covariates.feature_dim;
        std::copy(src, src + config.covariates.feature_dim, x.begin());
        g = policy.resolve_group(config.covariates.groups[explicit_next]);
        ++explicit_next;
        break;
      }
    }

    auto value_at = [&](int t) -> double {
      switch (config.outcome_mode) {
        case OutcomeMode::none:
          return 0.0;
        case OutcomeMode::sampled_potential:
          return po[t];
        default:
          if (config.outcome_scenario.has_value()) {
            return true_means(*config.outcome_scenario, t, x);
          }
          return policy.models().models[t].predict(x);
      }
    };

    int t = assign(policy, x, g);
    if (t == 0) {
      trace.exits_no_treatment++;
      trace.realized_outcome_total += value_at(0);
      continue;
    }
    trace.routed[t]++;
    if (!idle[t].empty()) {
      IdleResource r = idle[t].front();
      idle[t].pop_front();
      match(t, day, r.arrival_day, value_at(t));
    } else {
      queues[t].push_back({day, value_at(t), value_at(0)});
    }
    queue_step(t, day, +1);
  }

  // Horizon: whoever is still waiting exits with no treatment.
  for (int t = 1; t < m1; ++t) {
    trace.waiting_at_horizon[t] = queues[t].size();
    trace.idle_resources_at_horizon[t] = idle[t].size();
    for (const auto& q : queues[t]) {
      trace.unmatched.push_back({t, q.arrival_day});
      trace.realized_outcome_total += q.value_zero;
    }
  }
  return trace;
}

// ---------------------------------------------------------------------------
// Aggregation

double percentile(std::vector<double> values, double p) {
  if (values.empty()) throw Error(Errc::invalid_argument, "percentile of empty set");
  std::sort(values.begin(), values.end());
  if (values.size() == 1) return values[0];
  double h = p / 100.0 * static_cast<double>(values.size() - 1);
  std::size_t lo = static_cast<std::size_t>(std::floor(h));
  std::size_t hi = std::min(lo + 1, values.size() - 1);
  double frac = h - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

AggregateStats aggregate_replications(const SimConfig& config, std::size_t replication_count,
                                      int threads) {
  if (replication_count < 1) {
    throw Error(Errc::invalid_argument, "replication_count must be >= 1");
  }
  config.validate();
  std::vector<SimulationTrace> traces(replication_count);
  parallel_for_index(
      replication_count,
      [&](std::size_t rep) {
        SimConfig local = config;
        local.seed = Rng::derive(config.seed, rep).raw();
        traces[rep] = run_simulation(local);
      },
      threads);

  AggregateStats agg;
  agg.replication_count = replication_count;
  int m1 = config.policy->treatment_count();

  // FCFS matches ordinals 1..matches(t) in order on every path, so the i-th
  // routed individual's wait exists exactly on paths with matches(t) >= i.
  for (int t = 1; t < m1; ++t) {
    std::vector<std::vector<const WaitRecord*>> per_rep(replication_count);
    std::size_t max_ordinal = 0;
    for (std::size_t rep = 0; rep < replication_count; ++rep) {
      for (const auto& rec : traces[rep].wait_records) {
        if (rec.treatment == t) per_rep[rep].push_back(&rec);
      }
      // wait_records are in match order == arrival order within a queue
      std::stable_sort(per_rep[rep].begin(), per_rep[rep].end(),
                       [](const WaitRecord* a, const WaitRecord* b) {
                         return a->arrival_day < b->arrival_day;
                       });
      max_ordinal = std::max(max_ordinal, per_rep[rep].size());
    }
    std::vector<OrdinalStats> stats;
    std::vector<double> waits, adjusted;
    for (std::size_t i = 0; i < max_ordinal; ++i) {
      waits.clear();
      adjusted.clear();
      for (std::size_t rep = 0; rep < replication_count; ++rep) {
        if (i < per_rep[rep].size()) {
          waits.push_back(per_rep[rep][i]->wait);
          adjusted.push_back(per_rep[rep][i]->adjusted_wait);
        }
      }
      OrdinalStats os;
      os.ordinal = i + 1;
      os.replications = waits.size();
      double sum_w = 0.0, sum_a = 0.0;
      for (double w : waits) sum_w += w;
      for (double a : adjusted) sum_a += a;
      os.mean_wait = sum_w / static_cast<double>(waits.size());
      os.mean_adjusted = sum_a / static_cast<double>(adjusted.size());
      os.p10_wait = percentile(waits, 10);
      os.p25_wait = percentile(waits, 25);
      os.p75_wait = percentile(waits, 75);
      os.p90_wait = percentile(waits, 90);
      os.p10_adjusted = percentile(adjusted, 10);
      os.p25_adjusted = percentile(adjusted, 25);
      os.p75_adjusted = percentile(adjusted, 75);
      os.p90_adjusted = percentile(adjusted, 90);
      stats.push_back(os);
    }
    agg.per_treatment[t] = std::move(stats);

    std::vector<double> avg_sizes;
    for (std::size_t rep = 0; rep < replication_count; ++rep) {
      const auto& series = traces[rep].queue_series.at(t);
      double integral = 0.0;
      double prev_day = 0.0;
      long prev_size = 0;
      for (const auto& pt : series) {
        integral += static_cast<double>(prev_size) * (pt.day - prev_day);
        prev_day = pt.day;
        prev_size = pt.size;
      }
      integral += static_cast<double>(prev_size) * (config.horizon - prev_day);
      avg_sizes.push_back(integral / config.horizon);
    }
    agg.time_avg_queue_size[t] = std::move(avg_sizes);
  }
  return agg;
}

// ---------------------------------------------------------------------------
// Exports

void SimulationTrace::write_waits_csv(const std::string& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::io, "cannot write trace file: " + path);
  out << "treatment,arrival_day,match_day,wait,adjusted_wait\n";
  for (const auto& rec : wait_records) {
    out << rec.treatment << "," << format_double(rec.arrival_day) << ","
        << format_double(rec.match_day) << "," << format_double(rec.wait) << ","
        << format_double(rec.adjusted_wait) << "\n";
  }
}

void SimulationTrace::write_queue_series_csv(int treatment, const std::string& path) const {
  auto it = queue_series.find(treatment);
  if (it == queue_series.end()) {
    throw Error(Errc::invalid_argument, "no queue series for treatment " +
                                            std::to_string(treatment));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::io, "cannot write queue series file: " + path);
  out << "day,queue_size\n";
  for (const auto& pt : it->second) {
    out << format_double(pt.day) << "," << pt.size << "\n";
  }
}

void AggregateStats::write_csv(const std::string& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::io, "cannot write aggregate file: " + path);
  out << "treatment,ordinal,mean,p10,p25,p75,p90,"
         "adjusted_mean,adjusted_p10,adjusted_p25,adjusted_p75,adjusted_p90\n";
  for (const auto& [t, stats] : per_treatment) {
    for (const auto& os : stats) {
      out << t << "," << os.ordinal << "," << format_double(os.mean_wait) << ","
          << format_double(os.p10_wait) << "," << format_double(os.p25_wait) << ","
          << format_double(os.p75_wait) << "," << format_double(os.p90_wait) << ","
          << format_double(os.mean_adjusted) << "," << format_double(os.p10_adjusted) << ","
          << format_double(os.p25_adjusted) << "," << format_double(os.p75_adjusted) << ","
          << format_double(os.p90_adjusted) << "\n";
    }
  }
}

ordered_json AggregateStats::queue_summary_json() const {
  ordered_json j;
  for (const auto& [t, sizes] : time_avg_queue_size) {
    ordered_json e;
    double sum = 0.0;
    for (double s : sizes) sum += s;
    e["mean_time_avg_size"] = sum / static_cast<double>(sizes.size());
    e["p10"] = percentile(sizes, 10);
    e["p90"] = percentile(sizes, 90);
    j[std::to_string(t)] = std::move(e);
  }
  return j;
}

}  // namespace dualprice
