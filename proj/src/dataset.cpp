#include "dualprice/dataset.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace dualprice {

Dataset::Dataset(int feature_dim, int treatment_count)
    : feature_dim_(feature_dim), treatment_count_(treatment_count) {
  if (feature_dim < 1) throw Error(Errc::invalid_argument, "feature_dim must be positive");
  if (treatment_count < 1) throw Error(Errc::invalid_argument, "treatment_count must be positive");
}

int Dataset::intern_group(const std::string& label) {
  for (std::size_t i = 0; i < group_labels_.size(); ++i) {
    if (group_labels_[i] == label) return static_cast<int>(i);
  }
  group_labels_.push_back(label);
  return static_cast<int>(group_labels_.size() - 1);
}

int Dataset::find_group(const std::string& label) const {
  for (std::size_t i = 0; i < group_labels_.size(); ++i) {
    if (group_labels_[i] == label) return static_cast<int>(i);
  }
  return -1;
}

void Dataset::add_row(std::span<const double> covariates, int group, int treatment, double outcome,
                      std::span<const double> potential_outcomes) {
  if (static_cast<int>(covariates.size()) != feature_dim_) {
    throw Error(Errc::data, "row covariate length does not match feature_dim");
  }
  if (group < 0 || group >= static_cast<int>(group_labels_.size())) {
    throw Error(Errc::data, "row group index out of range");
  }
  if (treatment < 0 || treatment >= treatment_count_) {
    throw Error(Errc::data, "row treatment index out of range");
  }
  if (!potential_outcomes.empty() &&
      static_cast<int>(potential_outcomes.size()) != treatment_count_) {
    throw Error(Errc::data, "potential outcome vector length does not match treatment_count");
  }
  covariates_.insert(covariates_.end(), covariates.begin(), covariates.end());
  groups_.push_back(group);
  treatments_.push_back(treatment);
  outcomes_.push_back(outcome);
  if (!potential_outcomes.empty()) {
    potential_.insert(potential_.end(), potential_outcomes.begin(), potential_outcomes.end());
  }
}

std::vector<std::size_t> Dataset::arm_indices(int treatment) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < size(); ++i) {
    if (treatments_[i] == treatment) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> Dataset::group_counts() const {
  std::vector<std::size_t> counts(group_labels_.size(), 0);
  for (int g : groups_) counts[g]++;
  return counts;
}

void Dataset::validate() const {
  if (!potential_.empty() && potential_.size() != size() * treatment_count_) {
    throw Error(Errc::data, "potential outcomes must be present for all rows or none");
  }
  for (std::size_t i = 0; i < size(); ++i) {
    for (double v : covariates(i)) {
      if (!std::isfinite(v)) throw Error(Errc::data, "non-finite covariate in row " + std::to_string(i));
    }
    if (!std::isfinite(outcomes_[i])) {
      throw Error(Errc::data, "non-finite outcome in row " + std::to_string(i));
    }
    if (has_potential_outcomes()) {
      auto po = potential_outcomes(i);
      if (po[treatments_[i]] != outcomes_[i]) {
        throw Error(Errc::data, "outcome differs from potential_outcomes[treatment] in row " +
                                    std::to_string(i));
      }
    }
  }
}

std::uint64_t Dataset::fingerprint() const {
  std::ostringstream oss;
  write_csv(oss);
  return fnv1a(oss.str());
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

Dataset Dataset::read_csv(std::istream& in) {
  std::string header;
  // Leading '#' lines carry provenance (config fingerprint, seed).
  do {
    if (!std::getline(in, header)) throw Error(Errc::data, "empty dataset file");
  } while (!header.empty() && header[0] == '#');
  auto cols = split_line(header);
  // id,x0..x{d-1},group,treatment,outcome[,y0..ym]
  std::size_t d = 0;
  while (1 + d < cols.size() && cols[1 + d] == "x" + std::to_string(d)) ++d;
  if (d == 0) throw Error(Errc::data, "dataset header must contain covariate columns x0,...");
  std::size_t base = 1 + d;
  if (cols.size() < base + 3 || cols[0] != "id" || cols[base] != "group" ||
      cols[base + 1] != "treatment" || cols[base + 2] != "outcome") {
    throw Error(Errc::data, "dataset header must be id,x0..,group,treatment,outcome[,y0..]");
  }
  std::size_t m1 = cols.size() - (base + 3);
  for (std::size_t t = 0; t < m1; ++t) {
    if (cols[base + 3 + t] != "y" + std::to_string(t)) {
      throw Error(Errc::data, "potential outcome columns must be y0,...,ym with no gaps");
    }
  }
  // treatment_count is max(T)+1 when potential columns are absent; fixed by
  // the y-columns when present. Two passes keep it simple.
  std::vector<std::vector<std::string>> rows;
  std::string line;
  int max_t = -1;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto fields = split_line(line);
    if (fields.size() != cols.size()) {
      throw Error(Errc::data, "row " + std::to_string(rows.size() + 1) + " has " +
                                  std::to_string(fields.size()) + " fields, expected " +
                                  std::to_string(cols.size()));
    }
    max_t = std::max<long>(max_t, parse_long(fields[base + 1]));
    rows.push_back(std::move(fields));
  }
  if (rows.empty()) throw Error(Errc::data, "dataset has no rows");
  int treatment_count = m1 > 0 ? static_cast<int>(m1) : max_t + 1;
  if (max_t >= treatment_count) {
    throw Error(Errc::data, "treatment index exceeds potential-outcome column count");
  }
  Dataset ds(static_cast<int>(d), treatment_count);
  std::vector<double> x(d), po(m1);
  for (auto& fields : rows) {
    for (std::size_t j = 0; j < d; ++j) x[j] = parse_double(fields[1 + j]);
    int g = ds.intern_group(fields[base]);
    int t = static_cast<int>(parse_long(fields[base + 1]));
    double y = parse_double(fields[base + 2]);
    for (std::size_t j = 0; j < m1; ++j) po[j] = parse_double(fields[base + 3 + j]);
    ds.add_row(x, g, t, y, m1 > 0 ? std::span<const double>(po) : std::span<const double>{});
  }
  ds.validate();
  return ds;
}

Dataset Dataset::read_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io, "cannot open dataset file: " + path);
  return read_csv(in);
}

void Dataset::write_csv(std::ostream& out) const {
  out << "id";
  for (int j = 0; j < feature_dim_; ++j) out << ",x" << j;
  out << ",group,treatment,outcome";
  if (has_potential_outcomes()) {
    for (int t = 0; t < treatment_count_; ++t) out << ",y" << t;
  }
  out << "\n";
  for (std::size_t i = 0; i < size(); ++i) {
    out << i;
    for (double v : covariates(i)) out << "," << format_double(v);
    out << "," << group_labels_[groups_[i]] << "," << treatments_[i] << ","
        << format_double(outcomes_[i]);
    if (has_potential_outcomes()) {
      for (double v : potential_outcomes(i)) out << "," << format_double(v);
    }
    out << "\n";
  }
}

void Dataset::write_csv_file(const std::string& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::io, "cannot write dataset file: " + path);
  write_csv(out);
  if (!out) throw Error(Errc::io, "failed writing dataset file: " + path);
}

}  // namespace dualprice
