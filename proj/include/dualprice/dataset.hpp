#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dualprice/common.hpp"

namespace dualprice {

// Observational dataset: covariates X, group label, historical treatment T,
// observed outcome Y, and (synthetic mode only) the full potential-outcome
// vector. Stored column-blocked; row views are spans into the blocks.
class Dataset {
 public:
  Dataset(int feature_dim, int treatment_count);

  int feature_dim() const { return feature_dim_; }
  int treatment_count() const { return treatment_count_; }
  std::size_t size() const { return treatments_.size(); }
  bool has_potential_outcomes() const { return !potential_.empty(); }

  // Group labels are interned; group(i) is an index into group_labels().
  const std::vector<std::string>& group_labels() const { return group_labels_; }
  int intern_group(const std::string& label);
  int find_group(const std::string& label) const;  // -1 when absent

  void add_row(std::span<const double> covariates, int group, int treatment, double outcome,
               std::span<const double> potential_outcomes = {});

  std::span<const double> covariates(std::size_t i) const {
    return {covariates_.data() + i * feature_dim_, static_cast<std::size_t>(feature_dim_)};
  }
  int group(std::size_t i) const { return groups_[i]; }
  int treatment(std::size_t i) const { return treatments_[i]; }
  double outcome(std::size_t i) const { return outcomes_[i]; }
  std::span<const double> potential_outcomes(std::size_t i) const {
    return {potential_.data() + i * treatment_count_, static_cast<std::size_t>(treatment_count_)};
  }

  std::vector<std::size_t> arm_indices(int treatment) const;
  std::vector<std::size_t> group_counts() const;

  // Enforces the row invariants (consistency Y = Y^T included) and throws on
  // violation.
  void validate() const;

  std::uint64_t fingerprint() const;

  // CSV format: id,x0,...,x{d-1},group,treatment,outcome[,y0,...,ym]
  // Potential-outcome columns are all-or-none.
  static Dataset read_csv(std::istream& in);
  static Dataset read_csv_file(const std::string& path);
  void write_csv(std::ostream& out) const;
  void write_csv_file(const std::string& path) const;

 private:
  int feature_dim_;
  int treatment_count_;
  std::vector<double> covariates_;  // n x d, row-major
  std::vector<int> groups_;
  std::vector<int> treatments_;
  std::vector<double> outcomes_;
  std::vector<double> potential_;  // n x (m+1) when present
  std::vector<std::string> group_labels_;
};

}  // namespace dualprice
