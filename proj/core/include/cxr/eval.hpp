#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cxr/labelspace.hpp"
#include "cxr/tensor.hpp"

namespace cxr {

struct AucResult {
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
  double auc = 0.0;
  bool defined = false;  // needs at least one positive and one negative
};

// Mann-Whitney ROC-AUC via midranks:
//   (rank_sum_pos - n_pos*(n_pos+1)/2) / (n_pos * n_neg).
// Ties contribute half. All intermediate values are exact in double for any
// realistic n, so the result equals the pairwise definition bit for bit.
AucResult roc_auc(std::span<const double> scores,
                  std::span<const std::uint8_t> labels);

struct AucAggregate {
  std::string name;
  double mean = 0.0;
  int defined = 0;  // labels contributing to the mean
  int total = 0;    // labels in the group
};

struct AucReport {
  std::vector<std::string> label_names;
  std::vector<AucResult> per_label;
  std::vector<AucAggregate> aggregates;
  int undefined_count = 0;
  std::uint64_t testset_hash = 0;

  const AucAggregate* aggregate(std::string_view name) const;
};

// FNV-1a over the sorted ids, newline-terminated each; identifies the exact
// evaluation set independent of ordering.
std::uint64_t hash_image_ids(std::vector<std::string> ids);

// Collects per-label (score, label) pairs restricted to mask=1 entries.
class AucAccumulator {
 public:
  explicit AucAccumulator(int num_labels);

  void add(std::span<const double> scores, const LabelVector& labels,
           const MaskVector& masks, const std::string& image_id);
  std::size_t samples() const { return ids_.size(); }

  // Aggregates: mean:cxr14, mean:plco, mean:pathology, mean:located,
  // mean:location, each a mean over the group's defined labels.
  AucReport finish(const LabelSpace& space) const;

 private:
  std::vector<std::vector<double>> scores_;
  std::vector<std::vector<std::uint8_t>> labels_;
  std::vector<std::string> ids_;
};

// CSV with '#' comment lines (testset hash, undefined count), one row per
// label and one per aggregate; undefined AUCs serialize as an empty field.
void write_auc_report(const AucReport& report, const std::filesystem::path& path);
AucReport read_auc_report(const std::filesystem::path& path);

// Horizontal bar chart of the per-label AUCs.
void write_auc_svg(const AucReport& report, const std::filesystem::path& path);

struct CompareRow {
  std::string name;
  bool a_defined = false;
  bool b_defined = false;
  double a = 0.0;
  double b = 0.0;
};

struct CompareResult {
  std::vector<CompareRow> labels;
  std::vector<CompareRow> aggregates;
};

// Refuses to compare reports built on different evaluation sets.
CompareResult compare_reports(const AucReport& a, const AucReport& b);
void write_compare_csv(const CompareResult& result, const std::filesystem::path& path);

}  // namespace cxr
