#include "cxr/eval.hpp"

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "cxr/errors.hpp"

namespace cxr {

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_hash(std::uint64_t h) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016" PRIx64, h);
  return buf;
}

}  // namespace

AucResult roc_auc(std::span<const double> scores,
                  std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) {
    throw std::invalid_argument("roc_auc: scores/labels size mismatch");
  }
  AucResult r;
  for (const auto l : labels) {
    if (l > 1) throw std::invalid_argument("roc_auc: labels must be 0/1");
    if (l) ++r.n_pos; else ++r.n_neg;
  }
  if (r.n_pos == 0 || r.n_neg == 0) return r;
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] < scores[b];
  });
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    // 1-based midrank of the tie group [i, j]; (i+1 + j+1)/2 is an exact
    // half-integer in double.
    const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t k = i; k <= j; ++k) {
      if (labels[order[k]]) rank_sum_pos += midrank;
    }
    i = j + 1;
  }
  const double np = static_cast<double>(r.n_pos);
  const double u = rank_sum_pos - np * (np + 1.0) / 2.0;
  r.auc = u / (np * static_cast<double>(r.n_neg));
  r.defined = true;
  return r;
}

const AucAggregate* AucReport::aggregate(std::string_view name) const {
  for (const auto& a : aggregates) {
    if (a.name == name) return &a;
  }
  return nullptr;
}

std::uint64_t hash_image_ids(std::vector<std::string> ids) {
  std::sort(ids.begin(), ids.end());
  std::uint64_t h = 0xcbf29ce484222325ull;
  const auto mix = [&](char c) {
    h ^= static_cast<std::uint8_t>(c);
    h *= 0x100000001b3ull;
  };
  for (const auto& id : ids) {
    for (const char c : id) mix(c);
    mix('\n');
  }
  return h;
}

AucAccumulator::AucAccumulator(int num_labels)
    : scores_(num_labels), labels_(num_labels) {}

void AucAccumulator::add(std::span<const double> scores, const LabelVector& labels,
                         const MaskVector& masks, const std::string& image_id) {
  if (scores.size() != scores_.size() || labels.bits.size() != scores_.size() ||
      masks.bits.size() != scores_.size()) {
    throw std::invalid_argument("AucAccumulator: size mismatch");
  }
  for (std::size_t n = 0; n < scores_.size(); ++n) {
    if (!masks.bits[n]) continue;
    scores_[n].push_back(scores[n]);
    labels_[n].push_back(labels.bits[n]);
  }
  ids_.push_back(image_id);
}

AucReport AucAccumulator::finish(const LabelSpace& space) const {
  if (space.size() != static_cast<int>(scores_.size())) {
    throw std::invalid_argument("AucAccumulator: label space size mismatch");
  }
  AucReport report;
  report.testset_hash = hash_image_ids(ids_);
  for (int n = 0; n < space.size(); ++n) {
    report.label_names.push_back(space.label(n).name);
    report.per_label.push_back(roc_auc(scores_[n], labels_[n]));
    if (!report.per_label.back().defined) ++report.undefined_count;
  }
  struct Group {
    const char* name;
    std::vector<int> indices;
  };
  std::vector<Group> groups = {
      {"mean:cxr14", space.pathology_indices(Dataset::kCxr14)},
      {"mean:plco", space.pathology_indices(Dataset::kPlco)},
      {"mean:pathology", {}},
      {"mean:located", space.located_indices()},
      {"mean:location", {}},
  };
  for (int n = 0; n < space.size(); ++n) {
    if (space.label(n).kind == LabelKind::kPathology) groups[2].indices.push_back(n);
    else groups[4].indices.push_back(n);
  }
  for (const auto& g : groups) {
    AucAggregate agg;
    agg.name = g.name;
    agg.total = static_cast<int>(g.indices.size());
    double sum = 0.0;
    for (const int idx : g.indices) {
      if (report.per_label[idx].defined) {
        sum += report.per_label[idx].auc;
        ++agg.defined;
      }
    }
    if (agg.defined > 0) agg.mean = sum / agg.defined;
    report.aggregates.push_back(std::move(agg));
  }
  return report;
}

void write_auc_report(const AucReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot create " + path.string());
  out << "# auc report\n";
  out << "# testset_hash: " << fmt_hash(report.testset_hash) << '\n';
  out << "# undefined_labels: " << report.undefined_count << '\n';
  out << "label,n_pos,n_neg,auc\n";
  for (std::size_t n = 0; n < report.per_label.size(); ++n) {
    const auto& r = report.per_label[n];
    out << report.label_names[n] << ',' << r.n_pos << ',' << r.n_neg << ',';
    if (r.defined) out << fmt_double(r.auc);
    out << '\n';
  }
  // Aggregates reuse the count columns as defined/total group sizes.
  for (const auto& a : report.aggregates) {
    out << a.name << ',' << a.defined << ',' << a.total << ',';
    if (a.defined > 0) out << fmt_double(a.mean);
    out << '\n';
  }
  if (!out) throw DataError("report write failed: " + path.string());
}

AucReport read_auc_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open report: " + path.string());
  AucReport report;
  std::string line;
  bool saw_header = false;
  bool saw_hash = false;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      const std::string hash_key = "# testset_hash: ";
      const std::string undef_key = "# undefined_labels: ";
      if (line.rfind(hash_key, 0) == 0) {
        report.testset_hash = std::stoull(line.substr(hash_key.size()), nullptr, 16);
        saw_hash = true;
      } else if (line.rfind(undef_key, 0) == 0) {
        report.undefined_count = std::stoi(line.substr(undef_key.size()));
      }
      continue;
    }
    if (!saw_header) {
      if (line != "label,n_pos,n_neg,auc") {
        throw DataError(path.string() + ": unexpected report header '" + line + "'");
      }
      saw_header = true;
      continue;
    }
    std::vector<std::string> f;
    std::istringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) f.push_back(field);
    if (line.back() == ',') f.push_back("");
    if (f.size() != 4) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected 4 fields");
    }
    if (f[0].rfind("mean:", 0) == 0) {
      AucAggregate a;
      a.name = f[0];
      a.defined = std::stoi(f[1]);
      a.total = std::stoi(f[2]);
      if (!f[3].empty()) a.mean = std::stod(f[3]);
      report.aggregates.push_back(std::move(a));
    } else {
      AucResult r;
      r.n_pos = std::stoull(f[1]);
      r.n_neg = std::stoull(f[2]);
      if (!f[3].empty()) {
        r.auc = std::stod(f[3]);
        r.defined = true;
      }
      report.label_names.push_back(f[0]);
      report.per_label.push_back(r);
    }
  }
  if (!saw_header || !saw_hash) {
    throw DataError(path.string() + ": not an auc report");
  }
  return report;
}

void write_auc_svg(const AucReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot create " + path.string());
  const int row_h = 18, label_w = 200, bar_w = 420, margin = 10;
  const int rows = static_cast<int>(report.per_label.size());
  const int width = label_w + bar_w + 80 + 2 * margin;
  const int height = rows * row_h + 2 * margin + 20;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
      << height << "\" font-family=\"monospace\" font-size=\"12\">\n";
  out << "<text x=\"" << margin << "\" y=\"" << margin + 10
      << "\">per-label ROC-AUC (testset " << fmt_hash(report.testset_hash) << ")</text>\n";
  for (int i = 0; i < rows; ++i) {
    const int y = margin + 20 + i * row_h;
    const auto& r = report.per_label[i];
    out << "<text x=\"" << margin << "\" y=\"" << y + 12 << "\">" << report.label_names[i]
        << "</text>\n";
    if (r.defined) {
      const int w = static_cast<int>(r.auc * bar_w + 0.5);
      out << "<rect x=\"" << label_w << "\" y=\"" << y + 2 << "\" width=\"" << w
          << "\" height=\"" << row_h - 6 << "\" fill=\"#4878a8\"/>\n";
      char val[32];
      std::snprintf(val, sizeof(val), "%.3f", r.auc);
      out << "<text x=\"" << label_w + w + 4 << "\" y=\"" << y + 12 << "\">" << val
          << "</text>\n";
    } else {
      out << "<text x=\"" << label_w << "\" y=\"" << y + 12 << "\" fill=\"#999\">n/a</text>\n";
    }
  }
  // 0.5 reference line
  out << "<line x1=\"" << label_w + bar_w / 2 << "\" y1=\"" << margin + 20 << "\" x2=\""
      << label_w + bar_w / 2 << "\" y2=\"" << margin + 20 + rows * row_h
      << "\" stroke=\"#c04040\" stroke-dasharray=\"3,3\"/>\n";
  out << "</svg>\n";
  if (!out) throw DataError("svg write failed: " + path.string());
}

CompareResult compare_reports(const AucReport& a, const AucReport& b) {
  if (a.testset_hash != b.testset_hash) {
    throw DataError("reports were built on different evaluation sets (" +
                    fmt_hash(a.testset_hash) + " vs " + fmt_hash(b.testset_hash) + ")");
  }
  if (a.label_names != b.label_names) {
    throw DataError("reports cover different label sets");
  }
  CompareResult out;
  for (std::size_t i = 0; i < a.label_names.size(); ++i) {
    CompareRow row;
    row.name = a.label_names[i];
    row.a_defined = a.per_label[i].defined;
    row.b_defined = b.per_label[i].defined;
    row.a = a.per_label[i].auc;
    row.b = b.per_label[i].auc;
    out.labels.push_back(std::move(row));
  }
  for (const auto& agg : a.aggregates) {
    const auto* other = b.aggregate(agg.name);
    if (!other) continue;
    CompareRow row;
    row.name = agg.name;
    row.a_defined = agg.defined > 0;
    row.b_defined = other->defined > 0;
    row.a = agg.mean;
    row.b = other->mean;
    out.aggregates.push_back(std::move(row));
  }
  return out;
}

void write_compare_csv(const CompareResult& result, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot create " + path.string());
  out << "label,auc_a,auc_b,delta\n";
  const auto emit = [&](const CompareRow& row) {
    out << row.name << ',';
    if (row.a_defined) out << fmt_double(row.a);
    out << ',';
    if (row.b_defined) out << fmt_double(row.b);
    out << ',';
    if (row.a_defined && row.b_defined) out << fmt_double(row.b - row.a);
    out << '\n';
  };
  for (const auto& row : result.labels) emit(row);
  for (const auto& row : result.aggregates) emit(row);
  if (!out) throw DataError("compare write failed: " + path.string());
}

}  // namespace cxr
