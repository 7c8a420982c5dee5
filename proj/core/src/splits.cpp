#include "cxr/splits.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "cxr/errors.hpp"
#include "cxr/rng.hpp"

namespace cxr {

namespace {

constexpr std::array<const char*, kNumSubsets> kSubsetFile = {"train.txt", "val.txt",
                                                              "test.txt"};

}  // namespace

std::string_view subset_name(Subset s) {
  switch (s) {
    case Subset::kTrain: return "train";
    case Subset::kVal: return "val";
    case Subset::kTest: return "test";
  }
  return "?";
}

void SplitRatios::validate() const {
  const double vals[3] = {train, val, test};
  double sum = 0.0;
  for (const double v : vals) {
    if (!(v >= 0.0) || v > 1.0) throw DataError("split ratios must lie in [0,1]");
    sum += v;
  }
  if (std::fabs(sum - 1.0) > 1e-9) throw DataError("split ratios must sum to 1");
}

std::array<std::size_t, kNumSubsets> apportion_counts(std::size_t n,
                                                      const SplitRatios& ratios) {
  ratios.validate();
  const double r[3] = {ratios.train, ratios.val, ratios.test};
  std::array<std::size_t, kNumSubsets> counts{};
  double rem[3];
  std::size_t assigned = 0;
  for (int i = 0; i < 3; ++i) {
    const double target = r[i] * static_cast<double>(n);
    counts[i] = static_cast<std::size_t>(std::floor(target));
    rem[i] = target - static_cast<double>(counts[i]);
    assigned += counts[i];
  }
  std::array<int, 3> order = {0, 1, 2};
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (std::fabs(rem[a] - rem[b]) <= 1e-9) return a < b;
    return rem[a] > rem[b];
  });
  for (std::size_t k = 0; k < n - assigned; ++k) ++counts[order[k % 3]];
  return counts;
}

std::size_t SplitAssignment::total_images() const {
  return images[0].size() + images[1].size() + images[2].size();
}

SplitAssignment patient_split(const Manifest& manifest, const SplitRatios& ratios,
                              std::uint64_t seed) {
  ratios.validate();
  std::set<std::string> unique;
  for (const auto& rec : manifest.records) unique.insert(rec.patient_id);
  std::vector<std::string> patients(unique.begin(), unique.end());  // sorted

  Rng rng(derive_seed(seed, "split", static_cast<std::uint64_t>(manifest.dataset)));
  rng.shuffle(patients);

  const auto counts = apportion_counts(patients.size(), ratios);
  SplitAssignment out;
  std::map<std::string, Subset> subset_of;
  std::size_t pos = 0;
  for (int s = 0; s < kNumSubsets; ++s) {
    for (std::size_t k = 0; k < counts[s]; ++k, ++pos) {
      subset_of.emplace(patients[pos], static_cast<Subset>(s));
      out.patients[s].push_back(patients[pos]);
    }
    std::sort(out.patients[s].begin(), out.patients[s].end());
  }
  for (const auto& rec : manifest.records) {
    out.images[static_cast<int>(subset_of.at(rec.patient_id))].push_back(rec.image_id);
  }
  for (auto& list : out.images) std::sort(list.begin(), list.end());
  return out;
}

void verify_no_leakage(const Manifest& manifest, const SplitAssignment& split) {
  std::map<std::string, std::string> patient_of;
  for (const auto& rec : manifest.records) patient_of.emplace(rec.image_id, rec.patient_id);
  std::map<std::string, int> patient_subset;
  std::set<std::string> seen;
  for (int s = 0; s < kNumSubsets; ++s) {
    for (const auto& id : split.images[s]) {
      const auto it = patient_of.find(id);
      if (it == patient_of.end()) {
        throw DataError("split references unknown image '" + id + "'");
      }
      if (!seen.insert(id).second) {
        throw DataError("image '" + id + "' appears in more than one subset");
      }
      const auto [ps, inserted] = patient_subset.emplace(it->second, s);
      if (!inserted && ps->second != s) {
        throw DataError("patient '" + it->second + "' has images in both " +
                        std::string(subset_name(static_cast<Subset>(ps->second))) + " and " +
                        std::string(subset_name(static_cast<Subset>(s))));
      }
    }
  }
  if (seen.size() != manifest.records.size()) {
    for (const auto& rec : manifest.records) {
      if (!seen.count(rec.image_id)) {
        throw DataError("image '" + rec.image_id + "' is missing from the split");
      }
    }
  }
}

void write_split_files(const SplitAssignment& split, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (int s = 0; s < kNumSubsets; ++s) {
    const auto path = dir / kSubsetFile[s];
    if (split.images[s].empty()) {
      std::filesystem::remove(path);
      continue;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot create " + path.string());
    std::vector<std::string> ids = split.images[s];
    std::sort(ids.begin(), ids.end());
    for (const auto& id : ids) out << id << '\n';
    if (!out) throw DataError("write failed: " + path.string());
  }
}

SplitAssignment read_split_files(const std::filesystem::path& dir,
                                 const Manifest& manifest) {
  std::map<std::string, std::string> patient_of;
  for (const auto& rec : manifest.records) patient_of.emplace(rec.image_id, rec.patient_id);
  SplitAssignment out;
  std::set<std::string> seen;
  for (int s = 0; s < kNumSubsets; ++s) {
    const auto path = dir / kSubsetFile[s];
    if (!std::filesystem::exists(path)) continue;
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    std::set<std::string> patients;
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      const auto it = patient_of.find(line);
      if (it == patient_of.end()) {
        throw DataError(path.string() + ": unknown image '" + line + "'");
      }
      if (!seen.insert(line).second) {
        throw DataError("image '" + line + "' appears in more than one subset");
      }
      out.images[s].push_back(line);
      patients.insert(it->second);
    }
    std::sort(out.images[s].begin(), out.images[s].end());
    out.patients[s].assign(patients.begin(), patients.end());
  }
  return out;
}

}  // namespace cxr
