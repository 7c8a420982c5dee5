#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "cxr/manifest.hpp"

namespace cxr {

enum class Subset { kTrain = 0, kVal = 1, kTest = 2 };
inline constexpr int kNumSubsets = 3;

std::string_view subset_name(Subset s);

struct SplitRatios {
  double train = 0.7;
  double val = 0.1;
  double test = 0.2;

  void validate() const;  // each in [0,1], summing to 1
};

// Largest-remainder apportionment of n items across the three subsets.
// Remainders within 1e-9 of each other count as tied and the leftover goes to
// the earlier subset (train before val before test), so 0.7/0.1/0.2 of an
// exactly divisible n never shifts an item through float noise.
std::array<std::size_t, kNumSubsets> apportion_counts(std::size_t n,
                                                      const SplitRatios& ratios);

struct SplitAssignment {
  std::array<std::vector<std::string>, kNumSubsets> images;    // sorted ids
  std::array<std::vector<std::string>, kNumSubsets> patients;  // sorted ids

  std::size_t total_images() const;
};

// Splits by patient: the distinct patient ids are sorted, shuffled by a
// stream derived from (seed, dataset), apportioned by ratio, and every image
// follows its patient. Identical inputs give identical assignments.
SplitAssignment patient_split(const Manifest& manifest, const SplitRatios& ratios,
                              std::uint64_t seed);

// Throws DataError naming the first patient whose images land in more than
// one subset, or any image missing from / repeated across the subsets.
void verify_no_leakage(const Manifest& manifest, const SplitAssignment& split);

// train.txt / val.txt / test.txt under dir, one image id per line, sorted,
// LF endings. A subset's file exists if and only if the subset is non-empty.
void write_split_files(const SplitAssignment& split, const std::filesystem::path& dir);

// Reads whichever of the three files exist; every id must belong to the
// manifest and appear in at most one subset.
SplitAssignment read_split_files(const std::filesystem::path& dir,
                                 const Manifest& manifest);

}  // namespace cxr
