#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace cxr {

struct SampleRecord;  // manifest.hpp

enum class Dataset { kCxr14, kPlco };

std::string_view dataset_name(Dataset ds);
Dataset dataset_from_name(std::string_view name);

enum class LabelKind {
  kPathology,
  kLocSide,
  kLocFifth,
  kLocWildcard,
  kLocDiffuse,
};

bool is_location_kind(LabelKind kind);

struct LabelDef {
  std::string name;
  Dataset dataset = Dataset::kCxr14;
  LabelKind kind = LabelKind::kPathology;
  bool located = false;  // pathology carries spatial annotations
};

// The combined 35-class vocabulary. Ordering is frozen: positions 0-13 are the
// 14 ChestX-Ray14 pathologies, 14-25 the 12 PLCO pathologies, 26-34 the 9
// location classes [fifth 1..5, wildcard, side left, side right, diffuse].
// The pooled loss and all reports index labels by these positions.
class LabelSpace {
 public:
  static constexpr int kNumClasses = 35;
  static constexpr int kNumCxr14 = 14;
  static constexpr int kNumPlcoPathologies = 12;
  static constexpr int kNumLocationClasses = 9;
  static constexpr int kPlcoBase = 14;
  static constexpr int kLocationBase = 26;

  static const LabelSpace& combined();

  int size() const { return static_cast<int>(labels_.size()); }
  const LabelDef& label(int i) const { return labels_.at(i); }
  const std::vector<LabelDef>& labels() const { return labels_; }

  // Position of a pathology by (dataset, name); -1 when absent.
  int index_of(Dataset ds, std::string_view name) const;

  std::vector<int> pathology_indices(Dataset ds) const;
  // The 5 PLCO pathologies with spatial annotations, in vocabulary order.
  std::vector<int> located_indices() const;

  nlohmann::json to_json() const;
  static LabelSpace from_json(const nlohmann::json& j);

  bool operator==(const LabelSpace& other) const;

 private:
  LabelSpace() = default;
  std::vector<LabelDef> labels_;
  void validate() const;
};

enum class LungSide { kNone, kLeft, kRight };
enum class LungFifth { kNone, kF1, kF2, kF3, kF4, kF5, kMultiple };

std::string_view lung_side_name(LungSide s);
LungSide lung_side_from_name(std::string_view name);
std::string_view lung_fifth_name(LungFifth f);
LungFifth lung_fifth_from_name(std::string_view name);

// Spatial annotation for one located disease on one image.
struct LocationAnnotation {
  LungSide side = LungSide::kNone;
  LungFifth fifth = LungFifth::kNone;
  bool diffuse = false;

  // diffuse implies no fifth; a fifth implies a side.
  bool consistent() const;
  bool empty() const {
    return side == LungSide::kNone && fifth == LungFifth::kNone && !diffuse;
  }
};

struct LabelVector {
  std::vector<std::uint8_t> bits;  // size C, values in {0,1}
  int sum() const;
};

struct MaskVector {
  std::vector<std::uint8_t> bits;  // size C, values in {0,1}
  int sum() const;
};

// Indices inside the 9-entry location block.
struct LocationBits {
  static constexpr int kFifth1 = 0;
  static constexpr int kWildcard = 5;
  static constexpr int kSideLeft = 6;
  static constexpr int kSideRight = 7;
  static constexpr int kDiffuse = 8;
};

// Union encoding over the annotations of all located diseases present on one
// image. Side and diffuse bits accumulate; the six lobe-position bits collapse
// to the wildcard as soon as more than one distinct fifth (or an explicit
// "multiple") is involved. Throws std::invalid_argument for an inconsistent or
// fully empty annotation, which signals missing data upstream.
std::array<std::uint8_t, LabelSpace::kNumLocationClasses> encode_location(
    const std::vector<LocationAnnotation>& annotations);

LabelVector build_label_vector(const SampleRecord& sample,
                               const LabelSpace& space);
MaskVector build_mask_vector(const SampleRecord& sample,
                             const LabelSpace& space);

}  // namespace cxr
