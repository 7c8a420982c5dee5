#include "cxr/labelspace.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "cxr/errors.hpp"
#include "cxr/manifest.hpp"

namespace cxr {

std::string_view dataset_name(Dataset ds) {
  return ds == Dataset::kCxr14 ? "CXR14" : "PLCO";
}

Dataset dataset_from_name(std::string_view name) {
  if (name == "CXR14") return Dataset::kCxr14;
  if (name == "PLCO") return Dataset::kPlco;
  throw DataError("unknown dataset tag: " + std::string(name));
}

bool is_location_kind(LabelKind kind) {
  return kind != LabelKind::kPathology;
}

namespace {

const char* kind_name(LabelKind k) {
  switch (k) {
    case LabelKind::kPathology: return "pathology";
    case LabelKind::kLocSide: return "loc_side";
    case LabelKind::kLocFifth: return "loc_fifth";
    case LabelKind::kLocWildcard: return "loc_wildcard";
    case LabelKind::kLocDiffuse: return "loc_diffuse";
  }
  return "?";
}

LabelKind kind_from_name(std::string_view n) {
  if (n == "pathology") return LabelKind::kPathology;
  if (n == "loc_side") return LabelKind::kLocSide;
  if (n == "loc_fifth") return LabelKind::kLocFifth;
  if (n == "loc_wildcard") return LabelKind::kLocWildcard;
  if (n == "loc_diffuse") return LabelKind::kLocDiffuse;
  throw DataError("unknown label kind: " + std::string(n));
}

}  // namespace

const LabelSpace& LabelSpace::combined() {
  static const LabelSpace space = [] {
    LabelSpace s;
    for (const auto& name : pathology_names(Dataset::kCxr14)) {
      s.labels_.push_back({name, Dataset::kCxr14, LabelKind::kPathology, false});
    }
    for (const auto& name : pathology_names(Dataset::kPlco)) {
      s.labels_.push_back(
          {name, Dataset::kPlco, LabelKind::kPathology, is_located_pathology(name)});
    }
    for (int f = 1; f <= 5; ++f) {
      s.labels_.push_back({"Lung Fifth " + std::to_string(f), Dataset::kPlco,
                           LabelKind::kLocFifth, false});
    }
    s.labels_.push_back({"Lung Fifth Wildcard", Dataset::kPlco, LabelKind::kLocWildcard, false});
    s.labels_.push_back({"Lung Side Left", Dataset::kPlco, LabelKind::kLocSide, false});
    s.labels_.push_back({"Lung Side Right", Dataset::kPlco, LabelKind::kLocSide, false});
    s.labels_.push_back({"Diffuse", Dataset::kPlco, LabelKind::kLocDiffuse, false});
    s.validate();
    return s;
  }();
  return space;
}

void LabelSpace::validate() const {
  if (static_cast<int>(labels_.size()) != kNumClasses) {
    throw DataError("label space must have exactly 35 entries");
  }
  int cxr = 0, plco = 0, loc = 0, located = 0, fifth = 0, side = 0, wildcard = 0, diffuse = 0;
  std::set<std::pair<int, std::string>> names;
  for (const auto& l : labels_) {
    if (!names.insert({static_cast<int>(l.dataset), l.name}).second) {
      throw DataError("duplicate label name within dataset: " + l.name);
    }
    if (l.located && (l.kind != LabelKind::kPathology || l.dataset != Dataset::kPlco)) {
      throw DataError("located flag restricted to PLCO pathologies: " + l.name);
    }
    switch (l.kind) {
      case LabelKind::kPathology:
        (l.dataset == Dataset::kCxr14 ? cxr : plco)++;
        located += l.located ? 1 : 0;
        break;
      case LabelKind::kLocFifth: ++loc; ++fifth; break;
      case LabelKind::kLocSide: ++loc; ++side; break;
      case LabelKind::kLocWildcard: ++loc; ++wildcard; break;
      case LabelKind::kLocDiffuse: ++loc; ++diffuse; break;
    }
  }
  if (cxr != kNumCxr14 || plco != kNumPlcoPathologies || loc != kNumLocationClasses ||
      fifth != 5 || side != 2 || wildcard != 1 || diffuse != 1 || located != 5) {
    throw DataError("label space composition violated");
  }
}

int LabelSpace::index_of(Dataset ds, std::string_view name) const {
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    if (labels_[i].dataset == ds && labels_[i].kind == LabelKind::kPathology &&
        labels_[i].name == name) {
      return static_cast<int>(i);
    }
  }
  return -1;
}

std::vector<int> LabelSpace::pathology_indices(Dataset ds) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    if (labels_[i].dataset == ds && labels_[i].kind == LabelKind::kPathology) {
      out.push_back(static_cast<int>(i));
    }
  }
  return out;
}

std::vector<int> LabelSpace::located_indices() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    if (labels_[i].located) out.push_back(static_cast<int>(i));
  }
  return out;
}

nlohmann::json LabelSpace::to_json() const {
  nlohmann::json j;
  j["version"] = 1;
  auto& arr = j["labels"] = nlohmann::json::array();
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    const auto& l = labels_[i];
    arr.push_back({{"position", i},
                   {"name", l.name},
                   {"dataset", std::string(dataset_name(l.dataset))},
                   {"kind", kind_name(l.kind)},
                   {"located", l.located}});
  }
  return j;
}

LabelSpace LabelSpace::from_json(const nlohmann::json& j) {
  if (!j.contains("version") || j.at("version").get<int>() != 1) {
    throw DataError("unsupported label space document version");
  }
  const auto& arr = j.at("labels");
  LabelSpace s;
  s.labels_.resize(arr.size());
  std::vector<bool> seen(arr.size(), false);
  for (const auto& e : arr) {
    const auto pos = e.at("position").get<std::size_t>();
    if (pos >= s.labels_.size() || seen[pos]) {
      throw DataError("label space positions must be dense and unique");
    }
    seen[pos] = true;
    s.labels_[pos] = {e.at("name").get<std::string>(),
                      dataset_from_name(e.at("dataset").get<std::string>()),
                      kind_from_name(e.at("kind").get<std::string>()),
                      e.at("located").get<bool>()};
  }
  s.validate();
  return s;
}

bool LabelSpace::operator==(const LabelSpace& other) const {
  if (labels_.size() != other.labels_.size()) return false;
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    const auto& a = labels_[i];
    const auto& b = other.labels_[i];
    if (a.name != b.name || a.dataset != b.dataset || a.kind != b.kind ||
        a.located != b.located) {
      return false;
    }
  }
  return true;
}

std::string_view lung_side_name(LungSide s) {
  switch (s) {
    case LungSide::kLeft: return "left";
    case LungSide::kRight: return "right";
    case LungSide::kNone: break;
  }
  return "none";
}

LungSide lung_side_from_name(std::string_view name) {
  if (name == "left") return LungSide::kLeft;
  if (name == "right") return LungSide::kRight;
  if (name == "none" || name.empty()) return LungSide::kNone;
  throw DataError("unknown lung side: " + std::string(name));
}

std::string_view lung_fifth_name(LungFifth f) {
  switch (f) {
    case LungFifth::kF1: return "f1";
    case LungFifth::kF2: return "f2";
    case LungFifth::kF3: return "f3";
    case LungFifth::kF4: return "f4";
    case LungFifth::kF5: return "f5";
    case LungFifth::kMultiple: return "multiple";
    case LungFifth::kNone: break;
  }
  return "none";
}

LungFifth lung_fifth_from_name(std::string_view name) {
  if (name == "f1") return LungFifth::kF1;
  if (name == "f2") return LungFifth::kF2;
  if (name == "f3") return LungFifth::kF3;
  if (name == "f4") return LungFifth::kF4;
  if (name == "f5") return LungFifth::kF5;
  if (name == "multiple") return LungFifth::kMultiple;
  if (name == "none" || name.empty()) return LungFifth::kNone;
  throw DataError("unknown lung fifth: " + std::string(name));
}

bool LocationAnnotation::consistent() const {
  if (diffuse && fifth != LungFifth::kNone) return false;
  if (fifth != LungFifth::kNone && side == LungSide::kNone) return false;
  return true;
}

int LabelVector::sum() const {
  int s = 0;
  for (const auto b : bits) s += b;
  return s;
}

int MaskVector::sum() const {
  int s = 0;
  for (const auto b : bits) s += b;
  return s;
}

std::array<std::uint8_t, LabelSpace::kNumLocationClasses> encode_location(
    const std::vector<LocationAnnotation>& annotations) {
  std::array<std::uint8_t, LabelSpace::kNumLocationClasses> out{};
  bool multiple = false;
  std::set<int> fifths;
  for (const auto& a : annotations) {
    if (!a.consistent()) {
      throw std::invalid_argument("inconsistent location annotation");
    }
    if (a.empty()) {
      throw std::invalid_argument("empty location annotation (missing data)");
    }
    if (a.side == LungSide::kLeft) out[LocationBits::kSideLeft] = 1;
    if (a.side == LungSide::kRight) out[LocationBits::kSideRight] = 1;
    if (a.diffuse) out[LocationBits::kDiffuse] = 1;
    if (a.fifth == LungFifth::kMultiple) {
      multiple = true;
    } else if (a.fifth != LungFifth::kNone) {
      fifths.insert(static_cast<int>(a.fifth) - static_cast<int>(LungFifth::kF1));
    }
  }
  if (multiple || fifths.size() > 1) {
    out[LocationBits::kWildcard] = 1;
  } else if (fifths.size() == 1) {
    out[LocationBits::kFifth1 + *fifths.begin()] = 1;
  }
  return out;
}

LabelVector build_label_vector(const SampleRecord& sample, const LabelSpace& space) {
  LabelVector out;
  out.bits.assign(space.size(), 0);
  const auto& names = pathology_names(sample.dataset);
  if (sample.pathology.size() != names.size()) {
    throw std::invalid_argument("pathology bit count does not match vocabulary");
  }
  for (std::size_t i = 0; i < names.size(); ++i) {
    const int idx = space.index_of(sample.dataset, names[i]);
    if (idx < 0) throw DataError("unknown pathology name: " + names[i]);
    out.bits[idx] = sample.pathology[i] ? 1 : 0;
  }
  if (sample.dataset == Dataset::kPlco && sample.location_available) {
    std::vector<LocationAnnotation> present;
    for (const auto& [disease, ann] : sample.annotations) {
      const int idx = space.index_of(Dataset::kPlco, disease);
      if (idx < 0) throw DataError("unknown pathology name: " + disease);
      if (out.bits[idx]) present.push_back(ann);
    }
    if (!present.empty()) {
      const auto loc = encode_location(present);
      for (int i = 0; i < LabelSpace::kNumLocationClasses; ++i) {
        out.bits[LabelSpace::kLocationBase + i] = loc[i];
      }
    }
  }
  return out;
}

MaskVector build_mask_vector(const SampleRecord& sample, const LabelSpace& space) {
  MaskVector out;
  out.bits.assign(space.size(), 0);
  if (sample.dataset == Dataset::kCxr14) {
    for (int i = 0; i < LabelSpace::kNumCxr14; ++i) out.bits[i] = 1;
    return out;
  }
  for (int i = LabelSpace::kPlcoBase; i < LabelSpace::kLocationBase; ++i) out.bits[i] = 1;
  bool located_present = false;
  for (const auto idx : space.located_indices()) {
    const auto& name = space.label(idx).name;
    const auto& names = pathology_names(Dataset::kPlco);
    for (std::size_t i = 0; i < names.size(); ++i) {
      if (names[i] == name && i < sample.pathology.size() && sample.pathology[i]) {
        located_present = true;
      }
    }
  }
  // Location classes stay supervised (as negatives) on images with no located
  // disease; they drop out only when a located disease is present but its
  // annotation is missing from the source record.
  const bool supervise_location = !(located_present && !sample.location_available);
  if (supervise_location) {
    for (int i = LabelSpace::kLocationBase; i < space.size(); ++i) out.bits[i] = 1;
  }
  return out;
}

}  // namespace cxr
