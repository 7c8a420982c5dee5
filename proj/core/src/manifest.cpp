#include "cxr/manifest.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "cxr/errors.hpp"

namespace cxr {

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (const char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

[[noreturn]] void fail_line(const std::filesystem::path& path, std::size_t line,
                            const std::string& what) {
  throw DataError(path.string() + ":" + std::to_string(line) + ": " + what);
}

bool parse_bit(const std::string& s, bool empty_value, const char* what,
               const std::filesystem::path& path, std::size_t line) {
  if (s.empty()) return empty_value;
  if (s == "0") return false;
  if (s == "1") return true;
  fail_line(path, line, std::string(what) + " must be 0 or 1, got '" + s + "'");
}

}  // namespace

const LocationAnnotation* SampleRecord::annotation_for(std::string_view disease) const {
  for (const auto& [name, ann] : annotations) {
    if (name == disease) return &ann;
  }
  return nullptr;
}

void Manifest::recompute_stats() {
  stats.images = records.size();
  std::set<std::string> patients;
  for (const auto& r : records) patients.insert(r.patient_id);
  stats.patients = patients.size();
  stats.images_per_patient =
      stats.patients ? static_cast<double>(stats.images) / static_cast<double>(stats.patients)
                     : 0.0;
}

std::filesystem::path Manifest::image_path(const SampleRecord& rec) const {
  const auto png = base_dir / "images" / (rec.image_id + ".png");
  if (std::filesystem::exists(png)) return png;
  return base_dir / "images" / (rec.image_id + ".xri");
}

const std::vector<std::string>& pathology_names(Dataset ds) {
  static const std::vector<std::string> cxr14 = {
      "Atelectasis", "Cardiomegaly", "Effusion",      "Infiltration",
      "Mass",        "Nodule",       "Pneumonia",     "Pneumothorax",
      "Consolidation", "Edema",      "Emphysema",     "Fibrosis",
      "Pleural Thickening", "Hernia"};
  static const std::vector<std::string> plco = {
      "Nodule",        "Mass",           "Granuloma", "Infiltrate",
      "Scarring",      "Fibrosis",       "Bone/Soft Tissue Lesion",
      "Cardiac Abnormality", "COPD",     "Effusion",  "Atelectasis",
      "Hilar Abnormality"};
  return ds == Dataset::kCxr14 ? cxr14 : plco;
}

const std::vector<std::string>& located_pathology_names() {
  static const std::vector<std::string> names = {
      "Nodule", "Mass", "Infiltrate", "Atelectasis", "Hilar Abnormality"};
  return names;
}

bool is_located_pathology(std::string_view name) {
  const auto& names = located_pathology_names();
  return std::find(names.begin(), names.end(), name) != names.end();
}

Manifest load_manifest(const std::filesystem::path& csv_path, Dataset tag) {
  std::ifstream in(csv_path);
  if (!in) throw DataError("cannot open manifest: " + csv_path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty manifest: " + csv_path.string());
  const auto header = split_csv(line);
  const auto& vocab = pathology_names(tag);
  const std::size_t ncols = 3 + vocab.size() + 5;
  if (header.size() != ncols) {
    throw DataError(csv_path.string() + ": expected " + std::to_string(ncols) +
                    " columns for " + std::string(dataset_name(tag)) + ", got " +
                    std::to_string(header.size()));
  }
  if (header[0] != "image_id" || header[1] != "patient_id" || header[2] != "dataset") {
    throw DataError(csv_path.string() + ": header must start with image_id,patient_id,dataset");
  }
  static const char* kTail[5] = {"loc_disease", "loc_side", "loc_fifth", "loc_diffuse",
                                 "loc_available"};
  for (int i = 0; i < 5; ++i) {
    if (header[ncols - 5 + i] != kTail[i]) {
      throw DataError(csv_path.string() + ": header must end with loc_disease,loc_side,"
                      "loc_fifth,loc_diffuse,loc_available");
    }
  }
  // Map each pathology column to its canonical vocabulary slot.
  std::vector<std::size_t> col_to_slot(vocab.size());
  std::vector<bool> seen_col(vocab.size(), false);
  for (std::size_t c = 0; c < vocab.size(); ++c) {
    const auto it = std::find(vocab.begin(), vocab.end(), header[3 + c]);
    if (it == vocab.end()) {
      throw DataError(csv_path.string() + ": unknown pathology column '" + header[3 + c] +
                      "' for dataset " + std::string(dataset_name(tag)));
    }
    const std::size_t slot = static_cast<std::size_t>(it - vocab.begin());
    if (seen_col[slot]) {
      throw DataError(csv_path.string() + ": repeated pathology column '" + header[3 + c] + "'");
    }
    seen_col[slot] = true;
    col_to_slot[c] = slot;
  }

  Manifest mf;
  mf.dataset = tag;
  mf.base_dir = csv_path.parent_path();
  std::map<std::string, std::size_t> index_of_id;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || (line.size() == 1 && line[0] == '\r')) continue;
    const auto f = split_csv(line);
    if (f.size() != ncols) {
      fail_line(csv_path, lineno, "expected " + std::to_string(ncols) + " fields, got " +
                                      std::to_string(f.size()));
    }
    if (f[0].empty()) fail_line(csv_path, lineno, "empty image_id");
    if (f[1].empty()) fail_line(csv_path, lineno, "empty patient_id");
    if (f[2] != dataset_name(tag)) {
      fail_line(csv_path, lineno, "dataset column is '" + f[2] + "', expected '" +
                                      std::string(dataset_name(tag)) + "'");
    }
    std::vector<std::uint8_t> bits(vocab.size(), 0);
    for (std::size_t c = 0; c < vocab.size(); ++c) {
      bits[col_to_slot[c]] =
          parse_bit(f[3 + c], false, ("pathology '" + header[3 + c] + "'").c_str(),
                    csv_path, lineno)
              ? 1
              : 0;
    }
    const std::string& disease = f[ncols - 5];
    const bool available = parse_bit(f[ncols - 1], true, "loc_available", csv_path, lineno);
    LocationAnnotation ann;
    ann.side = lung_side_from_name(f[ncols - 4]);
    ann.fifth = lung_fifth_from_name(f[ncols - 3]);
    ann.diffuse = parse_bit(f[ncols - 2], false, "loc_diffuse", csv_path, lineno);
    if (tag == Dataset::kCxr14 && !disease.empty()) {
      fail_line(csv_path, lineno, "location rows are not valid for CXR14 records");
    }
    if (!disease.empty() && !is_located_pathology(disease)) {
      fail_line(csv_path, lineno, "'" + disease + "' is not a located pathology");
    }
    const auto it = index_of_id.find(f[0]);
    if (it == index_of_id.end()) {
      SampleRecord rec;
      rec.image_id = f[0];
      rec.patient_id = f[1];
      rec.dataset = tag;
      rec.pathology = std::move(bits);
      rec.location_available = available;
      if (!disease.empty()) rec.annotations.emplace_back(disease, ann);
      index_of_id.emplace(rec.image_id, mf.records.size());
      mf.records.push_back(std::move(rec));
      continue;
    }
    SampleRecord& rec = mf.records[it->second];
    if (disease.empty()) {
      fail_line(csv_path, lineno, "duplicate image_id '" + f[0] + "'");
    }
    if (rec.patient_id != f[1] || rec.pathology != bits ||
        rec.location_available != available) {
      fail_line(csv_path, lineno,
                "repeated rows for image_id '" + f[0] + "' disagree on shared fields");
    }
    if (rec.annotation_for(disease)) {
      fail_line(csv_path, lineno,
                "duplicate location row for image_id '" + f[0] + "', disease '" + disease + "'");
    }
    rec.annotations.emplace_back(disease, ann);
  }
  mf.recompute_stats();
  return mf;
}

void save_manifest(const Manifest& manifest, const std::filesystem::path& csv_path) {
  std::ofstream out(csv_path, std::ios::binary);  // LF line endings everywhere
  if (!out) throw DataError("cannot create manifest: " + csv_path.string());
  const auto& vocab = pathology_names(manifest.dataset);
  out << "image_id,patient_id,dataset";
  for (const auto& name : vocab) out << ',' << name;
  out << ",loc_disease,loc_side,loc_fifth,loc_diffuse,loc_available\n";
  for (const auto& rec : manifest.records) {
    if (rec.pathology.size() != vocab.size()) {
      throw DataError("record '" + rec.image_id + "' has a malformed pathology vector");
    }
    std::ostringstream base;
    base << rec.image_id << ',' << rec.patient_id << ',' << dataset_name(manifest.dataset);
    for (const auto b : rec.pathology) base << ',' << (b ? '1' : '0');
    if (rec.annotations.empty()) {
      // Five location columns: disease, side, fifth and diffuse stay empty.
      out << base.str() << ",,,,," << (rec.location_available ? '1' : '0') << '\n';
      continue;
    }
    for (const auto& [disease, ann] : rec.annotations) {
      out << base.str() << ',' << disease << ','
          << (ann.side == LungSide::kNone ? "" : lung_side_name(ann.side)) << ','
          << (ann.fifth == LungFifth::kNone ? "" : lung_fifth_name(ann.fifth)) << ','
          << (ann.diffuse ? '1' : '0') << ',' << (rec.location_available ? '1' : '0') << '\n';
    }
  }
  if (!out) throw DataError("manifest write failed: " + csv_path.string());
}

}  // namespace cxr
