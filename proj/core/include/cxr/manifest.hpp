#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "cxr/labelspace.hpp"

namespace cxr {

// One image row after merging repeated location rows. Pathology bits are
// aligned with the dataset's canonical vocabulary order.
struct SampleRecord {
  std::string image_id;
  std::string patient_id;
  Dataset dataset = Dataset::kCxr14;
  std::vector<std::uint8_t> pathology;
  // Located-disease name -> annotation; only meaningful for PLCO records.
  std::vector<std::pair<std::string, LocationAnnotation>> annotations;
  bool location_available = true;

  const LocationAnnotation* annotation_for(std::string_view disease) const;
};

struct ManifestStats {
  std::size_t images = 0;
  std::size_t patients = 0;
  double images_per_patient = 0.0;
};

struct Manifest {
  Dataset dataset = Dataset::kCxr14;
  std::vector<SampleRecord> records;
  ManifestStats stats;                // recomputed, never read from file
  std::filesystem::path base_dir;     // directory the CSV was loaded from

  void recompute_stats();
  // Image files live next to the manifest under images/<image_id>.<ext>.
  std::filesystem::path image_path(const SampleRecord& rec) const;
};

// CSV schema (one header line):
//   image_id,patient_id,dataset,<pathology columns 0/1...>,
//   loc_disease,loc_side,loc_fifth,loc_diffuse,loc_available
// The pathology columns must be exactly the dataset's canonical names, in any
// order. An image with several located diseases repeats its row once per
// disease with a different loc_disease; repeated rows must agree on every
// non-location field and are merged on load.
Manifest load_manifest(const std::filesystem::path& csv_path, Dataset tag);
void save_manifest(const Manifest& manifest,
                   const std::filesystem::path& csv_path);

// Canonical pathology vocabularies, in report/table order.
const std::vector<std::string>& pathology_names(Dataset ds);
// The 5 PLCO pathologies with spatial annotations.
const std::vector<std::string>& located_pathology_names();
bool is_located_pathology(std::string_view name);

}  // namespace cxr
