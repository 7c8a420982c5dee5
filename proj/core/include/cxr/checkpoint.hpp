#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <vector>

#include <nlohmann/json.hpp>

#include "cxr/image.hpp"
#include "cxr/labelspace.hpp"
#include "cxr/net.hpp"
#include "cxr/optim.hpp"

namespace cxr {

// Train-split pixel statistics per dataset, fixed at training time and
// carried in the checkpoint so later evaluation standardizes identically.
struct DatasetStats {
  PixelStats per[2];  // indexed by Dataset

  PixelStats& of(Dataset ds) { return per[static_cast<int>(ds)]; }
  const PixelStats& of(Dataset ds) const { return per[static_cast<int>(ds)]; }
};

// File layout: 8-byte magic "CXRCKPT\x01", little-endian u64 JSON header
// length, the JSON header (model spec, label space, array manifest, optimizer
// and scheduler state, dataset stats, free-form meta), then the listed double
// arrays as raw little-endian bytes. Parameters round-trip bit for bit.
void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const AdamOptimizer* optimizer, const PlateauScheduler* scheduler,
                     const DatasetStats& stats, const nlohmann::json& meta);

struct LoadedCheckpoint {
  std::unique_ptr<Model> model;  // parameters and norm state restored
  DatasetStats stats;
  nlohmann::json meta;

  bool has_optimizer = false;
  AdamConfig adam_config;
  std::uint64_t adam_step = 0;
  std::vector<std::vector<double>> adam_m, adam_v;

  bool has_scheduler = false;
  PlateauConfig plateau_config;
  double plateau_best = 0.0;
  int plateau_bad = 0;
  bool plateau_primed = false;

  // Builds an optimizer over model->params() and restores its moments.
  AdamOptimizer make_optimizer() const;
  PlateauScheduler make_scheduler() const;
};

// Throws DataError for malformed files or a label space that does not match
// this build's combined vocabulary.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace cxr
