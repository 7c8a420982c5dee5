#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "cxr/image.hpp"
#include "cxr/manifest.hpp"

namespace cxr {

// Synthetic corpus layout. Every pathology has a planted pixel signature:
// non-located diseases stamp a fixed shape into a fixed anchor cell of the
// frame (identity = position + shape), located PLCO diseases stamp their
// shape wherever the sampled annotation says (identity = shape only), so the
// location classes have real pixel correlates. Patients carry several images
// with strongly correlated labels, which is what makes image-wise splits
// leak.
struct SynthConfig {
  int image_size = 64;
  int cxr14_patients = 300;
  int plco_patients = 300;
  double images_per_patient_mean = 3.3;  // 1 + Binomial(5, (mean-1)/5)
  double prevalence_scale = 1.0;
  // When set, located-disease blobs follow their annotation and the
  // annotation is published (except a location_missing_rate fraction of
  // images). When clear, placement is uniform and no PLCO image publishes
  // location data.
  bool location_correlated = true;
  double location_missing_rate = 0.1;
  double noise_level = 0.04;
  std::uint64_t seed = 1234;

  void validate() const;
};

struct PlacedBlob {
  int label = 0;      // combined vocabulary position
  double cx = 0.0;    // normalized center
  double cy = 0.0;
  int shape = 0;
  bool diffuse = false;
};

struct SynthCorpus {
  Manifest cxr14, plco;
  std::vector<GrayImage> cxr14_images, plco_images;  // parallel to records
  std::vector<std::vector<PlacedBlob>> cxr14_blobs, plco_blobs;
};

// Per-pathology base prevalence before prevalence_scale.
double synth_prevalence(Dataset ds, int slot);

// Fully in-memory variant for tests and small corpora.
SynthCorpus synth_generate(const SynthConfig& config);

// Streaming generation, one deterministic item at a time (dataset-major,
// patient-major). Used by synth_write to keep memory flat.
struct SynthItem {
  SampleRecord record;
  GrayImage image;
  std::vector<PlacedBlob> blobs;
};
void synth_stream(const SynthConfig& config, Dataset ds,
                  const std::function<void(SynthItem&&)>& sink);

// Writes <out>/cxr14/{manifest.csv,images/*.png} (8-bit) and
// <out>/plco/{manifest.csv,images/*.xri} (16-bit with a nonlinear tone
// curve, so equalization at load time is doing real work).
void synth_write(const SynthConfig& config, const std::filesystem::path& out_dir);

}  // namespace cxr
