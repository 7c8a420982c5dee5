#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "cxr/checkpoint.hpp"
#include "cxr/image.hpp"
#include "cxr/labelspace.hpp"
#include "cxr/manifest.hpp"
#include "cxr/tensor.hpp"

namespace cxr {

// One epoch's batch composition. While both datasets still have unseen
// samples, every batch of size >= 2 carries at least one sample from each,
// with the split proportional to what remains; once a dataset runs dry the
// tail batches come from the other alone. Every record appears exactly once
// per epoch. Deterministic in (seed, epoch).
struct BatchPlan {
  struct Item {
    Dataset ds;
    std::size_t index;  // record index within that dataset's record list
  };
  std::vector<std::vector<Item>> batches;

  std::size_t total_items() const;
};

BatchPlan plan_epoch(std::size_t n_cxr14, std::size_t n_plco, int batch_size,
                     std::uint64_t seed, int epoch);

// Loads, equalizes (anything deeper than 8 bits), optionally resizes, and
// caches each record's image. Records can also be preloaded from memory,
// which the synthetic corpus uses to skip the filesystem.
class ImageStore {
 public:
  // target_size 0 keeps native dimensions.
  ImageStore(const Manifest* cxr14, const Manifest* plco, int target_size);

  const GrayImage& get(Dataset ds, std::size_t index);
  void preload(Dataset ds, std::vector<GrayImage> images);

  // Pixel statistics over the given records (normally the train split).
  PixelStats compute_stats(Dataset ds, const std::vector<std::size_t>& indices);

 private:
  const Manifest* manifest_[2];
  int target_size_;
  std::vector<std::optional<GrayImage>> cache_[2];

  GrayImage prepare(GrayImage raw) const;
};

struct Batch {
  Tensor4 images;  // standardized, channel-replicated
  std::vector<LabelVector> labels;
  std::vector<MaskVector> masks;
  std::vector<Dataset> provenance;
  std::vector<const SampleRecord*> records;

  int size() const { return images.n; }
};

// Turns plan items into training-ready tensors. With supervise_location off,
// the nine location-class mask bits are cleared, which is the ablation's
// control arm.
class Batcher {
 public:
  Batcher(const Manifest* cxr14, const Manifest* plco, ImageStore* store,
          const DatasetStats& stats, int input_size, bool supervise_location);

  Batch make(const std::vector<BatchPlan::Item>& items) const;

 private:
  const Manifest* manifest_[2];
  ImageStore* store_;
  DatasetStats stats_;
  int input_size_;
  bool supervise_location_;
};

}  // namespace cxr
