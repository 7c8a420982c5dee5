#include "cxr/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "cxr/errors.hpp"
#include "cxr/rng.hpp"

namespace cxr {

std::size_t BatchPlan::total_items() const {
  std::size_t n = 0;
  for (const auto& b : batches) n += b.size();
  return n;
}

BatchPlan plan_epoch(std::size_t n_cxr14, std::size_t n_plco, int batch_size,
                     std::uint64_t seed, int epoch) {
  if (batch_size < 1) throw std::invalid_argument("plan_epoch: batch_size must be >= 1");
  std::vector<std::size_t> order[2];
  order[0].resize(n_cxr14);
  order[1].resize(n_plco);
  for (int ds = 0; ds < 2; ++ds) {
    std::iota(order[ds].begin(), order[ds].end(), std::size_t{0});
    Rng rng(derive_seed(seed, "epoch_shuffle",
                        (static_cast<std::uint64_t>(epoch) << 1) | ds));
    rng.shuffle(order[ds]);
  }
  Rng mix(derive_seed(seed, "epoch_mix", static_cast<std::uint64_t>(epoch)));
  BatchPlan plan;
  std::size_t pos[2] = {0, 0};
  std::size_t rem[2] = {n_cxr14, n_plco};
  while (rem[0] + rem[1] > 0) {
    const std::size_t take =
        std::min<std::size_t>(static_cast<std::size_t>(batch_size), rem[0] + rem[1]);
    std::size_t n_a;
    if (rem[0] == 0) {
      n_a = 0;
    } else if (rem[1] == 0) {
      n_a = take;
    } else {
      const double frac = static_cast<double>(rem[0]) / static_cast<double>(rem[0] + rem[1]);
      n_a = static_cast<std::size_t>(std::llround(static_cast<double>(take) * frac));
      if (take >= 2) {
        // Mixed-batch invariant: at least one sample from each while both
        // pools are non-empty.
        const std::size_t lo = std::max<std::size_t>(1, take > rem[1] ? take - rem[1] : 1);
        const std::size_t hi = std::min(rem[0], take - 1);
        n_a = std::clamp(n_a, lo, hi);
      } else {
        n_a = std::min<std::size_t>(std::min(n_a, rem[0]), 1);
        if (take > rem[1]) n_a = take - rem[1];
      }
    }
    std::vector<BatchPlan::Item> batch;
    batch.reserve(take);
    for (std::size_t k = 0; k < n_a; ++k) {
      batch.push_back({Dataset::kCxr14, order[0][pos[0]++]});
    }
    for (std::size_t k = 0; k < take - n_a; ++k) {
      batch.push_back({Dataset::kPlco, order[1][pos[1]++]});
    }
    rem[0] -= n_a;
    rem[1] -= take - n_a;
    mix.shuffle(batch);
    plan.batches.push_back(std::move(batch));
  }
  return plan;
}

ImageStore::ImageStore(const Manifest* cxr14, const Manifest* plco, int target_size)
    : manifest_{cxr14, plco}, target_size_(target_size) {
  if (cxr14) cache_[0].resize(cxr14->records.size());
  if (plco) cache_[1].resize(plco->records.size());
}

GrayImage ImageStore::prepare(GrayImage raw) const {
  if (raw.bit_depth > 8) raw = histogram_normalize(raw);
  if (target_size_ > 0 && (raw.width != target_size_ || raw.height != target_size_)) {
    raw = resize_bilinear(raw, target_size_, target_size_);
  }
  return raw;
}

const GrayImage& ImageStore::get(Dataset ds, std::size_t index) {
  const int d = static_cast<int>(ds);
  if (!manifest_[d] || index >= cache_[d].size()) {
    throw std::invalid_argument("ImageStore: record index out of range");
  }
  auto& slot = cache_[d][index];
  if (!slot) {
    const auto path = manifest_[d]->image_path(manifest_[d]->records[index]);
    slot = prepare(load_image(path));
  }
  return *slot;
}

void ImageStore::preload(Dataset ds, std::vector<GrayImage> images) {
  const int d = static_cast<int>(ds);
  if (!manifest_[d] || images.size() != cache_[d].size()) {
    throw std::invalid_argument("ImageStore: preload size mismatch");
  }
  for (std::size_t i = 0; i < images.size(); ++i) {
    cache_[d][i] = prepare(std::move(images[i]));
  }
}

PixelStats ImageStore::compute_stats(Dataset ds, const std::vector<std::size_t>& indices) {
  StatsAccumulator acc;
  for (const auto idx : indices) acc.add(get(ds, idx));
  return acc.finish();
}

Batcher::Batcher(const Manifest* cxr14, const Manifest* plco, ImageStore* store,
                 const DatasetStats& stats, int input_size, bool supervise_location)
    : manifest_{cxr14, plco}, store_(store), stats_(stats), input_size_(input_size),
      supervise_location_(supervise_location) {}

Batch Batcher::make(const std::vector<BatchPlan::Item>& items) const {
  if (items.empty()) throw std::invalid_argument("Batcher: empty batch");
  const auto& space = LabelSpace::combined();
  Batch batch;
  batch.images = Tensor4(static_cast<int>(items.size()), 3, input_size_, input_size_);
  batch.labels.reserve(items.size());
  batch.masks.reserve(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& item = items[i];
    const Manifest* mf = manifest_[static_cast<int>(item.ds)];
    if (!mf || item.index >= mf->records.size()) {
      throw std::invalid_argument("Batcher: plan item out of range");
    }
    const SampleRecord& rec = mf->records[item.index];
    const GrayImage& img = store_->get(item.ds, item.index);
    standardize_into(img, stats_.of(item.ds), batch.images, static_cast<int>(i));
    batch.labels.push_back(build_label_vector(rec, space));
    auto mask = build_mask_vector(rec, space);
    if (!supervise_location_) {
      for (int n = LabelSpace::kLocationBase; n < space.size(); ++n) mask.bits[n] = 0;
    }
    batch.masks.push_back(std::move(mask));
    batch.provenance.push_back(item.ds);
    batch.records.push_back(&rec);
  }
  return batch;
}

}  // namespace cxr
