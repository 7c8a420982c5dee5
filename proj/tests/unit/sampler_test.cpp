#include <doctest.h>

#include <cmath>
#include <set>
#include <utility>
#include <vector>

#include "cxr/sampler.hpp"
#include "cxr/synth.hpp"

using namespace cxr;

namespace {

// Every record exactly once, all batches full except possibly the last.
void check_plan_shape(const BatchPlan& plan, std::size_t n_a, std::size_t n_b,
                      int batch_size) {
  std::set<std::pair<int, std::size_t>> seen;
  for (std::size_t b = 0; b < plan.batches.size(); ++b) {
    const auto& items = plan.batches[b];
    REQUIRE(!items.empty());
    if (b + 1 < plan.batches.size()) {
      CHECK(static_cast<int>(items.size()) == batch_size);
    }
    for (const auto& item : items) {
      CHECK(seen.emplace(static_cast<int>(item.ds), item.index).second);
      const std::size_t limit = item.ds == Dataset::kCxr14 ? n_a : n_b;
      CHECK(item.index < limit);
    }
  }
  CHECK(seen.size() == n_a + n_b);
  CHECK(plan.total_items() == n_a + n_b);
}

}  // namespace

TEST_SUITE_BEGIN("sampler");

TEST_CASE("epoch plans cover both datasets exactly once") {
  const std::vector<std::pair<std::size_t, std::size_t>> cases = {
      {50, 30}, {7, 90}, {16, 16}, {1, 1}};
  for (const auto& [na, nb] : cases) {
    const BatchPlan plan = plan_epoch(na, nb, 8, 99, 0);
    check_plan_shape(plan, na, nb, 8);
  }
}

TEST_CASE("mixed batches while both datasets have samples left") {
  const std::size_t na = 40, nb = 24;
  const BatchPlan plan = plan_epoch(na, nb, 8, 5, 2);
  check_plan_shape(plan, na, nb, 8);

  std::size_t rem_a = na, rem_b = nb;
  for (const auto& items : plan.batches) {
    int got_a = 0, got_b = 0;
    for (const auto& item : items) {
      (item.ds == Dataset::kCxr14 ? got_a : got_b)++;
    }
    if (rem_a > 0 && rem_b > 0 && items.size() >= 2) {
      CHECK(got_a >= 1);
      CHECK(got_b >= 1);
    }
    rem_a -= got_a;
    rem_b -= got_b;
  }
  CHECK(rem_a == 0);
  CHECK(rem_b == 0);
}

TEST_CASE("single-dataset planning degrades gracefully") {
  const BatchPlan plan = plan_epoch(20, 0, 6, 1, 0);
  check_plan_shape(plan, 20, 0, 6);
  REQUIRE(plan.batches.size() == 4);  // 6+6+6+2
  CHECK(plan.batches.back().size() == 2);
  for (const auto& items : plan.batches) {
    for (const auto& item : items) CHECK(item.ds == Dataset::kCxr14);
  }
}

TEST_CASE("plans are deterministic in seed and epoch") {
  const BatchPlan a = plan_epoch(33, 21, 8, 77, 4);
  const BatchPlan b = plan_epoch(33, 21, 8, 77, 4);
  REQUIRE(a.batches.size() == b.batches.size());
  bool same_as_other_epoch = true;
  const BatchPlan c = plan_epoch(33, 21, 8, 77, 5);
  for (std::size_t i = 0; i < a.batches.size(); ++i) {
    REQUIRE(a.batches[i].size() == b.batches[i].size());
    for (std::size_t j = 0; j < a.batches[i].size(); ++j) {
      CHECK(a.batches[i][j].ds == b.batches[i][j].ds);
      CHECK(a.batches[i][j].index == b.batches[i][j].index);
      if (i < c.batches.size() && j < c.batches[i].size()) {
        same_as_other_epoch &= a.batches[i][j].ds == c.batches[i][j].ds &&
                               a.batches[i][j].index == c.batches[i][j].index;
      }
    }
  }
  CHECK_FALSE(same_as_other_epoch);
}

namespace {

SynthConfig tiny_config() {
  SynthConfig cfg;
  cfg.cxr14_patients = 6;
  cfg.plco_patients = 6;
  cfg.image_size = 32;
  cfg.seed = 404;
  return cfg;
}

}  // namespace

TEST_CASE("the image store equalizes deep images and caches") {
  const SynthCorpus corpus = synth_generate(tiny_config());
  ImageStore store(&corpus.cxr14, &corpus.plco, 32);
  store.preload(Dataset::kCxr14, corpus.cxr14_images);
  store.preload(Dataset::kPlco, corpus.plco_images);

  REQUIRE(corpus.plco_images[0].bit_depth == 16);
  const GrayImage& prepared = store.get(Dataset::kPlco, 0);
  CHECK(prepared.bit_depth == 8);  // equalized on ingest
  CHECK(prepared.width == 32);
  const GrayImage& again = store.get(Dataset::kPlco, 0);
  CHECK(&prepared == &again);  // cached, not re-derived

  const auto stats = store.compute_stats(Dataset::kCxr14, {0, 1, 2});
  CHECK(stats.count == 3u * 32u * 32u);
  CHECK(stats.stddev > 0.0);
  CHECK(stats.mean > 0.0);
  CHECK(stats.mean < 255.0);
}

TEST_CASE("batches carry standardized pixels and dataset masks") {
  const SynthCorpus corpus = synth_generate(tiny_config());
  ImageStore store(&corpus.cxr14, &corpus.plco, 32);
  store.preload(Dataset::kCxr14, corpus.cxr14_images);
  store.preload(Dataset::kPlco, corpus.plco_images);

  std::vector<std::size_t> all_cxr(corpus.cxr14.records.size());
  for (std::size_t i = 0; i < all_cxr.size(); ++i) all_cxr[i] = i;
  std::vector<std::size_t> all_plco(corpus.plco.records.size());
  for (std::size_t i = 0; i < all_plco.size(); ++i) all_plco[i] = i;

  DatasetStats stats;
  stats.per[0] = store.compute_stats(Dataset::kCxr14, all_cxr);
  stats.per[1] = store.compute_stats(Dataset::kPlco, all_plco);

  const std::vector<BatchPlan::Item> items = {
      {Dataset::kCxr14, 0}, {Dataset::kPlco, 0}, {Dataset::kCxr14, 1}};

  Batcher batcher(&corpus.cxr14, &corpus.plco, &store, stats, 32, true);
  const Batch batch = batcher.make(items);
  REQUIRE(batch.size() == 3);
  REQUIRE(batch.images.c == 3);
  REQUIRE(batch.images.h == 32);
  CHECK(batch.provenance[0] == Dataset::kCxr14);
  CHECK(batch.provenance[1] == Dataset::kPlco);
  CHECK(batch.records[0] == &corpus.cxr14.records[0]);
  CHECK(batch.records[1] == &corpus.plco.records[0]);

  // Channel replication: the three planes of a slot are identical.
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) {
      CHECK(batch.images.at(0, 0, y, x) == batch.images.at(0, 1, y, x));
      CHECK(batch.images.at(0, 1, y, x) == batch.images.at(0, 2, y, x));
    }
  }

  // Dataset-driven masks: CXR14 samples supervise only the first 14 classes.
  for (int n = 0; n < LabelSpace::kNumClasses; ++n) {
    CHECK(batch.masks[0].bits[n] == (n < LabelSpace::kPlcoBase ? 1 : 0));
  }
  // The PLCO sample supervises the PLCO block.
  CHECK(batch.masks[1].bits[LabelSpace::kPlcoBase] == 1);

  // Standardized pixels are zero-mean-ish, not raw 0..255.
  double mx = 0.0;
  for (const double v : batch.images.data) mx = std::max(mx, std::fabs(v));
  CHECK(mx < 30.0);
  CHECK(mx > 0.01);
}

TEST_CASE("location supervision can be switched off") {
  const SynthCorpus corpus = synth_generate(tiny_config());
  ImageStore store(&corpus.cxr14, &corpus.plco, 32);
  store.preload(Dataset::kCxr14, corpus.cxr14_images);
  store.preload(Dataset::kPlco, corpus.plco_images);
  DatasetStats stats;
  stats.per[0] = {128.0, 40.0, 100};
  stats.per[1] = {128.0, 40.0, 100};

  std::vector<BatchPlan::Item> items;
  for (std::size_t i = 0; i < corpus.plco.records.size(); ++i) {
    items.push_back({Dataset::kPlco, i});
  }
  Batcher on(&corpus.cxr14, &corpus.plco, &store, stats, 32, true);
  Batcher off(&corpus.cxr14, &corpus.plco, &store, stats, 32, false);
  const Batch with = on.make(items);
  const Batch without = off.make(items);

  bool any_location_supervised = false;
  for (int s = 0; s < with.size(); ++s) {
    for (int n = LabelSpace::kLocationBase; n < LabelSpace::kNumClasses; ++n) {
      any_location_supervised |= with.masks[s].bits[n] == 1;
      CHECK(without.masks[s].bits[n] == 0);
    }
    // Pathology supervision identical either way.
    for (int n = 0; n < LabelSpace::kLocationBase; ++n) {
      CHECK(with.masks[s].bits[n] == without.masks[s].bits[n]);
    }
  }
  CHECK(any_location_supervised);
}

TEST_SUITE_END();
