#include <doctest.h>

#include <bit>
#include <cmath>
#include <cstdint>
#include <vector>

#include "cxr/loss.hpp"
#include "cxr/rng.hpp"
#include "oracles.hpp"

using namespace cxr;

namespace {

constexpr int kC = LabelSpace::kNumClasses;

struct RandomBatch {
  Matrix preds;
  std::vector<LabelVector> labels;
  std::vector<MaskVector> masks;
};

RandomBatch make_batch(Rng& rng, int batch, double mask_rate = 0.5) {
  RandomBatch b;
  b.preds = Matrix(batch, kC);
  b.labels.resize(batch);
  b.masks.resize(batch);
  for (int s = 0; s < batch; ++s) {
    b.labels[s].bits.assign(kC, 0);
    b.masks[s].bits.assign(kC, 0);
    for (int n = 0; n < kC; ++n) {
      b.preds.at(s, n) = 0.02 + 0.96 * rng.uniform();
      b.labels[s].bits[n] = rng.bernoulli(0.3) ? 1 : 0;
      b.masks[s].bits[n] = rng.bernoulli(mask_rate) ? 1 : 0;
    }
  }
  return b;
}

bool is_positive_zero(double v) {
  return std::bit_cast<std::uint64_t>(v) == 0;
}

}  // namespace

TEST_SUITE_BEGIN("loss");

TEST_CASE("clamp keeps probabilities strictly inside (0,1)") {
  CHECK(clamp_prob(0.0) == kProbClamp);
  CHECK(clamp_prob(1.0) == 1.0 - kProbClamp);
  CHECK(clamp_prob(0.5) == 0.5);
  CHECK(clamp_prob(-3.0) == kProbClamp);
}

TEST_CASE("weighted_bce matches the closed form") {
  // w_pos=2, label=1, p=0.5: -2*ln(0.5)
  CHECK(weighted_bce(0.5, 1, 2.0, 7.0) == doctest::Approx(-2.0 * std::log(0.5)).epsilon(1e-15));
  // w_neg=3, label=0, p=0.25: -3*ln(0.75)
  CHECK(weighted_bce(0.25, 0, 9.0, 3.0) == doctest::Approx(-3.0 * std::log(0.75)).epsilon(1e-15));
  // perfect confident prediction costs ~0 but stays finite through the clamp
  CHECK(weighted_bce(1.0, 1, 1.0, 1.0) == doctest::Approx(-std::log(1.0 - kProbClamp)));
  CHECK(std::isfinite(weighted_bce(1.0, 0, 1.0, 1.0)));
}

TEST_CASE("batch weights satisfy w_pos*P = w_neg*N = P+N") {
  Rng rng(101);
  int checked = 0;
  for (int trial = 0; trial < 200; ++trial) {
    auto b = make_batch(rng, 1 + static_cast<int>(rng.below(24)));
    const auto table = batch_weights(b.labels, b.masks);
    REQUIRE(static_cast<int>(table.per_label.size()) == kC);
    for (const auto& w : table.per_label) {
      if (!w.active) {
        CHECK((w.pos == 0 || w.neg == 0));
        continue;
      }
      const double total = w.pos + w.neg;
      CHECK(std::fabs(w.w_pos * w.pos - total) <= 1e-12 * total);
      CHECK(std::fabs(w.w_neg * w.neg - total) <= 1e-12 * total);
      ++checked;
    }
  }
  CHECK(checked > 1000);  // the property must actually have been exercised
}

TEST_CASE("weight counts ignore masked entries") {
  std::vector<LabelVector> labels(4);
  std::vector<MaskVector> masks(4);
  for (int s = 0; s < 4; ++s) {
    labels[s].bits.assign(kC, 0);
    masks[s].bits.assign(kC, 0);
  }
  // Label 0: two supervised entries (one positive), two masked-out positives.
  labels[0].bits[0] = 1;
  masks[0].bits[0] = 1;
  masks[1].bits[0] = 1;
  labels[2].bits[0] = 1;  // mask 0 - must not count
  labels[3].bits[0] = 1;  // mask 0 - must not count

  const auto table = batch_weights(labels, masks);
  CHECK(table.per_label[0].pos == 1);
  CHECK(table.per_label[0].neg == 1);
  CHECK(table.per_label[0].w_pos == doctest::Approx(2.0));
  CHECK(table.per_label[0].w_neg == doctest::Approx(2.0));
  CHECK(table.per_label[0].active);
  // Every other label saw no supervision at all.
  CHECK_FALSE(table.per_label[1].active);
}

TEST_CASE("single-sided labels are inactive under imbalance weighting") {
  std::vector<LabelVector> labels(3);
  std::vector<MaskVector> masks(3);
  for (int s = 0; s < 3; ++s) {
    labels[s].bits.assign(kC, 1);  // all positive
    masks[s].bits.assign(kC, 1);
  }
  const auto w = batch_weights(labels, masks);
  const auto u = unit_weights(labels, masks);
  for (int n = 0; n < kC; ++n) {
    CHECK_FALSE(w.per_label[n].active);  // no negatives anywhere
    CHECK(u.per_label[n].active);        // uniform variant still trains
    CHECK(u.per_label[n].w_pos == 1.0);
    CHECK(u.per_label[n].w_neg == 1.0);
  }
}

TEST_CASE("pooled loss agrees with the scalar oracle") {
  Rng rng(202);
  for (int trial = 0; trial < 50; ++trial) {
    auto b = make_batch(rng, 2 + static_cast<int>(rng.below(14)));
    const auto table = batch_weights(b.labels, b.masks);
    const auto loss = pooled_loss(b.preds, b.labels, b.masks, table);
    const double expect = oracle::scalar_pooled_loss(b.preds, b.labels, b.masks, table);
    CHECK(loss.total == doctest::Approx(expect).epsilon(1e-12));
    // per-label contributions sum back to C * total
    double sum = 0.0;
    for (const double v : loss.per_label) sum += v;
    CHECK(sum / kC == doctest::Approx(loss.total).epsilon(1e-12));
  }
}

TEST_CASE("gradient matches central differences on supervised entries") {
  Rng rng(303);
  auto b = make_batch(rng, 6);
  const auto table = batch_weights(b.labels, b.masks);
  const auto grad = pooled_loss_grad(b.preds, b.labels, b.masks, table);
  int checked = 0;
  for (int s = 0; s < b.preds.rows; ++s) {
    for (int n = 0; n < kC; ++n) {
      if (!b.masks[s].bits[n] || !table.per_label[n].active) continue;
      const double numeric = oracle::central_diff(
          [&] { return pooled_loss(b.preds, b.labels, b.masks, table).total; },
          &b.preds.at(s, n), 1e-7);
      CHECK(grad.at(s, n) == doctest::Approx(numeric).epsilon(1e-5));
      ++checked;
    }
  }
  CHECK(checked > 50);
}

TEST_CASE("masked and inactive entries carry a bitwise-zero gradient") {
  Rng rng(404);
  for (int trial = 0; trial < 100; ++trial) {
    auto b = make_batch(rng, 1 + static_cast<int>(rng.below(10)), 0.4);
    const auto table = batch_weights(b.labels, b.masks);
    const auto grad = pooled_loss_grad(b.preds, b.labels, b.masks, table);
    for (int s = 0; s < b.preds.rows; ++s) {
      for (int n = 0; n < kC; ++n) {
        if (!b.masks[s].bits[n] || !table.per_label[n].active) {
          REQUIRE(is_positive_zero(grad.at(s, n)));
        } else {
          CHECK(grad.at(s, n) != 0.0);
        }
      }
    }
  }
}

TEST_CASE("masked entries cannot influence the loss value") {
  Rng rng(505);
  auto b = make_batch(rng, 8);
  const auto table = batch_weights(b.labels, b.masks);
  const double before = pooled_loss(b.preds, b.labels, b.masks, table).total;
  // Corrupt every unsupervised prediction and flip its label.
  for (int s = 0; s < b.preds.rows; ++s) {
    for (int n = 0; n < kC; ++n) {
      if (b.masks[s].bits[n]) continue;
      b.preds.at(s, n) = rng.uniform();
      b.labels[s].bits[n] ^= 1;
    }
  }
  // Weight table is recomputed from the same masks, so counts are unchanged.
  const auto table2 = batch_weights(b.labels, b.masks);
  const double after = pooled_loss(b.preds, b.labels, b.masks, table2).total;
  CHECK(before == after);
}

TEST_SUITE_END();
