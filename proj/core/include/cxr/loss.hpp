#pragma once

#include <vector>

#include "cxr/labelspace.hpp"
#include "cxr/tensor.hpp"

namespace cxr {

// Predictions are clamped to [kProbClamp, 1 - kProbClamp] before any log.
inline constexpr double kProbClamp = 1e-7;

inline double clamp_prob(double p) {
  if (p < kProbClamp) return kProbClamp;
  if (p > 1.0 - kProbClamp) return 1.0 - kProbClamp;
  return p;
}

// Per-batch, per-label presence/absence counts and the resulting weights.
// A label with no positives or no negatives among its supervised entries is
// inactive for the batch: zero loss and zero gradient.
struct LabelWeight {
  int pos = 0;               // supervised entries with label 1
  int neg = 0;               // supervised entries with label 0
  double w_pos = 0.0;        // (pos + neg) / pos
  double w_neg = 0.0;        // (pos + neg) / neg
  bool active = false;
};

struct BatchWeightTable {
  std::vector<LabelWeight> per_label;  // size C
};

// Counts consider only mask=1 entries.
BatchWeightTable batch_weights(const std::vector<LabelVector>& labels,
                               const std::vector<MaskVector>& masks);

// Uniform-weight variant (w_pos = w_neg = 1); a label is active whenever it
// has at least one supervised entry.
BatchWeightTable unit_weights(const std::vector<LabelVector>& labels,
                              const std::vector<MaskVector>& masks);

// -(w_pos * l * ln p + w_neg * (1 - l) * ln(1 - p)), p clamped.
double weighted_bce(double p, int label, double w_pos, double w_neg);

struct LossValue {
  double total = 0.0;              // (1/C) * sum of per_label
  std::vector<double> per_label;   // batch-mean masked contribution per class
};

// Per sample: L = (1/C) * sum_n mask_n * weighted_bce_n, inactive labels
// contributing zero; the batch total is the mean over samples.
LossValue pooled_loss(const Matrix& preds,
                      const std::vector<LabelVector>& labels,
                      const std::vector<MaskVector>& masks,
                      const BatchWeightTable& weights);

// dL/dp for every (sample, label); exactly 0.0 wherever mask=0 or the label
// is inactive for this batch.
Matrix pooled_loss_grad(const Matrix& preds,
                        const std::vector<LabelVector>& labels,
                        const std::vector<MaskVector>& masks,
                        const BatchWeightTable& weights);

}  // namespace cxr
