#include "cxr/loss.hpp"

#include <cmath>
#include <stdexcept>

namespace cxr {

namespace {

void check_batch(const std::vector<LabelVector>& labels,
                 const std::vector<MaskVector>& masks) {
  if (labels.empty()) throw std::invalid_argument("empty batch");
  if (labels.size() != masks.size()) {
    throw std::invalid_argument("labels/masks batch size mismatch");
  }
  const std::size_t c = labels[0].bits.size();
  for (std::size_t s = 0; s < labels.size(); ++s) {
    if (labels[s].bits.size() != c || masks[s].bits.size() != c) {
      throw std::invalid_argument("label/mask width mismatch");
    }
  }
}

BatchWeightTable count_batch(const std::vector<LabelVector>& labels,
                             const std::vector<MaskVector>& masks) {
  check_batch(labels, masks);
  const std::size_t c = labels[0].bits.size();
  BatchWeightTable table;
  table.per_label.resize(c);
  for (std::size_t s = 0; s < labels.size(); ++s) {
    for (std::size_t n = 0; n < c; ++n) {
      if (!masks[s].bits[n]) continue;
      auto& lw = table.per_label[n];
      if (labels[s].bits[n]) ++lw.pos; else ++lw.neg;
    }
  }
  return table;
}

void check_preds(const Matrix& preds, const std::vector<LabelVector>& labels,
                 const BatchWeightTable& weights) {
  if (preds.rows != static_cast<int>(labels.size()) ||
      preds.cols != static_cast<int>(labels[0].bits.size()) ||
      weights.per_label.size() != labels[0].bits.size()) {
    throw std::invalid_argument("prediction/label shape mismatch");
  }
}

}  // namespace

BatchWeightTable batch_weights(const std::vector<LabelVector>& labels,
                               const std::vector<MaskVector>& masks) {
  BatchWeightTable table = count_batch(labels, masks);
  for (auto& lw : table.per_label) {
    if (lw.pos > 0 && lw.neg > 0) {
      const double total = lw.pos + lw.neg;
      lw.w_pos = total / lw.pos;
      lw.w_neg = total / lw.neg;
      lw.active = true;
    }
  }
  return table;
}

BatchWeightTable unit_weights(const std::vector<LabelVector>& labels,
                              const std::vector<MaskVector>& masks) {
  BatchWeightTable table = count_batch(labels, masks);
  for (auto& lw : table.per_label) {
    if (lw.pos + lw.neg > 0) {
      lw.w_pos = 1.0;
      lw.w_neg = 1.0;
      lw.active = true;
    }
  }
  return table;
}

double weighted_bce(double p, int label, double w_pos, double w_neg) {
  p = clamp_prob(p);
  return label ? -w_pos * std::log(p) : -w_neg * std::log1p(-p);
}

LossValue pooled_loss(const Matrix& preds,
                      const std::vector<LabelVector>& labels,
                      const std::vector<MaskVector>& masks,
                      const BatchWeightTable& weights) {
  check_batch(labels, masks);
  check_preds(preds, labels, weights);
  const int batch = preds.rows;
  const int c = preds.cols;
  LossValue out;
  out.per_label.assign(c, 0.0);
  for (int s = 0; s < batch; ++s) {
    const double* row = preds.row(s);
    for (int n = 0; n < c; ++n) {
      const auto& lw = weights.per_label[n];
      if (!masks[s].bits[n] || !lw.active) continue;
      out.per_label[n] += weighted_bce(row[n], labels[s].bits[n], lw.w_pos, lw.w_neg);
    }
  }
  double total = 0.0;
  for (int n = 0; n < c; ++n) {
    out.per_label[n] /= batch;
    total += out.per_label[n];
  }
  out.total = total / c;
  return out;
}

Matrix pooled_loss_grad(const Matrix& preds,
                        const std::vector<LabelVector>& labels,
                        const std::vector<MaskVector>& masks,
                        const BatchWeightTable& weights) {
  check_batch(labels, masks);
  check_preds(preds, labels, weights);
  const int batch = preds.rows;
  const int c = preds.cols;
  const double scale = 1.0 / (static_cast<double>(c) * batch);
  Matrix grad(batch, c);
  for (int s = 0; s < batch; ++s) {
    const double* row = preds.row(s);
    double* grow = grad.row(s);
    for (int n = 0; n < c; ++n) {
      const auto& lw = weights.per_label[n];
      if (!masks[s].bits[n] || !lw.active) continue;  // stays exactly 0.0
      const double p = clamp_prob(row[n]);
      grow[n] = labels[s].bits[n] ? scale * (-lw.w_pos / p)
                                  : scale * (lw.w_neg / (1.0 - p));
    }
  }
  return grad;
}

}  // namespace cxr
