#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "cxr/checkpoint.hpp"
#include "cxr/eval.hpp"
#include "cxr/manifest.hpp"
#include "cxr/net.hpp"
#include "cxr/optim.hpp"
#include "cxr/sampler.hpp"
#include "cxr/splits.hpp"

namespace cxr {

struct TrainConfig {
  ModelSpec model;
  AdamConfig adam;
  PlateauConfig plateau;
  int batch_size = 16;
  int epochs = 20;
  std::uint64_t seed = 1234;
  // Per-batch imbalance weights; off means unit weights.
  bool weighted_loss = true;
  // Clearing this removes the location classes from every training mask,
  // which is the ablation baseline.
  bool location_supervision = true;
  // Early stop once the validation pathology-mean AUC reaches this (0 = off).
  double stop_at_val_auc = 0.0;
  // >1 switches to per-sample gradient accumulation across worker threads
  // (deterministic for a fixed thread count; requires norm_layers off).
  int threads = 1;
  std::filesystem::path run_dir;  // log.csv, best.ckpt, last.ckpt

  void validate() const;
};

struct TrainData {
  const Manifest* cxr14 = nullptr;  // either may be null
  const Manifest* plco = nullptr;
  SplitAssignment cxr14_split, plco_split;
  ImageStore* store = nullptr;
};

struct TrainResult {
  int epochs_run = 0;
  int best_epoch = -1;
  double best_val_loss = 0.0;
  double final_val_auc = 0.0;  // pathology-mean
  bool early_stopped = false;
  std::vector<double> lr_history;  // lr used during each epoch
  DatasetStats stats;
};

struct EvalOutput {
  AucReport report;
  double loss = 0.0;
};

// Forward passes in eval mode over fixed-order batches; loss uses the same
// weighting scheme as training.
EvalOutput evaluate_model(Model& model, const Batcher& batcher,
                          const std::vector<std::vector<BatchPlan::Item>>& batches,
                          bool weighted_loss);

// Sequential fixed-order batches over (subset of) both datasets, for
// validation and test passes.
std::vector<std::vector<BatchPlan::Item>> sequential_batches(
    std::size_t n_cxr14, std::size_t n_plco, int batch_size);

// Trains from scratch: audits the splits, fixes train-split pixel
// statistics, then runs the epoch loop with per-batch weighting, plateau
// scheduling, per-epoch CSV logging and best/last checkpoints. Throws
// NumericError when the loss or any gradient goes non-finite.
TrainResult train(const TrainConfig& config, TrainData& data);

}  // namespace cxr
