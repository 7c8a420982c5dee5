#include "cxr/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <thread>
#include <unordered_map>

#include "cxr/errors.hpp"
#include "cxr/loss.hpp"

namespace cxr {

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Split image-id lists resolved to record indices, per subset.
struct SubsetIndices {
  std::vector<std::size_t> per[kNumSubsets];
};

SubsetIndices resolve_split(const Manifest& mf, const SplitAssignment& split) {
  std::unordered_map<std::string, std::size_t> index_of;
  index_of.reserve(mf.records.size());
  for (std::size_t i = 0; i < mf.records.size(); ++i) {
    index_of.emplace(mf.records[i].image_id, i);
  }
  SubsetIndices out;
  for (int s = 0; s < kNumSubsets; ++s) {
    out.per[s].reserve(split.images[s].size());
    for (const auto& id : split.images[s]) {
      const auto it = index_of.find(id);
      if (it == index_of.end()) {
        throw DataError("split references unknown image '" + id + "'");
      }
      out.per[s].push_back(it->second);
    }
  }
  return out;
}

// plan_epoch / sequential_batches index into the subset lists; the Batcher
// wants record indices.
std::vector<BatchPlan::Item> to_record_indices(const std::vector<BatchPlan::Item>& items,
                                               const std::vector<std::size_t>& cxr14_idx,
                                               const std::vector<std::size_t>& plco_idx) {
  std::vector<BatchPlan::Item> out;
  out.reserve(items.size());
  for (const auto& item : items) {
    const auto& idx = item.ds == Dataset::kCxr14 ? cxr14_idx : plco_idx;
    out.push_back({item.ds, idx.at(item.index)});
  }
  return out;
}

Tensor4 slice_sample(const Tensor4& batch, int s) {
  Tensor4 out(1, batch.c, batch.h, batch.w);
  const std::size_t plane = static_cast<std::size_t>(batch.c) * batch.h * batch.w;
  std::copy(batch.data.begin() + s * plane, batch.data.begin() + (s + 1) * plane,
            out.data.begin());
  return out;
}

// One optimization step over an already materialized batch. Returns the batch
// loss. threads > 1 decomposes the batch into per-sample passes whose
// gradients are summed in a fixed order.
double train_step(Model& model, AdamOptimizer& opt, const Batch& batch,
                  bool weighted_loss, int threads) {
  const auto weights = weighted_loss ? batch_weights(batch.labels, batch.masks)
                                     : unit_weights(batch.labels, batch.masks);
  model.zero_grad();
  double loss_total = 0.0;
  if (threads <= 1) {
    Model::Cache cache;
    const Matrix preds = model.forward(batch.images, cache, true);
    const LossValue loss = pooled_loss(preds, batch.labels, batch.masks, weights);
    loss_total = loss.total;
    if (!std::isfinite(loss_total)) {
      throw NumericError("non-finite training loss");
    }
    const Matrix grad_pred = pooled_loss_grad(preds, batch.labels, batch.masks, weights);
    std::vector<double> grad_flat(model.param_count(), 0.0);
    model.backward(cache, grad_pred, grad_flat);
    model.accumulate_grad(grad_flat);
  } else {
    const int n = batch.size();
    const int workers = std::min(threads, n);
    std::vector<Model::Cache> caches(n);
    Matrix preds(n, model.spec().num_outputs);
    const auto run_forward = [&](int lo, int hi) {
      for (int s = lo; s < hi; ++s) {
        Model::Cache& c = caches[s];
        const Matrix p = model.forward(slice_sample(batch.images, s), c, true);
        std::copy(p.row(0), p.row(0) + p.cols, preds.row(s));
      }
    };
    std::vector<std::thread> pool;
    for (int t = 0; t < workers; ++t) {
      const int lo = t * n / workers, hi = (t + 1) * n / workers;
      pool.emplace_back(run_forward, lo, hi);
    }
    for (auto& th : pool) th.join();
    pool.clear();

    const LossValue loss = pooled_loss(preds, batch.labels, batch.masks, weights);
    loss_total = loss.total;
    if (!std::isfinite(loss_total)) {
      throw NumericError("non-finite training loss");
    }
    const Matrix grad_pred = pooled_loss_grad(preds, batch.labels, batch.masks, weights);

    std::vector<std::vector<double>> buffers(workers,
                                             std::vector<double>(model.param_count(), 0.0));
    const auto run_backward = [&](int t, int lo, int hi) {
      for (int s = lo; s < hi; ++s) {
        Matrix row(1, grad_pred.cols);
        std::copy(grad_pred.row(s), grad_pred.row(s) + grad_pred.cols, row.row(0));
        model.backward(caches[s], row, buffers[t]);
      }
    };
    for (int t = 0; t < workers; ++t) {
      const int lo = t * n / workers, hi = (t + 1) * n / workers;
      pool.emplace_back(run_backward, t, lo, hi);
    }
    for (auto& th : pool) th.join();
    for (const auto& buf : buffers) model.accumulate_grad(buf);
  }
  if (!opt.step()) {
    throw NumericError("non-finite gradient; optimizer step rejected");
  }
  return loss_total;
}

}  // namespace

void TrainConfig::validate() const {
  model.validate();
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (threads < 1) throw std::invalid_argument("threads must be >= 1");
  if (threads > 1 && model.norm_layers) {
    throw std::invalid_argument(
        "threaded training decomposes batches per sample and cannot honor "
        "batch-statistics norm layers");
  }
  if (stop_at_val_auc < 0.0 || stop_at_val_auc > 1.0) {
    throw std::invalid_argument("stop_at_val_auc must lie in [0, 1]");
  }
  if (run_dir.empty()) throw std::invalid_argument("run_dir must be set");
}

std::vector<std::vector<BatchPlan::Item>> sequential_batches(
    std::size_t n_cxr14, std::size_t n_plco, int batch_size) {
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  std::vector<std::vector<BatchPlan::Item>> out;
  const auto chunk = [&](Dataset ds, std::size_t n) {
    for (std::size_t base = 0; base < n; base += batch_size) {
      std::vector<BatchPlan::Item> b;
      const std::size_t end = std::min(n, base + batch_size);
      for (std::size_t i = base; i < end; ++i) b.push_back({ds, i});
      out.push_back(std::move(b));
    }
  };
  chunk(Dataset::kCxr14, n_cxr14);
  chunk(Dataset::kPlco, n_plco);
  return out;
}

EvalOutput evaluate_model(Model& model, const Batcher& batcher,
                          const std::vector<std::vector<BatchPlan::Item>>& batches,
                          bool weighted_loss) {
  AucAccumulator acc(LabelSpace::kNumClasses);
  double loss_sum = 0.0;
  std::size_t samples = 0;
  for (const auto& items : batches) {
    const Batch batch = batcher.make(items);
    Model::Cache cache;
    const Matrix preds = model.forward(batch.images, cache, false);
    const auto weights = weighted_loss ? batch_weights(batch.labels, batch.masks)
                                       : unit_weights(batch.labels, batch.masks);
    const LossValue loss = pooled_loss(preds, batch.labels, batch.masks, weights);
    loss_sum += loss.total * batch.size();
    samples += batch.size();
    for (int s = 0; s < batch.size(); ++s) {
      acc.add(std::span<const double>(preds.row(s), preds.cols), batch.labels[s],
              batch.masks[s], batch.records[s]->image_id);
    }
  }
  EvalOutput out;
  out.report = acc.finish(LabelSpace::combined());
  out.loss = samples ? loss_sum / static_cast<double>(samples) : 0.0;
  return out;
}

TrainResult train(const TrainConfig& config, TrainData& data) {
  config.validate();
  if (!data.store) throw std::invalid_argument("train: image store required");
  if (!data.cxr14 && !data.plco) throw std::invalid_argument("train: no data");

  SubsetIndices cxr14_idx, plco_idx;
  if (data.cxr14) {
    verify_no_leakage(*data.cxr14, data.cxr14_split);
    cxr14_idx = resolve_split(*data.cxr14, data.cxr14_split);
  }
  if (data.plco) {
    verify_no_leakage(*data.plco, data.plco_split);
    plco_idx = resolve_split(*data.plco, data.plco_split);
  }
  const auto& tr_a = cxr14_idx.per[static_cast<int>(Subset::kTrain)];
  const auto& tr_b = plco_idx.per[static_cast<int>(Subset::kTrain)];
  const auto& va_a = cxr14_idx.per[static_cast<int>(Subset::kVal)];
  const auto& va_b = plco_idx.per[static_cast<int>(Subset::kVal)];
  if (tr_a.empty() && tr_b.empty()) throw DataError("train split is empty");
  if (va_a.empty() && va_b.empty()) throw DataError("val split is empty");

  TrainResult result;
  if (data.cxr14) result.stats.of(Dataset::kCxr14) = data.store->compute_stats(Dataset::kCxr14, tr_a);
  if (data.plco) result.stats.of(Dataset::kPlco) = data.store->compute_stats(Dataset::kPlco, tr_b);

  Batcher batcher(data.cxr14, data.plco, data.store, result.stats,
                  config.model.input_h, config.location_supervision);

  Model model(config.model, config.seed);
  AdamOptimizer opt(model.params(), config.adam);
  PlateauScheduler sched(config.plateau);

  std::filesystem::create_directories(config.run_dir);
  std::ofstream log(config.run_dir / "log.csv", std::ios::binary);
  if (!log) throw DataError("cannot create training log in " + config.run_dir.string());
  log << "epoch,split,loss,lr,auc_pathology,auc_located,undefined\n";

  const auto val_batches = sequential_batches(va_a.size(), va_b.size(), config.batch_size);
  double best_val = 0.0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr_in_use = opt.lr();
    result.lr_history.push_back(lr_in_use);
    const BatchPlan plan =
        plan_epoch(tr_a.size(), tr_b.size(), config.batch_size, config.seed, epoch);
    double train_loss_sum = 0.0;
    std::size_t train_samples = 0;
    for (const auto& items : plan.batches) {
      const Batch batch = batcher.make(to_record_indices(items, tr_a, tr_b));
      const double loss = train_step(model, opt, batch, config.weighted_loss, config.threads);
      train_loss_sum += loss * batch.size();
      train_samples += batch.size();
    }
    const double train_loss = train_loss_sum / static_cast<double>(train_samples);
    log << epoch << ",train," << fmt(train_loss) << ',' << fmt(lr_in_use) << ",,,\n";

    std::vector<std::vector<BatchPlan::Item>> val_items;
    val_items.reserve(val_batches.size());
    for (const auto& items : val_batches) {
      val_items.push_back(to_record_indices(items, va_a, va_b));
    }
    const EvalOutput val = evaluate_model(model, batcher, val_items, config.weighted_loss);
    const auto* pathology = val.report.aggregate("mean:pathology");
    const auto* located = val.report.aggregate("mean:located");
    const double val_auc = pathology && pathology->defined ? pathology->mean : 0.0;
    log << epoch << ",val," << fmt(val.loss) << ',' << fmt(lr_in_use) << ','
        << (pathology && pathology->defined ? fmt(pathology->mean) : "") << ','
        << (located && located->defined ? fmt(located->mean) : "") << ','
        << val.report.undefined_count << '\n';
    log.flush();

    result.epochs_run = epoch + 1;
    result.final_val_auc = val_auc;

    nlohmann::json meta = {{"epoch", epoch},
                           {"val_loss", val.loss},
                           {"val_auc_pathology", val_auc},
                           {"seed", config.seed},
                           {"weighted_loss", config.weighted_loss},
                           {"location_supervision", config.location_supervision}};
    save_checkpoint(config.run_dir / "last.ckpt", model, &opt, &sched, result.stats, meta);
    if (result.best_epoch < 0 || val.loss < best_val) {
      best_val = val.loss;
      result.best_epoch = epoch;
      result.best_val_loss = val.loss;
      save_checkpoint(config.run_dir / "best.ckpt", model, &opt, &sched, result.stats, meta);
    }
    if (config.stop_at_val_auc > 0.0 && val_auc >= config.stop_at_val_auc) {
      result.early_stopped = true;
      break;
    }
    opt.set_lr(sched.update(val.loss, opt.lr()));
  }
  return result;
}

}  // namespace cxr
