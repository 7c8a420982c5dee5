// Command-line front end: synthetic corpus generation, patient-wise splits,
// split audits, training, evaluation and report comparison.
//
// Exit codes: 0 success, 1 usage error, 2 data/validation error, 3 numerical
// failure.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "cxr/checkpoint.hpp"
#include "cxr/errors.hpp"
#include "cxr/eval.hpp"
#include "cxr/manifest.hpp"
#include "cxr/sampler.hpp"
#include "cxr/splits.hpp"
#include "cxr/synth.hpp"
#include "cxr/trainer.hpp"

namespace {

using cxr::Dataset;

struct DatasetArgs {
  std::string manifest;
  std::string splits;
};

// Loads the manifest/splits pair for one dataset when configured.
struct LoadedDataset {
  cxr::Manifest manifest;
  cxr::SplitAssignment split;
};

std::optional<LoadedDataset> load_dataset(const DatasetArgs& args, Dataset ds,
                                          bool need_splits) {
  if (args.manifest.empty()) {
    if (!args.splits.empty()) {
      throw cxr::DataError("splits given without a manifest for " +
                           std::string(cxr::dataset_name(ds)));
    }
    return std::nullopt;
  }
  LoadedDataset out;
  out.manifest = cxr::load_manifest(args.manifest, ds);
  if (!args.splits.empty()) {
    out.split = cxr::read_split_files(args.splits, out.manifest);
  } else if (need_splits) {
    throw cxr::DataError("--" + std::string(ds == Dataset::kCxr14 ? "cxr14" : "plco") +
                         "-splits is required alongside the manifest");
  }
  return out;
}

int cmd_synth(const cxr::SynthConfig& config, const std::string& out_dir) {
  cxr::synth_write(config, out_dir);
  for (const Dataset ds : {Dataset::kCxr14, Dataset::kPlco}) {
    const auto dir = std::filesystem::path(out_dir) / (ds == Dataset::kCxr14 ? "cxr14" : "plco");
    const auto mf = cxr::load_manifest(dir / "manifest.csv", ds);
    std::printf("%s: %zu images, %zu patients (%.2f images/patient) -> %s\n",
                std::string(cxr::dataset_name(ds)).c_str(), mf.stats.images,
                mf.stats.patients, mf.stats.images_per_patient, dir.c_str());
  }
  return 0;
}

int cmd_split(const std::string& manifest_path, const std::string& dataset,
              const std::string& out_dir, const cxr::SplitRatios& ratios,
              std::uint64_t seed) {
  const Dataset ds = cxr::dataset_from_name(dataset);
  const auto mf = cxr::load_manifest(manifest_path, ds);
  const auto split = cxr::patient_split(mf, ratios, seed);
  cxr::verify_no_leakage(mf, split);
  cxr::write_split_files(split, out_dir);
  for (int s = 0; s < cxr::kNumSubsets; ++s) {
    std::printf("%s: %zu patients, %zu images\n",
                std::string(cxr::subset_name(static_cast<cxr::Subset>(s))).c_str(),
                split.patients[s].size(), split.images[s].size());
  }
  return 0;
}

int cmd_audit(const std::string& manifest_path, const std::string& dataset,
              const std::string& splits_dir) {
  const Dataset ds = cxr::dataset_from_name(dataset);
  const auto mf = cxr::load_manifest(manifest_path, ds);
  const auto split = cxr::read_split_files(splits_dir, mf);
  cxr::verify_no_leakage(mf, split);
  std::printf("ok: %zu images across %zu patients, no patient crosses subsets\n",
              mf.stats.images, mf.stats.patients);
  for (int s = 0; s < cxr::kNumSubsets; ++s) {
    std::printf("  %s: %zu images\n",
                std::string(cxr::subset_name(static_cast<cxr::Subset>(s))).c_str(),
                split.images[s].size());
  }
  return 0;
}

int cmd_train(const cxr::TrainConfig& config, const DatasetArgs& cxr14_args,
              const DatasetArgs& plco_args, const std::string& config_dump) {
  auto a = load_dataset(cxr14_args, Dataset::kCxr14, true);
  auto b = load_dataset(plco_args, Dataset::kPlco, true);
  if (!a && !b) throw cxr::DataError("no dataset given; pass at least one manifest");

  cxr::ImageStore store(a ? &a->manifest : nullptr, b ? &b->manifest : nullptr,
                        config.model.input_h);
  cxr::TrainData data;
  data.cxr14 = a ? &a->manifest : nullptr;
  data.plco = b ? &b->manifest : nullptr;
  if (a) data.cxr14_split = a->split;
  if (b) data.plco_split = b->split;
  data.store = &store;

  std::filesystem::create_directories(config.run_dir);
  {
    std::ofstream cfg(config.run_dir / "config.txt", std::ios::binary);
    cfg << config_dump;
  }
  const auto result = cxr::train(config, data);
  std::printf("trained %d epoch(s); best val loss %.6f at epoch %d\n", result.epochs_run,
              result.best_val_loss, result.best_epoch);
  std::printf("final val pathology-mean AUC: %.4f%s\n", result.final_val_auc,
              result.early_stopped ? " (early stop)" : "");
  std::printf("run artifacts in %s\n", config.run_dir.c_str());
  return 0;
}

int cmd_eval(const std::string& checkpoint_path, const DatasetArgs& cxr14_args,
             const DatasetArgs& plco_args, const std::string& subset_name,
             const std::string& out_dir) {
  auto ck = cxr::load_checkpoint(checkpoint_path);
  auto a = load_dataset(cxr14_args, Dataset::kCxr14, true);
  auto b = load_dataset(plco_args, Dataset::kPlco, true);
  if (!a && !b) throw cxr::DataError("no dataset given; pass at least one manifest");

  cxr::Subset subset = cxr::Subset::kTest;
  if (subset_name == "train") subset = cxr::Subset::kTrain;
  else if (subset_name == "val") subset = cxr::Subset::kVal;
  else if (subset_name != "test") throw cxr::DataError("unknown subset: " + subset_name);

  cxr::ImageStore store(a ? &a->manifest : nullptr, b ? &b->manifest : nullptr,
                        ck.model->spec().input_h);
  cxr::Batcher batcher(a ? &a->manifest : nullptr, b ? &b->manifest : nullptr, &store,
                       ck.stats, ck.model->spec().input_h, true);

  const auto resolve = [&](const LoadedDataset& d) {
    std::vector<std::size_t> idx;
    std::unordered_map<std::string, std::size_t> index_of;
    for (std::size_t i = 0; i < d.manifest.records.size(); ++i) {
      index_of.emplace(d.manifest.records[i].image_id, i);
    }
    for (const auto& id : d.split.images[static_cast<int>(subset)]) {
      idx.push_back(index_of.at(id));
    }
    return idx;
  };
  const auto idx_a = a ? resolve(*a) : std::vector<std::size_t>{};
  const auto idx_b = b ? resolve(*b) : std::vector<std::size_t>{};
  if (idx_a.empty() && idx_b.empty()) {
    throw cxr::DataError("subset '" + subset_name + "' is empty");
  }
  auto batches = cxr::sequential_batches(idx_a.size(), idx_b.size(), 16);
  for (auto& items : batches) {
    for (auto& item : items) {
      item.index = item.ds == Dataset::kCxr14 ? idx_a[item.index] : idx_b[item.index];
    }
  }
  const auto out = cxr::evaluate_model(*ck.model, batcher, batches, true);

  std::filesystem::create_directories(out_dir);
  const auto report_path = std::filesystem::path(out_dir) / "report.csv";
  cxr::write_auc_report(out.report, report_path);
  cxr::write_auc_svg(out.report, std::filesystem::path(out_dir) / "report.svg");
  std::printf("%zu labels, %d undefined; loss %.6f\n", out.report.per_label.size(),
              out.report.undefined_count, out.loss);
  for (const auto& agg : out.report.aggregates) {
    if (agg.defined > 0) {
      std::printf("%-16s %.4f  (%d/%d labels)\n", agg.name.c_str(), agg.mean, agg.defined,
                  agg.total);
    } else {
      std::printf("%-16s n/a\n", agg.name.c_str());
    }
  }
  std::printf("report written to %s\n", report_path.c_str());
  return 0;
}

int cmd_compare(const std::string& a_path, const std::string& b_path,
                const std::string& out_path) {
  const auto a = cxr::read_auc_report(a_path);
  const auto b = cxr::read_auc_report(b_path);
  const auto cmp = cxr::compare_reports(a, b);
  if (!out_path.empty()) cxr::write_compare_csv(cmp, out_path);
  for (const auto& row : cmp.aggregates) {
    if (row.a_defined && row.b_defined) {
      std::printf("%-16s %.4f -> %.4f  (delta %+.4f)\n", row.name.c_str(), row.a, row.b,
                  row.b - row.a);
    }
  }
  return 0;
}

int cmd_labelspace(const std::string& out_path) {
  const auto j = cxr::LabelSpace::combined().to_json();
  if (out_path.empty()) {
    std::cout << j.dump(2) << '\n';
  } else {
    std::ofstream out(out_path, std::ios::binary);
    if (!out) throw cxr::DataError("cannot create " + out_path);
    out << j.dump(2) << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Location-aware multi-label chest X-ray classification pipeline"};
  app.require_subcommand(1);

  // --- synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic two-dataset corpus");
  cxr::SynthConfig synth_cfg;
  std::string synth_out;
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--image-size", synth_cfg.image_size, "Square image size");
  synth->add_option("--cxr14-patients", synth_cfg.cxr14_patients, "CXR14 patient count");
  synth->add_option("--plco-patients", synth_cfg.plco_patients, "PLCO patient count");
  synth->add_option("--images-per-patient", synth_cfg.images_per_patient_mean,
                    "Mean images per patient (1..6)");
  synth->add_option("--prevalence-scale", synth_cfg.prevalence_scale,
                    "Multiplier on per-pathology prevalence");
  synth->add_flag("!--uncorrelated-locations", synth_cfg.location_correlated,
                  "Place located-disease blobs uniformly and publish no locations");
  synth->add_option("--location-missing-rate", synth_cfg.location_missing_rate,
                    "Fraction of PLCO images withholding their location data");
  synth->add_option("--noise", synth_cfg.noise_level, "Gaussian pixel noise level");
  synth->add_option("--seed", synth_cfg.seed, "Corpus seed");

  // --- split
  auto* split = app.add_subcommand("split", "Patient-wise train/val/test split");
  std::string split_manifest, split_dataset, split_out;
  cxr::SplitRatios ratios;
  std::uint64_t split_seed = 1234;
  split->add_option("--manifest", split_manifest, "Manifest CSV")->required();
  split->add_option("--dataset", split_dataset, "Dataset tag (CXR14 or PLCO)")->required();
  split->add_option("--out", split_out, "Directory for train/val/test.txt")->required();
  split->add_option("--train", ratios.train, "Train fraction");
  split->add_option("--val", ratios.val, "Val fraction");
  split->add_option("--test", ratios.test, "Test fraction");
  split->add_option("--seed", split_seed, "Split seed");

  // --- audit
  auto* audit = app.add_subcommand("audit", "Check split files for patient leakage");
  std::string audit_manifest, audit_dataset, audit_splits;
  audit->add_option("--manifest", audit_manifest, "Manifest CSV")->required();
  audit->add_option("--dataset", audit_dataset, "Dataset tag (CXR14 or PLCO)")->required();
  audit->add_option("--splits", audit_splits, "Split directory")->required();

  // --- train
  auto* train = app.add_subcommand("train", "Train the pooled classifier");
  train->set_config("--config", "", "Read options from a key=value file");
  cxr::TrainConfig train_cfg;
  DatasetArgs train_cxr14, train_plco;
  std::string run_dir;
  train->add_option("--cxr14-manifest", train_cxr14.manifest, "CXR14 manifest CSV");
  train->add_option("--cxr14-splits", train_cxr14.splits, "CXR14 split directory");
  train->add_option("--plco-manifest", train_plco.manifest, "PLCO manifest CSV");
  train->add_option("--plco-splits", train_plco.splits, "PLCO split directory");
  train->add_option("--run", run_dir, "Run directory for logs and checkpoints")->required();
  train->add_option("--epochs", train_cfg.epochs, "Epoch budget");
  train->add_option("--batch-size", train_cfg.batch_size, "Batch size");
  train->add_option("--lr", train_cfg.adam.lr, "Adam learning rate");
  train->add_option("--seed", train_cfg.seed, "Training seed");
  train->add_option("--threads", train_cfg.threads, "Worker threads (per-sample gradients)");
  train->add_option("--stop-at-val-auc", train_cfg.stop_at_val_auc,
                    "Early-stop threshold on val pathology-mean AUC (0 = off)");
  train->add_flag("!--no-weighted-loss", train_cfg.weighted_loss,
                  "Disable per-batch imbalance weighting");
  train->add_flag("!--no-location-supervision", train_cfg.location_supervision,
                  "Drop the location classes from training masks");
  train->add_option("--input-size", train_cfg.model.input_h, "Model input size");
  train->add_option("--blocks", train_cfg.model.num_blocks, "Dense block count");
  train->add_option("--layers-per-block", train_cfg.model.layers_per_block,
                    "Convolutions per dense block");
  train->add_option("--growth", train_cfg.model.growth, "Channels added per layer");
  train->add_flag("--norm-layers", train_cfg.model.norm_layers,
                  "Enable batch-statistics normalization layers");
  train->add_flag("!--no-pool-between", train_cfg.model.pool_between_blocks,
                  "Disable the 2x2 transition pools between blocks");
  train->add_option("--plateau-patience", train_cfg.plateau.patience,
                    "Epochs without val improvement before a cut");
  train->add_option("--plateau-factor", train_cfg.plateau.factor, "Rate cut factor");

  // --- eval
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint and write reports");
  std::string eval_ckpt, eval_subset = "test", eval_out;
  DatasetArgs eval_cxr14, eval_plco;
  eval->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
  eval->add_option("--cxr14-manifest", eval_cxr14.manifest, "CXR14 manifest CSV");
  eval->add_option("--cxr14-splits", eval_cxr14.splits, "CXR14 split directory");
  eval->add_option("--plco-manifest", eval_plco.manifest, "PLCO manifest CSV");
  eval->add_option("--plco-splits", eval_plco.splits, "PLCO split directory");
  eval->add_option("--subset", eval_subset, "Subset to score (train/val/test)");
  eval->add_option("--out", eval_out, "Output directory")->required();

  // --- compare
  auto* compare = app.add_subcommand("compare", "Diff two AUC reports");
  std::string cmp_a, cmp_b, cmp_out;
  compare->add_option("--a", cmp_a, "Baseline report CSV")->required();
  compare->add_option("--b", cmp_b, "Comparison report CSV")->required();
  compare->add_option("--out", cmp_out, "Delta CSV path");

  // --- labelspace
  auto* labelspace = app.add_subcommand("labelspace", "Dump the combined label vocabulary");
  std::string ls_out;
  labelspace->add_option("--out", ls_out, "Output JSON path (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (synth->parsed()) return cmd_synth(synth_cfg, synth_out);
    if (split->parsed()) return cmd_split(split_manifest, split_dataset, split_out, ratios,
                                          split_seed);
    if (audit->parsed()) return cmd_audit(audit_manifest, audit_dataset, audit_splits);
    if (train->parsed()) {
      train_cfg.run_dir = run_dir;
      train_cfg.model.input_w = train_cfg.model.input_h;
      return cmd_train(train_cfg, train_cxr14, train_plco,
                       train->config_to_str(true, true));
    }
    if (eval->parsed()) return cmd_eval(eval_ckpt, eval_cxr14, eval_plco, eval_subset,
                                        eval_out);
    if (compare->parsed()) return cmd_compare(cmp_a, cmp_b, cmp_out);
    if (labelspace->parsed()) return cmd_labelspace(ls_out);
  } catch (const cxr::NumericError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return 3;
  } catch (const cxr::DataError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
