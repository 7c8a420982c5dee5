#include "cxr/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "cxr/errors.hpp"
#include "cxr/labelspace.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint IO assumes a little-endian host");

namespace cxr {

namespace {

constexpr char kMagic[8] = {'C', 'X', 'R', 'C', 'K', 'P', 'T', '\x01'};

nlohmann::json stats_to_json(const DatasetStats& stats) {
  nlohmann::json j;
  for (const Dataset ds : {Dataset::kCxr14, Dataset::kPlco}) {
    const auto& s = stats.of(ds);
    j[std::string(dataset_name(ds))] = {
        {"mean", s.mean}, {"stddev", s.stddev}, {"count", s.count}};
  }
  return j;
}

DatasetStats stats_from_json(const nlohmann::json& j) {
  DatasetStats stats;
  for (const Dataset ds : {Dataset::kCxr14, Dataset::kPlco}) {
    const auto& e = j.at(std::string(dataset_name(ds)));
    auto& s = stats.of(ds);
    s.mean = e.at("mean").get<double>();
    s.stddev = e.at("stddev").get<double>();
    s.count = e.at("count").get<std::uint64_t>();
  }
  return stats;
}

void write_array(std::ofstream& out, const std::vector<double>& v) {
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
}

void read_array(std::ifstream& in, std::vector<double>& v, std::size_t count,
                const std::string& name, const std::filesystem::path& path) {
  v.resize(count);
  if (!in.read(reinterpret_cast<char*>(v.data()),
               static_cast<std::streamsize>(count * sizeof(double)))) {
    throw DataError(path.string() + ": truncated array '" + name + "'");
  }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const AdamOptimizer* optimizer, const PlateauScheduler* scheduler,
                     const DatasetStats& stats, const nlohmann::json& meta) {
  nlohmann::json header;
  header["format_version"] = 1;
  header["spec"] = model.spec().to_json();
  header["labelspace"] = LabelSpace::combined().to_json();
  header["stats"] = stats_to_json(stats);
  header["meta"] = meta;

  auto& arrays = header["arrays"] = nlohmann::json::array();
  std::vector<const std::vector<double>*> payload;
  const auto params = model.params();
  for (const ParamTensor* p : params) {
    arrays.push_back({{"name", p->name}, {"count", p->count()}});
    payload.push_back(&p->value);
  }
  if (optimizer) {
    const auto& cfg = optimizer->config();
    header["adam"] = {{"lr", cfg.lr},
                      {"beta1", cfg.beta1},
                      {"beta2", cfg.beta2},
                      {"eps", cfg.eps},
                      {"step_count", optimizer->step_count()}};
    for (std::size_t i = 0; i < params.size(); ++i) {
      arrays.push_back({{"name", "adam.m." + params[i]->name},
                        {"count", optimizer->moment1()[i].size()}});
      payload.push_back(&optimizer->moment1()[i]);
      arrays.push_back({{"name", "adam.v." + params[i]->name},
                        {"count", optimizer->moment2()[i].size()}});
      payload.push_back(&optimizer->moment2()[i]);
    }
  }
  if (scheduler) {
    const auto& cfg = scheduler->config();
    header["plateau"] = {{"factor", cfg.factor},       {"patience", cfg.patience},
                         {"min_delta", cfg.min_delta}, {"min_lr", cfg.min_lr},
                         {"best", scheduler->best()},  {"bad", scheduler->bad_updates()},
                         {"primed", scheduler->primed()}};
  }
  const auto state = model.state();
  for (std::size_t i = 0; i < state.size(); ++i) {
    arrays.push_back({{"name", "state." + std::to_string(i)}, {"count", state[i]->size()}});
    payload.push_back(state[i]);
  }

  const std::string header_str = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot create " + path.string());
  out.write(kMagic, 8);
  const std::uint64_t len = header_str.size();
  out.write(reinterpret_cast<const char*>(&len), 8);
  out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  for (const auto* arr : payload) write_array(out, *arr);
  if (!out) throw DataError("checkpoint write failed: " + path.string());
}

AdamOptimizer LoadedCheckpoint::make_optimizer() const {
  if (!has_optimizer) throw DataError("checkpoint carries no optimizer state");
  AdamOptimizer opt(model->params(), adam_config);
  opt.moment1() = adam_m;
  opt.moment2() = adam_v;
  opt.restore(adam_step);
  return opt;
}

PlateauScheduler LoadedCheckpoint::make_scheduler() const {
  if (!has_scheduler) throw DataError("checkpoint carries no scheduler state");
  PlateauScheduler sched(plateau_config);
  sched.restore(plateau_best, plateau_bad, plateau_primed);
  return sched;
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path.string());
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) {
    throw DataError("not a checkpoint file: " + path.string());
  }
  std::uint64_t len = 0;
  if (!in.read(reinterpret_cast<char*>(&len), 8) || len == 0 || len > (1ull << 30)) {
    throw DataError("corrupt checkpoint header: " + path.string());
  }
  std::string header_str(len, '\0');
  if (!in.read(header_str.data(), static_cast<std::streamsize>(len))) {
    throw DataError("truncated checkpoint header: " + path.string());
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_str);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": bad checkpoint header: " + e.what());
  }
  if (header.at("format_version").get<int>() != 1) {
    throw DataError("unsupported checkpoint version in " + path.string());
  }
  const LabelSpace space = LabelSpace::from_json(header.at("labelspace"));
  if (!(space == LabelSpace::combined())) {
    throw DataError("checkpoint label space does not match this build");
  }

  LoadedCheckpoint ck;
  const ModelSpec spec = ModelSpec::from_json(header.at("spec"));
  // Seed is irrelevant: every parameter is overwritten below.
  ck.model = std::make_unique<Model>(spec, 0);
  ck.stats = stats_from_json(header.at("stats"));
  ck.meta = header.value("meta", nlohmann::json::object());

  const auto params = ck.model->params();
  auto state = ck.model->state();
  ck.has_optimizer = header.contains("adam");
  if (ck.has_optimizer) {
    const auto& a = header.at("adam");
    ck.adam_config.lr = a.at("lr").get<double>();
    ck.adam_config.beta1 = a.at("beta1").get<double>();
    ck.adam_config.beta2 = a.at("beta2").get<double>();
    ck.adam_config.eps = a.at("eps").get<double>();
    ck.adam_step = a.at("step_count").get<std::uint64_t>();
  }
  ck.has_scheduler = header.contains("plateau");
  if (ck.has_scheduler) {
    const auto& p = header.at("plateau");
    ck.plateau_config.factor = p.at("factor").get<double>();
    ck.plateau_config.patience = p.at("patience").get<int>();
    ck.plateau_config.min_delta = p.at("min_delta").get<double>();
    ck.plateau_config.min_lr = p.at("min_lr").get<double>();
    ck.plateau_best = p.at("best").get<double>();
    ck.plateau_bad = p.at("bad").get<int>();
    ck.plateau_primed = p.at("primed").get<bool>();
  }

  // Consume arrays in manifest order, matching each against its target.
  std::size_t param_i = 0, state_i = 0;
  std::size_t moment_i = 0;
  if (ck.has_optimizer) {
    ck.adam_m.resize(params.size());
    ck.adam_v.resize(params.size());
  }
  for (const auto& entry : header.at("arrays")) {
    const auto name = entry.at("name").get<std::string>();
    const auto count = entry.at("count").get<std::size_t>();
    if (name.rfind("adam.m.", 0) == 0 || name.rfind("adam.v.", 0) == 0) {
      if (!ck.has_optimizer) throw DataError(path.string() + ": stray optimizer array");
      const bool is_m = name[5] == 'm';
      const std::size_t idx = moment_i / 2;
      if (idx >= params.size() || name.substr(7) != params[idx]->name ||
          count != params[idx]->count()) {
        throw DataError(path.string() + ": optimizer array mismatch at '" + name + "'");
      }
      read_array(in, is_m ? ck.adam_m[idx] : ck.adam_v[idx], count, name, path);
      ++moment_i;
    } else if (name.rfind("state.", 0) == 0) {
      if (state_i >= state.size() || count != state[state_i]->size()) {
        throw DataError(path.string() + ": norm state mismatch at '" + name + "'");
      }
      read_array(in, *state[state_i], count, name, path);
      ++state_i;
    } else {
      if (param_i >= params.size() || name != params[param_i]->name ||
          count != params[param_i]->count()) {
        throw DataError(path.string() + ": parameter mismatch at '" + name + "'");
      }
      read_array(in, params[param_i]->value, count, name, path);
      ++param_i;
    }
  }
  if (param_i != params.size() || state_i != state.size() ||
      (ck.has_optimizer && moment_i != 2 * params.size())) {
    throw DataError(path.string() + ": checkpoint is missing arrays");
  }
  return ck;
}

}  // namespace cxr
