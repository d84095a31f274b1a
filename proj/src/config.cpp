#include "tdsim/config.hpp"

#include <fstream>

#include "tdsim/errors.hpp"

namespace tdsim {

namespace {

using ojson = nlohmann::ordered_json;

ojson channel_json(const ChannelConfig& c) {
  ojson j;
  j["bandwidth"] = c.bandwidth;
  j["power"] = c.power;
  if (const auto* f = std::get_if<FixedDb>(&c.snr)) {
    j["snr_mode"] = "fixed";
    j["snr_db"] = f->db;
    j["snr_lo_db"] = -10.0;
    j["snr_hi_db"] = 10.0;
  } else {
    const auto& r = std::get<SandwichRange>(c.snr);
    j["snr_mode"] = "sandwich";
    j["snr_db"] = 0.0;
    j["snr_lo_db"] = r.lo_db;
    j["snr_hi_db"] = r.hi_db;
  }
  return j;
}

ojson train_json(const TrainConfig& t) {
  ojson j;
  j["batch_size"] = t.batch_size;
  j["stage_epochs"] = t.stage_epochs;
  j["base_lr"] = t.base_lr;
  j["lr_decay_factor"] = t.lr_decay_factor;
  j["lr_decay_every"] = t.lr_decay_every;
  j["seed"] = t.seed;
  j["alpha"] = t.alpha;
  j["beta"] = t.beta;
  j["temperature"] = t.temperature;
  j["criterion"] = criterion_name(t.criterion);
  j["stage2_codec_epochs"] = t.stage2_codec_epochs ? ojson(*t.stage2_codec_epochs) : ojson();
  j["td_base_lr"] = t.td_base_lr ? ojson(*t.td_base_lr) : ojson();
  j["td_inputs"] = t.td_inputs.names();
  j["td_hidden"] = t.td_hidden;
  return j;
}

ojson opt_str(const std::optional<std::string>& s) { return s ? ojson(*s) : ojson(); }

// Overlays `user` onto `base`, rejecting keys that base does not have.
void merge_into(ojson& base, const nlohmann::json& user, const std::string& prefix) {
  if (!user.is_object()) {
    throw ConfigError((prefix.empty() ? std::string("config") : prefix) + " must be an object");
  }
  for (const auto& [key, value] : user.items()) {
    const std::string dotted = prefix.empty() ? key : prefix + "." + key;
    if (!base.contains(key)) throw ConfigError("unknown config key '" + dotted + "'");
    auto& slot = base[key];
    if (slot.is_object()) {
      merge_into(slot, value, dotted);
    } else {
      slot = ojson::parse(value.dump());
    }
  }
}

template <class T>
T get(const ojson& j, const std::string& section, const std::string& key) {
  try {
    return j.at(section).at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config key '" + section + "." + key + "' has the wrong type");
  }
}

template <class T>
std::optional<T> get_opt(const ojson& j, const std::string& section, const std::string& key) {
  if (j.at(section).at(key).is_null()) return std::nullopt;
  return get<T>(j, section, key);
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  channel.validate();
  train.validate();
  if (eval.snr_grid.empty()) throw ConfigError("eval.snr_grid must not be empty");
  if (!(eval.tau >= 0.0 && eval.tau <= 1.0)) throw ConfigError("eval.tau must lie in [0,1]");
  if (!(eval.eta >= 0.0)) throw ConfigError("eval.eta must be >= 0");
  if (!(eval.p >= 0.0 && eval.p <= 1.0)) throw ConfigError("eval.p must lie in [0,1]");
  if (!(eval.accuracy_weight >= 0.0 && eval.accuracy_weight <= 1.0)) {
    throw ConfigError("eval.accuracy_weight must lie in [0,1]");
  }
  if (!(eval.match_tol >= 0.0)) throw ConfigError("eval.match_tol must be >= 0");
  if (eval.jobs == 0) throw ConfigError("eval.jobs must be >= 1");
  if (data.source != "synth" && data.source != "csv") {
    throw ConfigError("data.source must be 'synth' or 'csv'");
  }
  if (data.source == "synth") {
    if (data.n_train_per_class == 0 || data.n_test_per_class == 0) {
      throw ConfigError("data.n_train_per_class and data.n_test_per_class must be positive");
    }
    if (!(data.difficulty >= 0.0)) throw ConfigError("data.difficulty must be >= 0");
  } else if (!data.train_csv || !data.test_csv) {
    throw ConfigError("data.source 'csv' needs data.train_csv and data.test_csv");
  }
  if (paths.out_dir.empty()) throw ConfigError("paths.out_dir must not be empty");
}

nlohmann::ordered_json to_json(const RunConfig& cfg) {
  ojson j;
  j["model"] = ojson::parse(backbone_to_json(cfg.model).dump());
  j["channel"] = channel_json(cfg.channel);
  j["train"] = train_json(cfg.train);
  auto& e = j["eval"];
  e["snr_grid"] = cfg.eval.snr_grid;
  e["seed"] = cfg.eval.seed;
  e["tau"] = cfg.eval.tau;
  e["eta"] = cfg.eval.eta;
  e["p"] = cfg.eval.p;
  e["accuracy_weight"] = cfg.eval.accuracy_weight;
  e["match_tol"] = cfg.eval.match_tol;
  e["jobs"] = cfg.eval.jobs;
  auto& d = j["data"];
  d["source"] = cfg.data.source;
  d["n_train_per_class"] = cfg.data.n_train_per_class;
  d["n_test_per_class"] = cfg.data.n_test_per_class;
  d["difficulty"] = cfg.data.difficulty;
  d["seed"] = cfg.data.seed;
  d["train_csv"] = opt_str(cfg.data.train_csv);
  d["test_csv"] = opt_str(cfg.data.test_csv);
  j["paths"]["out_dir"] = cfg.paths.out_dir;
  return j;
}

RunConfig run_config_from_json(const nlohmann::json& user) {
  ojson j = to_json(RunConfig{});
  merge_into(j, user, "");
  RunConfig cfg;
  try {
    cfg.model = backbone_from_json(j.at("model"));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model section: ") + e.what());
  }

  cfg.channel.bandwidth = get<int>(j, "channel", "bandwidth");
  cfg.channel.power = get<double>(j, "channel", "power");
  const auto mode = get<std::string>(j, "channel", "snr_mode");
  if (mode == "fixed") {
    cfg.channel.snr = FixedDb{get<double>(j, "channel", "snr_db")};
  } else if (mode == "sandwich") {
    cfg.channel.snr =
        SandwichRange{get<double>(j, "channel", "snr_lo_db"), get<double>(j, "channel", "snr_hi_db")};
  } else {
    throw ConfigError("channel.snr_mode must be 'fixed' or 'sandwich'");
  }

  auto& t = cfg.train;
  t.batch_size = get<std::size_t>(j, "train", "batch_size");
  t.stage_epochs = get<std::array<std::size_t, 3>>(j, "train", "stage_epochs");
  t.base_lr = get<double>(j, "train", "base_lr");
  t.lr_decay_factor = get<double>(j, "train", "lr_decay_factor");
  t.lr_decay_every = get<std::array<std::size_t, 3>>(j, "train", "lr_decay_every");
  t.seed = get<std::uint64_t>(j, "train", "seed");
  t.alpha = get<double>(j, "train", "alpha");
  t.beta = get<double>(j, "train", "beta");
  t.temperature = get<double>(j, "train", "temperature");
  t.criterion = parse_criterion(get<std::string>(j, "train", "criterion"));
  t.stage2_codec_epochs = get_opt<std::size_t>(j, "train", "stage2_codec_epochs");
  t.td_base_lr = get_opt<double>(j, "train", "td_base_lr");
  try {
    t.td_inputs = TdFeatureSet::parse(get<std::vector<std::string>>(j, "train", "td_inputs"));
  } catch (const ValidationError& e) {
    throw ConfigError(std::string("train.td_inputs: ") + e.what());
  }
  t.td_hidden = get<std::size_t>(j, "train", "td_hidden");

  auto& e = cfg.eval;
  e.snr_grid = get<std::vector<double>>(j, "eval", "snr_grid");
  e.seed = get<std::uint64_t>(j, "eval", "seed");
  e.tau = get<double>(j, "eval", "tau");
  e.eta = get<double>(j, "eval", "eta");
  e.p = get<double>(j, "eval", "p");
  e.accuracy_weight = get<double>(j, "eval", "accuracy_weight");
  e.match_tol = get<double>(j, "eval", "match_tol");
  e.jobs = get<std::size_t>(j, "eval", "jobs");

  auto& d = cfg.data;
  d.source = get<std::string>(j, "data", "source");
  d.n_train_per_class = get<std::size_t>(j, "data", "n_train_per_class");
  d.n_test_per_class = get<std::size_t>(j, "data", "n_test_per_class");
  d.difficulty = get<double>(j, "data", "difficulty");
  d.seed = get<std::uint64_t>(j, "data", "seed");
  d.train_csv = get_opt<std::string>(j, "data", "train_csv");
  d.test_csv = get_opt<std::string>(j, "data", "test_csv");

  cfg.paths.out_dir = get<std::string>(j, "paths", "out_dir");
  try {
    cfg.validate();
  } catch (const ValidationError& ex) {
    throw ConfigError(ex.what());
  } catch (const DimensionError& ex) {
    throw ConfigError(ex.what());
  }
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

RunConfig apply_overrides(const RunConfig& cfg, const std::vector<std::string>& assignments) {
  if (assignments.empty()) return cfg;
  nlohmann::json j = nlohmann::json::parse(to_json(cfg).dump());
  for (const auto& a : assignments) {
    const auto eq = a.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError("override '" + a + "' is not of the form key=value");
    }
    const std::string key = a.substr(0, eq);
    const std::string text = a.substr(eq + 1);
    nlohmann::json value;
    try {
      value = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error&) {
      value = text;
    }
    nlohmann::json* node = &j;
    std::size_t start = 0;
    while (true) {
      const auto dot = key.find('.', start);
      const std::string part = key.substr(start, dot == std::string::npos ? dot : dot - start);
      if (!node->is_object() || !node->contains(part)) {
        throw ConfigError("unknown config key '" + key + "'");
      }
      node = &(*node)[part];
      if (dot == std::string::npos) break;
      start = dot + 1;
    }
    if (node->is_object()) throw ConfigError("config key '" + key + "' names a section");
    *node = value;
  }
  return run_config_from_json(j);
}

std::pair<Dataset, Dataset> load_datasets(const RunConfig& cfg) {
  const auto& d = cfg.data;
  const auto k = cfg.model.num_classes;
  if (d.source == "csv") {
    return {load_csv_dataset(*d.train_csv, cfg.model.input_shape, k, Split::Train),
            load_csv_dataset(*d.test_csv, cfg.model.input_shape, k, Split::Test)};
  }
  return {synth_generate(k, cfg.model.input_shape, d.n_train_per_class, d.seed, d.difficulty,
                         Split::Train),
          synth_generate(k, cfg.model.input_shape, d.n_test_per_class, d.seed, d.difficulty,
                         Split::Test)};
}

}  // namespace tdsim
