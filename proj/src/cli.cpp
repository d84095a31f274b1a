#include "tdsim/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>

#include "tdsim/config.hpp"
#include "tdsim/errors.hpp"
#include "tdsim/eval.hpp"
#include "tdsim/train.hpp"

namespace fs = std::filesystem;

namespace tdsim {

PolicySpec parse_policy_spec(const std::string& text) {
  static const std::map<std::string, std::set<std::string>> known = {
      {"confidence", {"tau"}},
      {"entropy", {"eta"}},
      {"random", {"p"}},
      {"per_class", {"accuracy_weight"}},
      {"per_class_gt", {"accuracy_weight"}},
      {"always_early", {}},
      {"always_final", {}},
      {"gt_oracle", {}},
      {"neural", {}},
  };
  PolicySpec spec;
  const auto colon = text.find(':');
  spec.name = text.substr(0, colon);
  const auto it = known.find(spec.name);
  if (it == known.end()) throw ConfigError("unknown policy '" + spec.name + "'");
  if (colon == std::string::npos) return spec;
  std::stringstream rest(text.substr(colon + 1));
  std::string item;
  while (std::getline(rest, item, ';')) {
    const auto eq = item.find('=');
    const std::string key = item.substr(0, eq);
    if (eq == std::string::npos || !it->second.count(key)) {
      throw ConfigError("policy '" + spec.name + "' has no parameter '" + key + "'");
    }
    try {
      std::size_t used = 0;
      spec.params[key] = std::stod(item.substr(eq + 1), &used);
      if (used != item.size() - eq - 1) throw std::invalid_argument(item);
    } catch (const std::logic_error&) {
      throw ConfigError("policy parameter '" + item + "' is not a number");
    }
  }
  return spec;
}

namespace {

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Common& c, const std::string& seed_key) {
  cmd->add_option("--config", c.config, "RunConfig JSON file (defaults when omitted)");
  cmd->add_option("--set", c.sets, "Override a config key, e.g. --set train.beta=0.2");
  cmd->add_option("--out-dir", c.out_dir, "Override paths.out_dir");
  cmd->add_option("--seed", c.seed, "Override " + seed_key);
}

RunConfig resolve(const Common& c, bool train_seed) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : load_run_config(c.config);
  auto sets = c.sets;
  if (!c.out_dir.empty()) sets.push_back("paths.out_dir=" + nlohmann::json(c.out_dir).dump());
  if (c.seed) sets.push_back((train_seed ? "train.seed=" : "eval.seed=") + std::to_string(*c.seed));
  cfg = apply_overrides(cfg, sets);
  fs::create_directories(cfg.paths.out_dir);
  std::ofstream echo(fs::path(cfg.paths.out_dir) / "effective_config.json", std::ios::trunc);
  echo << to_json(cfg).dump(2) << '\n';
  return cfg;
}

fs::path under_out(const RunConfig& cfg, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : fs::path(cfg.paths.out_dir) / path;
}

fs::path find_input(const RunConfig& cfg, const std::string& p) {
  const fs::path path(p);
  if (fs::exists(path) || path.is_absolute()) return path;
  return fs::path(cfg.paths.out_dir) / path;
}

CheckpointContents load_model(const RunConfig& cfg, const std::string& path, int min_stage) {
  auto ck = load_checkpoint(find_input(cfg, path));
  if (ck.stage_completed < min_stage) {
    throw StateError("checkpoint " + path + " completed stage " +
                     std::to_string(ck.stage_completed) + "; stage " + std::to_string(min_stage) +
                     " or later is required");
  }
  ck.model.set_snr(cfg.channel.snr);
  return ck;
}

std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> grid;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      grid.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::logic_error&) {
      throw ConfigError("SNR grid entry '" + item + "' is not a number");
    }
  }
  if (grid.empty()) throw ConfigError("SNR grid is empty");
  return grid;
}

std::uint64_t calibration_seed(const RunConfig& cfg) { return mix_seed(cfg.eval.seed, 0xca1b); }

// Threshold table from dumps of `data`; ground-truth mode groups by label.
ThresholdTable calibrate_on(const SplitClassifier& model, const Dataset& data,
                            const RunConfig& cfg, double weight, bool by_label) {
  const auto dumps =
      compute_exit_grid(model, data, cfg.eval.snr_grid, calibration_seed(cfg), cfg.eval.jobs);
  auto samples = calibration_samples(dumps);
  if (by_label) {
    std::size_t i = 0;
    for (const auto& d : dumps) {
      for (std::size_t n = 0; n < d.size(); ++n) samples[i++].class_pred_early = d.labels[n];
    }
  }
  return calibrate_per_class(samples, cfg.eval.snr_grid, weight, model.backbone().num_classes);
}

// Builds policies from specs; per-class tables are calibrated on the train
// split unless a table file is given.
class PolicyFactory {
 public:
  PolicyFactory(const RunConfig& cfg, const CheckpointContents& ck, std::string table_path)
      : cfg_(cfg), ck_(ck), table_path_(std::move(table_path)) {}

  TdPolicy make(const PolicySpec& s) {
    auto param = [&](const char* key, double fallback) {
      const auto it = s.params.find(key);
      return it == s.params.end() ? fallback : it->second;
    };
    if (s.name == "confidence") return ConfidencePolicy{param("tau", cfg_.eval.tau)};
    if (s.name == "entropy") return EntropyPolicy{param("eta", cfg_.eval.eta)};
    if (s.name == "random") return RandomPolicy{param("p", cfg_.eval.p)};
    if (s.name == "always_early") return AlwaysEarlyPolicy{};
    if (s.name == "always_final") return AlwaysFinalPolicy{};
    if (s.name == "gt_oracle") return GtOraclePolicy{};
    if (s.name == "neural") return neural();
    const bool gt = s.name == "per_class_gt";
    const auto select = gt ? ThresholdSelect::GroundTruth : ThresholdSelect::ArgmaxClass;
    return PerClassPolicy{table(param("accuracy_weight", cfg_.eval.accuracy_weight), gt), select};
  }

  NeuralPolicy neural() {
    if (!ck_.td) throw StateError("checkpoint has no trained decision network (run stage 3)");
    if (!net_) net_ = std::make_shared<TdNet>(ck_.td->clone());
    return NeuralPolicy{net_, ck_.td_criterion};
  }

  const Dataset& train() {
    if (!train_) train_ = load_datasets(cfg_).first;
    return *train_;
  }

  std::shared_ptr<const ThresholdTable> table(double weight, bool by_label) {
    if (!table_path_.empty()) {
      std::ifstream in(find_input(cfg_, table_path_));
      if (!in) throw ConfigError("cannot read threshold table " + table_path_);
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(in);
      } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("threshold table is not valid JSON: ") + e.what());
      }
      return std::make_shared<ThresholdTable>(
          threshold_table_from_json(j.contains("table") ? j.at("table") : j));
    }
    return std::make_shared<ThresholdTable>(calibrate_on(ck_.model, train(), cfg_, weight, by_label));
  }

 private:
  const RunConfig& cfg_;
  const CheckpointContents& ck_;
  std::string table_path_;
  std::shared_ptr<TdNet> net_;
  std::optional<Dataset> train_;
};

fs::path csv_twin(const fs::path& jsonl) {
  auto p = jsonl;
  p.replace_extension(".csv");
  return p;
}

// ---- commands ------------------------------------------------------------------

struct TrainArgs {
  Common common;
  std::string stage = "all";
  std::string criterion;
  std::string resume;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  if (!a.criterion.empty()) parse_criterion(a.criterion);
  auto sets = a.common.sets;
  if (!a.criterion.empty()) sets.push_back("train.criterion=" + nlohmann::json(a.criterion).dump());
  Common c = a.common;
  c.sets = sets;
  const RunConfig cfg = resolve(c, true);

  int first = 1, last = 3;
  if (a.stage != "all") first = last = std::stoi(a.stage);

  std::optional<SplitClassifier> model;
  std::string resume = a.resume;
  if (resume.empty() && first > 1) {
    resume = (fs::path(cfg.paths.out_dir) / ("stage" + std::to_string(first - 1) + ".ckpt")).string();
  }
  if (!resume.empty()) {
    if (!fs::exists(resume)) throw StateError("stage " + a.stage + " needs a checkpoint: " + resume + " not found");
    auto ck = load_model(cfg, resume, a.stage == "all" ? 1 : first - 1);
    if (a.stage == "all") first = std::min(3, ck.stage_completed + 1);
    model.emplace(std::move(ck.model));
  } else {
    model.emplace(cfg.model, cfg.channel, cfg.train.seed);
  }

  const auto [train, test] = load_datasets(cfg);
  (void)test;
  const fs::path log_path = fs::path(cfg.paths.out_dir) / "train_log.jsonl";
  std::ofstream log(log_path, std::ios::trunc);
  if (!log) throw ConfigError("cannot write " + log_path.string());
  const LogSink sink = [&](const EpochLog& l) { log << l.to_json().dump() << '\n'; };

  for (int stage = first; stage <= last; ++stage) {
    const fs::path ckpt = fs::path(cfg.paths.out_dir) / ("stage" + std::to_string(stage) + ".ckpt");
    std::vector<EpochLog> logs;
    if (stage == 1) {
      logs = stage1_train(*model, train, cfg.train, sink);
      save_checkpoint(ckpt, *model, nullptr, "", 1, cfg.train.seed);
    } else if (stage == 2) {
      logs = stage2_train(*model, train, cfg.train, sink);
      save_checkpoint(ckpt, *model, nullptr, "", 2, cfg.train.seed);
    } else {
      const TdNet td = stage3_train_td(*model, train, cfg.train, sink);
      save_checkpoint(ckpt, *model, &td, criterion_name(cfg.train.criterion), 3, cfg.train.seed);
    }
    log.flush();
    // continue from the stored f32 weights so a stepwise run reproduces --stage all
    if (stage < last) model.emplace(load_model(cfg, ckpt.string(), stage).model);
    out << "stage " << stage << " done -> " << ckpt.string() << '\n';
  }
  return kExitOk;
}

struct EvalArgs {
  Common common;
  std::string checkpoint;
  std::vector<std::string> policies;
  std::optional<double> snr_db;
  std::string snr_grid;
  std::string out = "results.jsonl";
  std::string tau_table;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const RunConfig cfg = resolve(a.common, false);
  std::vector<PolicySpec> specs;
  for (const auto& p : a.policies) specs.push_back(parse_policy_spec(p));
  const bool needs_td =
      std::any_of(specs.begin(), specs.end(), [](const auto& s) { return s.name == "neural"; });
  const auto ck = load_model(cfg, a.checkpoint, needs_td ? 3 : 2);
  std::vector<double> grid = cfg.eval.snr_grid;
  if (a.snr_db) grid = {*a.snr_db};
  if (!a.snr_grid.empty()) grid = parse_grid(a.snr_grid);

  PolicyFactory factory(cfg, ck, a.tau_table);
  std::vector<TdPolicy> policies;
  for (const auto& s : specs) policies.push_back(factory.make(s));
  const auto [train, test] = load_datasets(cfg);
  (void)train;
  const auto records = sweep(ck.model, policies, grid, test, cfg.eval.seed, cfg.eval.jobs);
  const auto path = under_out(cfg, a.out);
  append_jsonl(path, records);
  append_csv(csv_twin(path), records);
  for (const auto& r : records) out << r.to_json().dump() << '\n';
  return kExitOk;
}

struct SweepArgs {
  Common common;
  std::string checkpoint;
  std::vector<std::string> policies;
  std::string snr_grid;
  std::optional<double> match_savings;
  std::optional<std::size_t> jobs;
  std::string out = "sweep.jsonl";
  std::string tau_table;
  std::vector<std::string> td_checkpoints;
};

int cmd_sweep(const SweepArgs& a, std::ostream& out) {
  Common c = a.common;
  if (a.jobs) c.sets.push_back("eval.jobs=" + std::to_string(*a.jobs));
  const RunConfig cfg = resolve(c, false);
  if (a.policies.empty()) throw ConfigError("--policies must name at least one policy");
  std::vector<PolicySpec> specs;
  for (const auto& p : a.policies) specs.push_back(parse_policy_spec(p));
  const bool needs_td =
      std::any_of(specs.begin(), specs.end(), [](const auto& s) { return s.name == "neural"; });
  const auto ck = load_model(cfg, a.checkpoint, needs_td ? 3 : 2);
  const auto grid = a.snr_grid.empty() ? cfg.eval.snr_grid : parse_grid(a.snr_grid);
  const auto [train, test] = load_datasets(cfg);
  (void)train;

  PolicyFactory factory(cfg, ck, a.tau_table);
  std::vector<EvalRecord> records;
  nlohmann::ordered_json report = nlohmann::ordered_json::array();
  if (!a.match_savings) {
    std::vector<TdPolicy> policies;
    for (const auto& s : specs) policies.push_back(factory.make(s));
    records = sweep(ck.model, policies, grid, test, cfg.eval.seed, cfg.eval.jobs);
    for (const auto& r : records) {
      auto j = r.to_json();
      report.push_back({{"policy_id", r.policy_id},
                        {"snr_db", r.snr_db},
                        {"policy_params", j["policy_params"]},
                        {"tuned", false}});
    }
  } else {
    const double target = *a.match_savings;
    const auto dumps = compute_exit_grid(ck.model, test, grid, cfg.eval.seed, cfg.eval.jobs);
    std::optional<std::vector<ExitDump>> cal;
    std::vector<std::vector<EvalRecord>> by_policy(specs.size());
    for (std::size_t pi = 0; pi < specs.size(); ++pi) {
      const auto& s = specs[pi];
      std::optional<PolicyFamily> family;
      try {
        family = parse_family(s.name);
      } catch (const ConfigError&) {
      }
      for (const auto& dump : dumps) {
        if (!family) {
          const auto r = evaluate(dump, factory.make(s));
          by_policy[pi].push_back(r);
          report.push_back({{"policy_id", r.policy_id}, {"snr_db", r.snr_db}, {"tuned", false}});
          continue;
        }
        TuneInputs inputs;
        if (*family == PolicyFamily::PerClass) {
          const bool gt = s.name == "per_class_gt";
          if (!cal) {
            cal = compute_exit_grid(ck.model, factory.train(), cfg.eval.snr_grid,
                                    calibration_seed(cfg), cfg.eval.jobs);
          }
          inputs.calibration = calibration_samples(*cal);
          if (gt) {
            std::size_t i = 0;
            for (const auto& d : *cal) {
              for (std::size_t n = 0; n < d.size(); ++n) {
                inputs.calibration[i++].class_pred_early = d.labels[n];
              }
            }
            inputs.select = ThresholdSelect::GroundTruth;
          }
          inputs.calibration_grid = cfg.eval.snr_grid;
        } else if (*family == PolicyFamily::Neural) {
          inputs.nets.push_back(factory.neural());
          for (const auto& extra : a.td_checkpoints) {
            auto other = load_model(cfg, extra, 3);
            inputs.nets.push_back(
                NeuralPolicy{std::make_shared<TdNet>(other.td->clone()), other.td_criterion});
          }
        }
        const auto t = tune_to_target_savings(dump, *family, target, cfg.eval.match_tol, inputs);
        by_policy[pi].push_back(t.record);
        auto j = t.to_json(target, cfg.eval.match_tol);
        j["tuned"] = true;
        report.push_back(j);
        if (!t.reached) {
          out << "warning: " << t.record.policy_id << " at " << dump.snr_db
              << " dB reached savings " << t.record.savings << " (target " << target << ")\n";
        }
      }
    }
    for (auto& rows : by_policy) records.insert(records.end(), rows.begin(), rows.end());
  }

  const auto path = under_out(cfg, a.out);
  append_jsonl(path, records);
  append_csv(csv_twin(path), records);
  std::ofstream rep(fs::path(cfg.paths.out_dir) / "tuning_report.json", std::ios::trunc);
  rep << report.dump(2) << '\n';
  for (const auto& r : records) out << r.to_json().dump() << '\n';
  return kExitOk;
}

struct CalibrateArgs {
  Common common;
  std::string checkpoint;
  std::optional<double> accuracy_weight;
  std::string split = "train";
  bool use_gt_label = false;
  std::string out = "tau_table.json";
};

int cmd_calibrate(const CalibrateArgs& a, std::ostream& out) {
  const RunConfig cfg = resolve(a.common, false);
  if (a.split != "train" && a.split != "test") throw ConfigError("--split must be train or test");
  const double w = a.accuracy_weight.value_or(cfg.eval.accuracy_weight);
  if (!(w >= 0.0 && w <= 1.0)) throw ConfigError("--accuracy-weight must lie in [0,1]");
  const auto ck = load_model(cfg, a.checkpoint, 2);
  const auto [train, test] = load_datasets(cfg);
  const auto table = std::make_shared<ThresholdTable>(
      calibrate_on(ck.model, a.split == "train" ? train : test, cfg, w, a.use_gt_label));

  const TdPolicy policy = PerClassPolicy{
      table, a.use_gt_label ? ThresholdSelect::GroundTruth : ThresholdSelect::ArgmaxClass};
  const std::vector<TdPolicy> one{policy};
  const auto records = sweep(ck.model, one, cfg.eval.snr_grid, test, cfg.eval.seed, cfg.eval.jobs);

  nlohmann::ordered_json j;
  j["split"] = a.split;
  j["select"] = a.use_gt_label ? "ground_truth" : "argmax";
  j["table"] = threshold_table_to_json(*table);
  j["test_eval"] = nlohmann::ordered_json::array();
  for (const auto& r : records) j["test_eval"].push_back(r.to_json());
  const auto path = under_out(cfg, a.out);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw ConfigError("cannot write " + path.string());
  f << j.dump(2) << '\n';
  out << "threshold table -> " << path.string() << '\n';
  return kExitOk;
}

struct StatsArgs {
  Common common;
  std::string checkpoint;
  std::string out = "confidence_stats.csv";
};

int cmd_stats(const StatsArgs& a, std::ostream& out) {
  const RunConfig cfg = resolve(a.common, false);
  const auto ck = load_model(cfg, a.checkpoint, 1);
  const auto [train, test] = load_datasets(cfg);
  (void)train;
  const auto stats = confidence_class_stats(ck.model, test);
  const auto path = under_out(cfg, a.out);
  write_stats_csv(path, stats);
  out << "confidence stats (" << stats.size() << " classes) -> " << path.string() << '\n';
  return kExitOk;
}

struct FlopsArgs {
  Common common;
  std::optional<std::size_t> td_input_dim;
};

int cmd_flops(const FlopsArgs& a, std::ostream& out) {
  const RunConfig cfg = resolve(a.common, false);
  TdNnConfig td;
  td.features = cfg.train.td_inputs;
  td.num_classes = cfg.model.num_classes;
  const std::size_t n = a.td_input_dim.value_or(td.input_dim());
  out << "part,flops,mflops\n";
  for (auto part : {FlopsPart::TdNn, FlopsPart::EarlyHead, FlopsPart::EdgePart, FlopsPart::FullDnn}) {
    const auto f = count_flops(part, cfg.model, n, cfg.train.td_hidden);
    out << flops_part_name(part) << ',' << f << ',' << std::fixed << std::setprecision(6)
        << static_cast<double>(f) / 1e6 << std::defaultfloat << '\n';
  }
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Early-exit collaborative inference simulator", "tdsim"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Run training stages and write stage{N}.ckpt");
  add_common(t, train.common, "train.seed");
  t->add_option("--stage", train.stage, "Stage to run")->check(CLI::IsMember({"1", "2", "3", "all"}));
  t->add_option("--criterion", train.criterion, "Stage-3 criterion: joint_ce, bce_gt, mixed");
  t->add_option("--resume", train.resume, "Checkpoint to continue from");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate policies on the test split");
  add_common(e, ev.common, "eval.seed");
  e->add_option("--checkpoint", ev.checkpoint, "Model checkpoint")->required();
  e->add_option("--policy", ev.policies, "Policy, e.g. confidence:tau=0.7 (repeatable)")
      ->required();
  auto* snr = e->add_option("--snr-db", ev.snr_db, "Single SNR in dB");
  e->add_option("--snr-grid", ev.snr_grid, "Comma-separated SNRs in dB")->excludes(snr);
  e->add_option("--out", ev.out, "JSONL results file; a .csv twin is written alongside");
  e->add_option("--tau-table", ev.tau_table, "Threshold table for per-class policies");

  SweepArgs sw;
  auto* s = app.add_subcommand("sweep", "Evaluate a policy x SNR grid");
  add_common(s, sw.common, "eval.seed");
  s->add_option("--checkpoint", sw.checkpoint, "Model checkpoint")->required();
  s->add_option("--policies", sw.policies, "Comma-separated policies")->delimiter(',')->required();
  s->add_option("--snr-grid", sw.snr_grid, "Comma-separated SNRs in dB (default eval.snr_grid)");
  s->add_option("--match-savings", sw.match_savings, "Tune each policy to this savings level");
  s->add_option("--jobs", sw.jobs, "Worker threads (default eval.jobs)");
  s->add_option("--out", sw.out, "JSONL results file; a .csv twin is written alongside");
  s->add_option("--tau-table", sw.tau_table, "Threshold table for per-class policies");
  s->add_option("--td-checkpoint", sw.td_checkpoints,
                "Extra stage-3 checkpoints offered to neural tuning (repeatable)");

  CalibrateArgs cal;
  auto* c = app.add_subcommand("calibrate", "Per-class threshold calibration");
  add_common(c, cal.common, "eval.seed");
  c->add_option("--checkpoint", cal.checkpoint, "Model checkpoint")->required();
  c->add_option("--accuracy-weight", cal.accuracy_weight, "Weight of accuracy vs savings");
  c->add_option("--split", cal.split, "Calibration split")->check(CLI::IsMember({"train", "test"}));
  c->add_flag("--use-gt-label", cal.use_gt_label, "Select thresholds by the true label");
  c->add_option("--out", cal.out, "Threshold table JSON");

  StatsArgs st;
  auto* sc = app.add_subcommand("stats", "Per-class early-exit confidence statistics");
  add_common(sc, st.common, "eval.seed");
  sc->add_option("--checkpoint", st.checkpoint, "Model checkpoint")->required();
  sc->add_option("--out", st.out, "CSV output");

  FlopsArgs fl;
  auto* f = app.add_subcommand("flops", "Per-part FLOPs table");
  add_common(f, fl.common, "eval.seed");
  f->add_option("--td-input-dim", fl.td_input_dim, "Decision-network input size override");

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex, out, err);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex, out, err);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex, out, err);
    return kExitConfig;
  }

  try {
    if (t->parsed()) return cmd_train(train, out);
    if (e->parsed()) return cmd_eval(ev, out);
    if (s->parsed()) return cmd_sweep(sw, out);
    if (c->parsed()) return cmd_calibrate(cal, out);
    if (sc->parsed()) return cmd_stats(st, out);
    if (f->parsed()) return cmd_flops(fl, out);
  } catch (const ConfigError& ex) {
    err << "config error: " << ex.what() << '\n';
    return kExitConfig;
  } catch (const ParseError& ex) {
    err << "parse error: " << ex.what() << '\n';
    return kExitConfig;
  } catch (const FormatError& ex) {
    err << "format error: " << ex.what() << '\n';
    return kExitConfig;
  } catch (const ValidationError& ex) {
    err << "invalid input: " << ex.what() << '\n';
    return kExitConfig;
  } catch (const NumericError& ex) {
    err << "numeric error: " << ex.what() << '\n';
    return kExitNumeric;
  } catch (const StateError& ex) {
    err << "state error: " << ex.what() << '\n';
    return kExitState;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace tdsim
