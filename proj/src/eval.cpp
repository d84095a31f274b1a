#include "tdsim/eval.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <thread>

#include "tdsim/errors.hpp"
#include "tdsim/nn.hpp"

namespace tdsim {

std::span<const double> ExitDump::early_row(std::size_t i) const {
  const std::size_t k = num_classes();
  return early_probs.data().subspan(i * k, k);
}

ExitDump compute_exits(const SplitClassifier& model, const Dataset& data, double snr_db,
                       std::uint64_t seed, std::size_t batch_size) {
  data.validate();
  if (batch_size == 0) throw ValidationError("batch size must be positive");
  NoGradGuard no_grad;
  const std::size_t n = data.size();
  const std::size_t k = model.backbone().num_classes;
  ExitDump dump;
  dump.snr_db = snr_db;
  dump.seed = seed;
  dump.labels = data.labels;
  dump.early_probs = Tensor({n, k});
  dump.final_probs = Tensor({n, k});
  Rng rng(seed);
  const double noise_var = snr_db_to_noise_var(snr_db, model.channel().power);
  std::vector<std::size_t> idx;
  for (std::size_t lo = 0; lo < n; lo += batch_size) {
    const std::size_t hi = std::min(n, lo + batch_size);
    idx.resize(hi - lo);
    for (std::size_t i = lo; i < hi; ++i) idx[i - lo] = i;
    const auto exits = model.forward_channel(Var(data.gather_inputs(idx)), noise_var, rng);
    std::copy(exits.early.value().vec().begin(), exits.early.value().vec().end(),
              dump.early_probs.data().begin() + static_cast<std::ptrdiff_t>(lo * k));
    std::copy(exits.final.value().vec().begin(), exits.final.value().vec().end(),
              dump.final_probs.data().begin() + static_cast<std::ptrdiff_t>(lo * k));
  }
  dump.pred_early = argmax_rows(dump.early_probs);
  dump.pred_final = argmax_rows(dump.final_probs);
  return dump;
}

nlohmann::ordered_json EvalRecord::to_json() const {
  nlohmann::ordered_json j;
  j["policy_id"] = policy_id;
  j["policy_params"] = nlohmann::ordered_json::object();
  for (const auto& [k, v] : policy_params) j["policy_params"][k] = v;
  j["snr_db"] = snr_db;
  j["accuracy"] = accuracy;
  j["savings"] = savings;
  j["n_samples"] = n_samples;
  j["seed"] = seed;
  return j;
}

EvalRecord EvalRecord::from_json(const nlohmann::json& j) {
  EvalRecord r;
  try {
    r.policy_id = j.at("policy_id").get<std::string>();
    r.policy_params = j.at("policy_params").get<std::map<std::string, double>>();
    r.snr_db = j.at("snr_db").get<double>();
    r.accuracy = j.at("accuracy").get<double>();
    r.savings = j.at("savings").get<double>();
    r.n_samples = j.at("n_samples").get<std::size_t>();
    r.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("eval record: ") + e.what());
  }
  return r;
}

std::vector<bool> policy_decisions(const ExitDump& dump, const TdPolicy& policy) {
  validate_policy(policy);
  Rng rng(mix_seed(dump.seed, 0xdec1de));
  std::vector<bool> keep(dump.size());
  for (std::size_t i = 0; i < dump.size(); ++i) {
    DecisionContext ctx{dump.early_row(i), dump.snr_db, dump.labels[i], dump.final_correct(i)};
    keep[i] = decide(policy, ctx, rng).keep_early;
  }
  return keep;
}

namespace {

EvalRecord record_from(const ExitDump& dump, const TdPolicy& policy,
                       const std::vector<bool>& keep) {
  if (dump.size() == 0) throw ValidationError("evaluation needs at least one sample");
  std::size_t kept = 0, correct = 0;
  for (std::size_t i = 0; i < dump.size(); ++i) {
    kept += keep[i];
    correct += keep[i] ? dump.early_correct(i) : dump.final_correct(i);
  }
  const double n = static_cast<double>(dump.size());
  return {policy_id(policy), policy_params(policy), dump.snr_db,  correct / n,
          kept / n,          dump.size(),           dump.seed};
}

// Runs fn(i) for i in [0, count) on up to `jobs` threads.
template <class Fn>
void parallel_for(std::size_t count, std::size_t jobs, Fn&& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, count));
  if (jobs == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(count);
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < jobs; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

EvalRecord evaluate(const ExitDump& dump, const TdPolicy& policy) {
  return record_from(dump, policy, policy_decisions(dump, policy));
}

EvalRecord evaluate(const SplitClassifier& model, const TdPolicy& policy, const Dataset& data,
                    double snr_db, std::uint64_t seed) {
  validate_policy(policy);
  return evaluate(compute_exits(model, data, snr_db, seed), policy);
}

std::uint64_t cell_seed(std::uint64_t base_seed, std::size_t snr_index) {
  return mix_seed(base_seed, snr_index);
}

std::vector<ExitDump> compute_exit_grid(const SplitClassifier& model, const Dataset& data,
                                        std::span<const double> snr_grid,
                                        std::uint64_t base_seed, std::size_t jobs) {
  std::vector<ExitDump> dumps(snr_grid.size());
  parallel_for(snr_grid.size(), jobs, [&](std::size_t s) {
    dumps[s] = compute_exits(model, data, snr_grid[s], cell_seed(base_seed, s));
  });
  return dumps;
}

std::vector<EvalRecord> sweep(const SplitClassifier& model, std::span<const TdPolicy> policies,
                              std::span<const double> snr_grid, const Dataset& data,
                              std::uint64_t base_seed, std::size_t jobs) {
  if (policies.empty()) throw ConfigError("sweep needs at least one policy");
  if (snr_grid.empty()) throw ConfigError("sweep needs at least one SNR");
  for (const auto& p : policies) validate_policy(p);
  const auto dumps = compute_exit_grid(model, data, snr_grid, base_seed, jobs);
  const std::size_t ns = snr_grid.size();
  std::vector<EvalRecord> out(policies.size() * ns);
  parallel_for(out.size(), jobs, [&](std::size_t c) {
    out[c] = evaluate(dumps[c % ns], policies[c / ns]);
  });
  return out;
}

// ---- tuning ---------------------------------------------------------------------------

const char* family_name(PolicyFamily f) {
  switch (f) {
    case PolicyFamily::Confidence: return "confidence";
    case PolicyFamily::Entropy: return "entropy";
    case PolicyFamily::Random: return "random";
    case PolicyFamily::PerClass: return "per_class";
    case PolicyFamily::Neural: return "neural";
  }
  return "?";
}

PolicyFamily parse_family(const std::string& name) {
  if (name == "confidence") return PolicyFamily::Confidence;
  if (name == "entropy") return PolicyFamily::Entropy;
  if (name == "random") return PolicyFamily::Random;
  if (name == "per_class" || name == "per_class_gt") return PolicyFamily::PerClass;
  if (name == "neural" || name.rfind("neural_", 0) == 0) return PolicyFamily::Neural;
  throw ConfigError("policy '" + name + "' has no tunable knob");
}

nlohmann::ordered_json TuneResult::to_json(double target, double tol) const {
  nlohmann::ordered_json j;
  j["policy_id"] = record.policy_id;
  j["snr_db"] = record.snr_db;
  j["target_savings"] = target;
  j["tol"] = tol;
  j["knob"] = knob;
  j["policy_params"] = nlohmann::ordered_json::object();
  for (const auto& [k, v] : record.policy_params) j["policy_params"][k] = v;
  j["achieved_savings"] = record.savings;
  j["accuracy"] = record.accuracy;
  j["reached"] = reached;
  j["iterations"] = iterations;
  return j;
}

namespace {

struct Knob {
  double lo, hi;
  std::function<TdPolicy(double)> make;
};

TuneResult finish(const ExitDump& dump, TdPolicy policy, double knob, double target, double tol,
                  int iterations) {
  TuneResult r{std::move(policy), knob, {}, false, iterations};
  r.record = evaluate(dump, r.policy);
  r.reached = std::abs(r.record.savings - target) <= tol;
  return r;
}

TuneResult bisect(const ExitDump& dump, const Knob& knob, bool increasing, double target,
                  double tol) {
  auto savings_at = [&](double x) { return evaluate(dump, knob.make(x)).savings; };
  int it = 0;
  double lo = knob.lo, hi = knob.hi;
  double s_lo = savings_at(lo);
  ++it;
  if (std::abs(s_lo - target) <= tol) return finish(dump, knob.make(lo), lo, target, tol, it);
  double s_hi = savings_at(hi);
  ++it;
  if (std::abs(s_hi - target) <= tol) return finish(dump, knob.make(hi), hi, target, tol, it);
  // Orient so that savings rises from lo to hi.
  auto below = [&](double s) { return increasing ? s < target : s > target; };
  if (!below(s_lo) || below(s_hi)) {
    const double best = std::abs(s_lo - target) <= std::abs(s_hi - target) ? lo : hi;
    return finish(dump, knob.make(best), best, target, tol, it);
  }
  double best = std::abs(s_lo - target) <= std::abs(s_hi - target) ? lo : hi;
  double best_err = std::min(std::abs(s_lo - target), std::abs(s_hi - target));
  for (int i = 0; i < 60; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (mid == lo || mid == hi) break;
    const double s = savings_at(mid);
    ++it;
    if (std::abs(s - target) < best_err) {
      best = mid;
      best_err = std::abs(s - target);
    }
    if (best_err <= tol) break;
    (below(s) ? lo : hi) = mid;
  }
  return finish(dump, knob.make(best), best, target, tol, it);
}

}  // namespace

TuneResult tune_to_target_savings(const ExitDump& dump, PolicyFamily family, double target,
                                  double tol, const TuneInputs& inputs) {
  if (!(target >= 0.0 && target <= 1.0)) throw ValidationError("target savings must lie in [0,1]");
  if (!(tol >= 0.0)) throw ValidationError("tolerance must be >= 0");
  if (dump.size() == 0) throw ValidationError("tuning needs a non-empty dump");
  switch (family) {
    case PolicyFamily::Confidence: {
      double max_conf = 0.0;
      for (std::size_t i = 0; i < dump.size(); ++i) {
        max_conf = std::max(max_conf, confidence(dump.early_row(i)));
      }
      const double hi = std::min(1.0, std::nextafter(max_conf, 2.0));
      return bisect(dump, {0.0, hi, [](double t) { return TdPolicy{ConfidencePolicy{t}}; }},
                    false, target, tol);
    }
    case PolicyFamily::Entropy: {
      const double hi = std::log2(static_cast<double>(dump.num_classes()));
      return bisect(dump, {0.0, hi, [](double e) { return TdPolicy{EntropyPolicy{e}}; }}, true,
                    target, tol);
    }
    case PolicyFamily::Random:
      return bisect(dump, {0.0, 1.0, [](double p) { return TdPolicy{RandomPolicy{p}}; }}, true,
                    target, tol);
    case PolicyFamily::PerClass: {
      if (inputs.calibration.empty() || inputs.calibration_grid.empty()) {
        throw StateError("per-class tuning needs calibration samples and an SNR grid");
      }
      const std::size_t k = dump.num_classes();
      auto make = [&inputs, k](double w) {
        auto table = std::make_shared<ThresholdTable>(
            calibrate_per_class(inputs.calibration, inputs.calibration_grid, w, k));
        return TdPolicy{PerClassPolicy{std::move(table), inputs.select}};
      };
      // A larger accuracy weight favours higher thresholds and fewer early exits.
      return bisect(dump, {0.0, 1.0, make}, false, target, tol);
    }
    case PolicyFamily::Neural: {
      if (inputs.nets.empty()) throw StateError("neural tuning needs at least one network");
      std::size_t best = 0;
      double best_err = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < inputs.nets.size(); ++i) {
        const double err = std::abs(evaluate(dump, inputs.nets[i]).savings - target);
        if (err < best_err) {
          best = i;
          best_err = err;
        }
      }
      return finish(dump, inputs.nets[best], static_cast<double>(best), target, tol,
                    static_cast<int>(inputs.nets.size()));
    }
  }
  throw ValidationError("unknown policy family");
}

TuneResult tune_to_target_savings(const SplitClassifier& model, const Dataset& data,
                                  PolicyFamily family, double target, double snr_db,
                                  std::uint64_t seed, double tol, const TuneInputs& inputs) {
  return tune_to_target_savings(compute_exits(model, data, snr_db, seed), family, target, tol,
                                inputs);
}

// ---- statistics -------------------------------------------------------------------------

ConfidenceStats confidence_class_stats(const Tensor& early_probs, std::span<const int> labels,
                                       std::size_t num_classes) {
  if (early_probs.rank() != 2 || early_probs.dim(0) != labels.size() ||
      early_probs.dim(1) != num_classes) {
    throw DimensionError("confidence stats: probabilities " + shape_str(early_probs.shape()) +
                         " do not match " + std::to_string(labels.size()) + " labels and " +
                         std::to_string(num_classes) + " classes");
  }
  std::vector<double> sum_c(num_classes), sum_i(num_classes);
  ConfidenceStats stats(num_classes);
  const auto pred = argmax_rows(early_probs);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
      throw ValidationError("label " + std::to_string(y) + " out of range");
    }
    const double c = confidence(early_probs.data().subspan(i * num_classes, num_classes));
    auto& row = stats[static_cast<std::size_t>(y)];
    if (pred[i] == y) {
      sum_c[static_cast<std::size_t>(y)] += c;
      ++row.n_correct;
    } else {
      sum_i[static_cast<std::size_t>(y)] += c;
      ++row.n_incorrect;
    }
  }
  for (std::size_t k = 0; k < num_classes; ++k) {
    auto& row = stats[k];
    row.cls = static_cast<int>(k);
    if (row.n_correct) row.mean_conf_correct = sum_c[k] / static_cast<double>(row.n_correct);
    if (row.n_incorrect) {
      row.mean_conf_incorrect = sum_i[k] / static_cast<double>(row.n_incorrect);
    }
  }
  return stats;
}

ConfidenceStats confidence_class_stats(const SplitClassifier& model, const Dataset& data) {
  data.validate();
  NoGradGuard no_grad;
  const std::size_t n = data.size();
  const std::size_t k = model.backbone().num_classes;
  Tensor probs({n, k});
  std::vector<std::size_t> idx;
  for (std::size_t lo = 0; lo < n; lo += 256) {
    const std::size_t hi = std::min(n, lo + 256);
    idx.resize(hi - lo);
    for (std::size_t i = lo; i < hi; ++i) idx[i - lo] = i;
    const auto p = model.early_exit(model.forward_edge(Var(data.gather_inputs(idx))));
    std::copy(p.value().vec().begin(), p.value().vec().end(),
              probs.data().begin() + static_cast<std::ptrdiff_t>(lo * k));
  }
  return confidence_class_stats(probs, data.labels, k);
}

double expected_random_accuracy(double acc_early, double acc_final, double p) {
  for (double v : {acc_early, acc_final, p}) {
    if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("inputs must lie in [0,1]");
  }
  return p * acc_early + (1.0 - p) * acc_final;
}

std::vector<CalibrationSample> calibration_samples(std::span<const ExitDump> dumps) {
  std::vector<CalibrationSample> out;
  for (const auto& d : dumps) {
    for (std::size_t i = 0; i < d.size(); ++i) {
      out.push_back({d.pred_early[i], confidence(d.early_row(i)), d.early_correct(i),
                     d.final_correct(i), d.snr_db});
    }
  }
  return out;
}

// ---- serialisation -------------------------------------------------------------------------

namespace {

std::ofstream open_append(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::app);
  if (!out) throw ConfigError("cannot open " + path.string() + " for writing");
  return out;
}

// Shortest text that reads back to the same double.
std::string fmt(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

void append_jsonl(const std::filesystem::path& path, std::span<const EvalRecord> records) {
  auto out = open_append(path);
  for (const auto& r : records) out << r.to_json().dump() << '\n';
}

void append_csv(const std::filesystem::path& path, std::span<const EvalRecord> records) {
  const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  auto out = open_append(path);
  if (fresh) out << kEvalCsvHeader << '\n';
  for (const auto& r : records) {
    out << r.policy_id << ',' << fmt(r.snr_db) << ',' << fmt(r.accuracy) << ','
        << fmt(r.savings) << ',' << r.n_samples << ',' << r.seed << '\n';
  }
}

std::vector<EvalRecord> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::vector<EvalRecord> out;
  std::string line;
  std::size_t no = 0;
  while (std::getline(in, line)) {
    ++no;
    if (line.empty()) continue;
    try {
      out.push_back(EvalRecord::from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw ParseError(no, e.what());
    }
  }
  return out;
}

void write_stats_csv(const std::filesystem::path& path, const ConfidenceStats& stats) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot open " + path.string() + " for writing");
  out << kStatsCsvHeader << '\n';
  auto opt = [](const std::optional<double>& v) { return v ? fmt(*v) : std::string("NA"); };
  for (const auto& row : stats) {
    out << row.cls << ',' << opt(row.mean_conf_correct) << ',' << opt(row.mean_conf_incorrect)
        << ',' << row.n_correct << ',' << row.n_incorrect << '\n';
  }
}

nlohmann::ordered_json threshold_table_to_json(const ThresholdTable& table) {
  nlohmann::ordered_json j;
  j["accuracy_weight"] = table.accuracy_weight;
  j["snr_grid"] = table.snr_grid;
  j["tau"] = table.tau;
  j["global_tau"] = table.global_tau;
  j["fallback_classes"] = table.fallback_classes;
  return j;
}

ThresholdTable threshold_table_from_json(const nlohmann::json& j) {
  ThresholdTable t;
  try {
    t.accuracy_weight = j.at("accuracy_weight").get<double>();
    t.snr_grid = j.at("snr_grid").get<std::vector<double>>();
    t.tau = j.at("tau").get<std::vector<std::vector<double>>>();
    t.global_tau = j.at("global_tau").get<std::vector<double>>();
    t.fallback_classes = j.at("fallback_classes").get<std::vector<int>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("threshold table: ") + e.what());
  }
  for (const auto& row : t.tau) {
    if (row.size() != t.snr_grid.size()) {
      throw FormatError("threshold table row does not cover the SNR grid");
    }
  }
  return t;
}

}  // namespace tdsim
