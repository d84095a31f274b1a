#include "tdsim/td_policy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "tdsim/errors.hpp"
#include "tdsim/nn.hpp"

namespace tdsim {

double confidence(std::span<const double> probs) {
  if (probs.empty()) throw ValidationError("confidence of empty probability vector");
  return *std::max_element(probs.begin(), probs.end());
}

double entropy_bits(std::span<const double> probs) {
  double h = 0.0;
  for (double p : probs) {
    if (p > 0.0) h -= p * std::log2(p);
  }
  return h;
}

Decision decide_confidence(std::span<const double> probs, double tau) {
  return {confidence(probs) >= tau};
}

Decision decide_entropy(std::span<const double> probs, double eta) {
  return {entropy_bits(probs) <= eta};
}

Decision gt_decision(bool early_correct, bool final_correct) {
  return {!(!early_correct && final_correct)};
}

Decision decide_random(double p, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  return {u(rng) < p};
}

// ---- per-class thresholds ---------------------------------------------------

std::vector<double> threshold_candidates() {
  std::vector<double> out;
  for (int i = 0; i <= 20; ++i) out.push_back(i / 20.0);
  return out;
}

std::size_t ThresholdTable::nearest_snr_index(double snr_db) const {
  if (snr_grid.empty()) throw StateError("threshold table has no SNR grid");
  std::size_t best = 0;
  double best_dist = std::abs(snr_grid[0] - snr_db);
  for (std::size_t i = 1; i < snr_grid.size(); ++i) {
    const double d = std::abs(snr_grid[i] - snr_db);
    if (d < best_dist || (d == best_dist && snr_grid[i] < snr_grid[best])) {
      best = i;
      best_dist = d;
    }
  }
  return best;
}

double ThresholdTable::threshold(int cls, double snr_db) const {
  if (cls < 0 || static_cast<std::size_t>(cls) >= tau.size()) {
    throw ValidationError("class " + std::to_string(cls) + " not covered by threshold table");
  }
  return tau[static_cast<std::size_t>(cls)][nearest_snr_index(snr_db)];
}

ThresholdTable ThresholdTable::constant(std::size_t num_classes, std::vector<double> snr_grid,
                                        double t) {
  ThresholdTable table;
  table.tau.assign(num_classes, std::vector<double>(snr_grid.size(), t));
  table.global_tau.assign(snr_grid.size(), t);
  table.snr_grid = std::move(snr_grid);
  return table;
}

namespace {

struct GroupChoice {
  double tau;
  double objective;
};

// Best candidate threshold over one group of samples.
GroupChoice best_threshold(const std::vector<const CalibrationSample*>& group, double w) {
  const double n = static_cast<double>(group.size());
  GroupChoice best{0.0, -std::numeric_limits<double>::infinity()};
  std::size_t best_kept = 0;
  for (double tau : threshold_candidates()) {
    std::size_t kept = 0, correct = 0;
    for (const auto* s : group) {
      const bool keep = s->confidence >= tau;
      kept += keep;
      correct += keep ? s->early_correct : s->final_correct;
    }
    const double obj = w * (static_cast<double>(correct) / n) +
                       (1.0 - w) * (static_cast<double>(kept) / n);
    const bool better = obj > best.objective + 1e-12;
    const bool tie_new_decisions = std::abs(obj - best.objective) <= 1e-12 && kept != best_kept;
    if (better || tie_new_decisions) {
      best = {tau, obj};
      best_kept = kept;
    }
  }
  return best;
}

}  // namespace

ThresholdTable calibrate_per_class(std::span<const CalibrationSample> samples,
                                   std::span<const double> snr_grid, double accuracy_weight,
                                   std::size_t num_classes) {
  if (snr_grid.empty()) throw ValidationError("calibration needs a non-empty SNR grid");
  if (!(accuracy_weight >= 0.0 && accuracy_weight <= 1.0)) {
    throw ValidationError("accuracy weight must lie in [0,1]");
  }
  if (samples.empty()) throw ValidationError("calibration needs at least one sample");
  ThresholdTable table;
  table.snr_grid.assign(snr_grid.begin(), snr_grid.end());
  table.accuracy_weight = accuracy_weight;
  const std::size_t ns = snr_grid.size();

  std::vector<std::vector<std::vector<const CalibrationSample*>>> groups(
      num_classes, std::vector<std::vector<const CalibrationSample*>>(ns));
  std::vector<std::vector<const CalibrationSample*>> by_snr(ns);
  std::vector<const CalibrationSample*> everything;
  for (const auto& s : samples) {
    if (s.class_pred_early < 0 || static_cast<std::size_t>(s.class_pred_early) >= num_classes) {
      throw ValidationError("calibration sample class " + std::to_string(s.class_pred_early) +
                            " out of range");
    }
    const std::size_t si = table.nearest_snr_index(s.snr_db);
    groups[static_cast<std::size_t>(s.class_pred_early)][si].push_back(&s);
    by_snr[si].push_back(&s);
    everything.push_back(&s);
  }

  table.global_tau.resize(ns);
  for (std::size_t si = 0; si < ns; ++si) {
    table.global_tau[si] =
        best_threshold(by_snr[si].empty() ? everything : by_snr[si], accuracy_weight).tau;
  }
  table.tau.assign(num_classes, std::vector<double>(ns, 0.0));
  for (std::size_t c = 0; c < num_classes; ++c) {
    bool fell_back = false;
    for (std::size_t si = 0; si < ns; ++si) {
      if (groups[c][si].empty()) {
        table.tau[c][si] = table.global_tau[si];
        fell_back = true;
      } else {
        table.tau[c][si] = best_threshold(groups[c][si], accuracy_weight).tau;
      }
    }
    if (fell_back) table.fallback_classes.push_back(static_cast<int>(c));
  }
  return table;
}

Decision decide_per_class(std::span<const double> probs, double snr_db, const ThresholdTable& table,
                          ThresholdSelect select, int ground_truth) {
  int cls = 0;
  if (select == ThresholdSelect::GroundTruth) {
    if (ground_truth < 0) throw ValidationError("ground-truth threshold selection needs a label");
    cls = ground_truth;
  } else {
    cls = static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
  }
  return decide_confidence(probs, table.threshold(cls, snr_db));
}

// ---- decision network ---------------------------------------------------------

std::string TdFeatureSet::label() const {
  std::string out;
  for (const auto& n : names()) out += (out.empty() ? "" : "+") + n;
  return out;
}

std::vector<std::string> TdFeatureSet::names() const {
  std::vector<std::string> out;
  if (has(TdFeature::CP)) out.emplace_back("CP");
  if (has(TdFeature::C)) out.emplace_back("C");
  if (has(TdFeature::E)) out.emplace_back("E");
  if (has(TdFeature::SNR)) out.emplace_back("SNR");
  return out;
}

TdFeatureSet TdFeatureSet::parse(const std::vector<std::string>& names) {
  TdFeatureSet set;
  for (const auto& n : names) {
    if (n == "CP") {
      set = set.with(TdFeature::CP);
    } else if (n == "C") {
      set = set.with(TdFeature::C);
    } else if (n == "E") {
      set = set.with(TdFeature::E);
    } else if (n == "SNR") {
      set = set.with(TdFeature::SNR);
    } else {
      throw ConfigError("unknown decision-network input '" + n + "' (expected CP, C, E, SNR)");
    }
  }
  return set;
}

std::size_t TdNnConfig::input_dim() const {
  return (features.has(TdFeature::CP) ? num_classes : 0) + features.has(TdFeature::C) +
         features.has(TdFeature::E) + features.has(TdFeature::SNR);
}

void TdNnConfig::validate() const {
  if (features.empty()) throw ConfigError("decision-network input feature set is empty");
  if (hidden == 0) throw ConfigError("decision-network hidden width must be positive");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be > 0");
  if (num_classes < 2) throw ConfigError("decision network needs num_classes >= 2");
}

Tensor assemble_td_inputs(std::span<const double> probs, double snr_db, const TdNnConfig& cfg) {
  if (cfg.features.empty()) throw ConfigError("decision-network input feature set is empty");
  if (probs.size() != cfg.num_classes) {
    throw DimensionError("assemble_td_inputs: got " + std::to_string(probs.size()) +
                         " probabilities, expected " + std::to_string(cfg.num_classes));
  }
  std::vector<double> v;
  v.reserve(cfg.input_dim());
  if (cfg.features.has(TdFeature::CP)) v.insert(v.end(), probs.begin(), probs.end());
  if (cfg.features.has(TdFeature::C)) v.push_back(confidence(probs));
  if (cfg.features.has(TdFeature::E)) v.push_back(entropy_bits(probs));
  if (cfg.features.has(TdFeature::SNR)) v.push_back(snr_db / 10.0);
  const std::size_t n = v.size();
  return Tensor({n}, std::move(v));
}

Tensor assemble_td_inputs_batch(const Tensor& probs, std::span<const double> snr_db,
                                const TdNnConfig& cfg) {
  const std::size_t n = probs.dim(0), k = probs.dim(1);
  if (snr_db.size() != n) throw DimensionError("assemble_td_inputs_batch: SNR count mismatch");
  const std::size_t dim = cfg.input_dim();
  Tensor out({n, dim});
  for (std::size_t r = 0; r < n; ++r) {
    auto row = assemble_td_inputs(probs.data().subspan(r * k, k), snr_db[r], cfg);
    std::copy(row.data().begin(), row.data().end(), out.data().begin() + r * dim);
  }
  return out;
}

TdNet::TdNet(TdNnConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(mix_seed(seed, 0x7d));
  const std::size_t dims[] = {cfg_.input_dim(), cfg_.hidden, cfg_.hidden, 1};
  for (std::size_t l = 0; l < 3; ++l) {
    const double gain = l < 2 ? std::sqrt(2.0) : 1.0;
    Tensor w({dims[l], dims[l + 1]});
    std::normal_distribution<double> g(0.0, gain / std::sqrt(static_cast<double>(dims[l])));
    for (auto& v : w.data()) v = g(rng);
    params_.add("td.fc" + std::to_string(l) + ".weight", Var(std::move(w), true));
    params_.add("td.fc" + std::to_string(l) + ".bias", Var(Tensor({dims[l + 1]}, 0.0), true));
  }
}

TdNet TdNet::clone() const {
  TdNet out(cfg_, 0);
  out.params_ = ParamRegistry{};
  for (const auto& [name, p] : params_) out.params_.add(name, p.detached_copy());
  out.trained_ = trained_;
  return out;
}

Var TdNet::raw(const Var& inputs) const {
  Var x = inputs;
  for (std::size_t l = 0; l < 3; ++l) {
    const std::string name = "td.fc" + std::to_string(l);
    x = linear(x, params_.at(name + ".weight"), params_.at(name + ".bias"));
    if (l < 2) x = relu(x);
  }
  return x;
}

Var TdNet::soft(const Var& inputs) const { return sigmoid(scale(raw(inputs), cfg_.temperature)); }

TdNet::Output TdNet::decide(std::span<const double> inputs) const {
  if (!trained_) throw StateError("decision network has no trained parameters");
  if (inputs.size() != cfg_.input_dim()) {
    throw DimensionError("decision network expects " + std::to_string(cfg_.input_dim()) +
                         " inputs, got " + std::to_string(inputs.size()));
  }
  NoGradGuard guard;
  Var x(Tensor({1, inputs.size()}, std::vector<double>(inputs.begin(), inputs.end())));
  const double r = raw(x).value()[0];
  // round(sigmoid(T r)) with 0.5 -> 1 is exactly r >= 0.
  return {tempered_sigmoid(r, cfg_.temperature), Decision{r >= 0.0}};
}

// ---- policy ---------------------------------------------------------------------

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

}  // namespace

void validate_policy(const TdPolicy& policy) {
  std::visit(overloaded{
                 [](const ConfidencePolicy& p) {
                   if (!(p.tau >= 0.0 && p.tau <= 1.0)) {
                     throw ValidationError("confidence threshold must lie in [0,1]");
                   }
                 },
                 [](const EntropyPolicy& p) {
                   if (!(p.eta >= 0.0)) throw ValidationError("entropy threshold must be >= 0");
                 },
                 [](const PerClassPolicy& p) {
                   if (!p.table) throw StateError("per-class policy without a threshold table");
                 },
                 [](const RandomPolicy& p) {
                   if (!(p.p >= 0.0 && p.p <= 1.0)) {
                     throw ValidationError("random keep probability must lie in [0,1]");
                   }
                 },
                 [](const NeuralPolicy& p) {
                   if (!p.net || !p.net->trained()) {
                     throw StateError("neural policy needs a trained decision network");
                   }
                 },
                 [](const auto&) {},
             },
             policy);
}

std::string policy_id(const TdPolicy& policy) {
  return std::visit(
      overloaded{
          [](const ConfidencePolicy&) -> std::string { return "confidence"; },
          [](const EntropyPolicy&) -> std::string { return "entropy"; },
          [](const PerClassPolicy& p) -> std::string {
            return p.select == ThresholdSelect::GroundTruth ? "per_class_gt" : "per_class";
          },
          [](const RandomPolicy&) -> std::string { return "random"; },
          [](const AlwaysEarlyPolicy&) -> std::string { return "always_early"; },
          [](const AlwaysFinalPolicy&) -> std::string { return "always_final"; },
          [](const GtOraclePolicy&) -> std::string { return "gt_oracle"; },
          [](const NeuralPolicy& p) -> std::string {
            return p.tag.empty() ? "neural" : "neural_" + p.tag;
          },
      },
      policy);
}

std::map<std::string, double> policy_params(const TdPolicy& policy) {
  return std::visit(
      overloaded{
          [](const ConfidencePolicy& p) -> std::map<std::string, double> {
            return {{"tau", p.tau}};
          },
          [](const EntropyPolicy& p) -> std::map<std::string, double> {
            return {{"eta", p.eta}};
          },
          [](const PerClassPolicy& p) -> std::map<std::string, double> {
            return {{"accuracy_weight", p.table ? p.table->accuracy_weight : 0.0}};
          },
          [](const RandomPolicy& p) -> std::map<std::string, double> { return {{"p", p.p}}; },
          [](const NeuralPolicy& p) -> std::map<std::string, double> {
            return {{"temperature", p.net ? p.net->config().temperature : 0.0}};
          },
          [](const auto&) -> std::map<std::string, double> { return {}; },
      },
      policy);
}

Decision decide(const TdPolicy& policy, const DecisionContext& ctx, Rng& rng) {
  return std::visit(
      overloaded{
          [&](const ConfidencePolicy& p) { return decide_confidence(ctx.early_probs, p.tau); },
          [&](const EntropyPolicy& p) { return decide_entropy(ctx.early_probs, p.eta); },
          [&](const PerClassPolicy& p) {
            return decide_per_class(ctx.early_probs, ctx.snr_db, *p.table, p.select, ctx.label);
          },
          [&](const RandomPolicy& p) { return decide_random(p.p, rng); },
          [&](const AlwaysEarlyPolicy&) { return Decision{true}; },
          [&](const AlwaysFinalPolicy&) { return Decision{false}; },
          [&](const GtOraclePolicy&) {
            if (ctx.label < 0) throw ValidationError("oracle decision needs a label");
            const auto pred = std::max_element(ctx.early_probs.begin(), ctx.early_probs.end()) -
                              ctx.early_probs.begin();
            return gt_decision(pred == ctx.label, ctx.final_correct);
          },
          [&](const NeuralPolicy& p) {
            const auto in = assemble_td_inputs(ctx.early_probs, ctx.snr_db, p.net->config());
            return p.net->decide(in.data()).decision;
          },
      },
      policy);
}

}  // namespace tdsim
