#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "tdsim/channel.hpp"
#include "tdsim/tensor.hpp"

namespace tdsim {

// keep_early == true: accept the early-exit prediction on the device.
// keep_early == false: transmit features to the server.
struct Decision {
  bool keep_early = true;
  bool operator==(const Decision&) const = default;
};

double confidence(std::span<const double> probs);

// Shannon entropy in bits, with 0 * log2(0) taken as 0.
double entropy_bits(std::span<const double> probs);

// keep_early <=> confidence >= tau
Decision decide_confidence(std::span<const double> probs, double tau);

// keep_early <=> entropy <= eta
Decision decide_entropy(std::span<const double> probs, double eta);

// transmit <=> early wrong and final right
Decision gt_decision(bool early_correct, bool final_correct);

Decision decide_random(double p, Rng& rng);

// ---- per-class thresholds -------------------------------------------------

struct CalibrationSample {
  int class_pred_early = 0;
  double confidence = 0.0;
  bool early_correct = false;
  bool final_correct = false;
  double snr_db = 0.0;
};

// Candidate thresholds 0.00, 0.05, ..., 1.00.
std::vector<double> threshold_candidates();

struct ThresholdTable {
  std::vector<double> snr_grid;
  std::vector<std::vector<double>> tau;  // [class][snr index]
  std::vector<int> fallback_classes;     // classes absent from calibration data
  std::vector<double> global_tau;        // per snr index, used for fallbacks
  double accuracy_weight = 0.5;

  std::size_t num_classes() const { return tau.size(); }
  // Nearest grid point; equidistant points resolve to the lower SNR.
  std::size_t nearest_snr_index(double snr_db) const;
  double threshold(int cls, double snr_db) const;

  static ThresholdTable constant(std::size_t num_classes, std::vector<double> snr_grid, double tau);
};

// Chooses, for every (class, snr grid point), the candidate threshold that
// maximises w * accuracy + (1 - w) * savings over the calibration samples
// whose predicted class is that class and whose SNR is nearest that point.
// Among equal objectives a larger threshold wins only if it changes at least
// one decision; candidates inducing identical decisions collapse to the
// smallest.
ThresholdTable calibrate_per_class(std::span<const CalibrationSample> samples,
                                   std::span<const double> snr_grid, double accuracy_weight,
                                   std::size_t num_classes);

enum class ThresholdSelect { ArgmaxClass, GroundTruth };

Decision decide_per_class(std::span<const double> probs, double snr_db, const ThresholdTable& table,
                          ThresholdSelect select = ThresholdSelect::ArgmaxClass,
                          int ground_truth = -1);

// ---- decision network -----------------------------------------------------

enum class TdFeature : unsigned { CP = 1, C = 2, E = 4, SNR = 8 };

struct TdFeatureSet {
  unsigned bits = 0;

  static TdFeatureSet all() { return {15}; }
  bool has(TdFeature f) const { return (bits & static_cast<unsigned>(f)) != 0; }
  TdFeatureSet with(TdFeature f) const { return {bits | static_cast<unsigned>(f)}; }
  bool empty() const { return bits == 0; }

  // "CP+C+E+SNR" style label, fixed order.
  std::string label() const;
  static TdFeatureSet parse(const std::vector<std::string>& names);
  std::vector<std::string> names() const;
};

struct TdNnConfig {
  TdFeatureSet features = TdFeatureSet::all();
  std::size_t hidden = 256;
  double temperature = 10.0;
  std::size_t num_classes = 10;

  std::size_t input_dim() const;
  void validate() const;
};

// Concatenates [CP?, C?, E?, SNR/10?] in that order.
Tensor assemble_td_inputs(std::span<const double> probs, double snr_db, const TdNnConfig& cfg);

// Same for a batch of probability rows [N,K] and per-row SNRs.
Tensor assemble_td_inputs_batch(const Tensor& probs, std::span<const double> snr_db,
                                const TdNnConfig& cfg);

inline double tempered_sigmoid(double raw, double temperature) {
  return 1.0 / (1.0 + std::exp(-temperature * raw));
}

// Three linear layers n -> hidden -> hidden -> 1 with ReLU in between.
class TdNet {
 public:
  TdNet(TdNnConfig cfg, std::uint64_t seed);

  TdNet(TdNet&&) = default;
  TdNet& operator=(TdNet&&) = default;
  TdNet(const TdNet&) = delete;
  TdNet& operator=(const TdNet&) = delete;
  TdNet clone() const;

  const TdNnConfig& config() const noexcept { return cfg_; }
  ParamRegistry& params() { return params_; }
  const ParamRegistry& params() const { return params_; }

  bool trained() const noexcept { return trained_; }
  void mark_trained(bool on = true) { trained_ = on; }

  // Raw output D_hat, shape [N,1].
  Var raw(const Var& inputs) const;
  // Tempered sigmoid of raw, shape [N,1].
  Var soft(const Var& inputs) const;

  struct Output {
    double d_soft;
    Decision decision;
  };
  // Inference for one input vector; rounds d_soft (0.5 keeps early).
  Output decide(std::span<const double> inputs) const;

 private:
  TdNnConfig cfg_;
  ParamRegistry params_;
  bool trained_ = false;
};

// ---- policy -------------------------------------------------------------

struct ConfidencePolicy {
  double tau = 0.5;
};
struct EntropyPolicy {
  double eta = 1.0;
};
struct PerClassPolicy {
  std::shared_ptr<const ThresholdTable> table;
  ThresholdSelect select = ThresholdSelect::ArgmaxClass;
};
struct RandomPolicy {
  double p = 0.5;
};
struct AlwaysEarlyPolicy {};
struct AlwaysFinalPolicy {};
struct GtOraclePolicy {};
struct NeuralPolicy {
  std::shared_ptr<const TdNet> net;
  std::string tag;  // free-form identifier, e.g. the training criterion
};

using TdPolicy = std::variant<ConfidencePolicy, EntropyPolicy, PerClassPolicy, RandomPolicy,
                              AlwaysEarlyPolicy, AlwaysFinalPolicy, GtOraclePolicy, NeuralPolicy>;

void validate_policy(const TdPolicy& policy);
std::string policy_id(const TdPolicy& policy);
std::map<std::string, double> policy_params(const TdPolicy& policy);

// Everything a policy may look at for one sample. final_correct and label
// are analysis-only inputs (oracle and ground-truth threshold selection).
struct DecisionContext {
  std::span<const double> early_probs;
  double snr_db = 0.0;
  int label = -1;
  bool final_correct = false;
};

Decision decide(const TdPolicy& policy, const DecisionContext& ctx, Rng& rng);

}  // namespace tdsim
