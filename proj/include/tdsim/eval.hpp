#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tdsim/data_io.hpp"
#include "tdsim/split_model.hpp"
#include "tdsim/td_policy.hpp"

namespace tdsim {

// Both exits for every sample of a dataset at one SNR. The channel noise is
// drawn from `seed` in sample order, so every policy evaluated on the same
// dump sees the same channel realisation.
struct ExitDump {
  double snr_db = 0.0;
  std::uint64_t seed = 0;
  Tensor early_probs;  // [N,K]
  Tensor final_probs;  // [N,K]
  std::vector<int> labels;
  std::vector<int> pred_early;
  std::vector<int> pred_final;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t num_classes() const { return early_probs.dim(1); }
  std::span<const double> early_row(std::size_t i) const;
  bool early_correct(std::size_t i) const { return pred_early[i] == labels[i]; }
  bool final_correct(std::size_t i) const { return pred_final[i] == labels[i]; }
};

ExitDump compute_exits(const SplitClassifier& model, const Dataset& data, double snr_db,
                       std::uint64_t seed, std::size_t batch_size = 256);

struct EvalRecord {
  std::string policy_id;
  std::map<std::string, double> policy_params;
  double snr_db = 0.0;
  double accuracy = 0.0;
  double savings = 0.0;
  std::size_t n_samples = 0;
  std::uint64_t seed = 0;

  nlohmann::ordered_json to_json() const;
  static EvalRecord from_json(const nlohmann::json& j);
  bool operator==(const EvalRecord&) const = default;
};

// Per-sample decisions of a policy on a dump (true = keep early).
std::vector<bool> policy_decisions(const ExitDump& dump, const TdPolicy& policy);

EvalRecord evaluate(const ExitDump& dump, const TdPolicy& policy);
EvalRecord evaluate(const SplitClassifier& model, const TdPolicy& policy, const Dataset& data,
                    double snr_db, std::uint64_t seed);

// Seed of the channel realisation for snr grid point `snr_index`.
std::uint64_t cell_seed(std::uint64_t base_seed, std::size_t snr_index);

// Records in policy-major order: for each policy, every SNR of the grid.
// Cells are computed on up to `jobs` threads; the result does not depend on
// `jobs`.
std::vector<EvalRecord> sweep(const SplitClassifier& model, std::span<const TdPolicy> policies,
                              std::span<const double> snr_grid, const Dataset& data,
                              std::uint64_t base_seed, std::size_t jobs = 1);

// One dump per grid point, computed on up to `jobs` threads.
std::vector<ExitDump> compute_exit_grid(const SplitClassifier& model, const Dataset& data,
                                        std::span<const double> snr_grid,
                                        std::uint64_t base_seed, std::size_t jobs = 1);

// ---- matched-savings tuning --------------------------------------------------

enum class PolicyFamily { Confidence, Entropy, Random, PerClass, Neural };

const char* family_name(PolicyFamily f);
PolicyFamily parse_family(const std::string& name);

struct TuneInputs {
  // PerClass: calibration samples and grid; the knob is the accuracy weight.
  std::vector<CalibrationSample> calibration;
  std::vector<double> calibration_grid;
  ThresholdSelect select = ThresholdSelect::ArgmaxClass;
  // Neural: the candidate networks, e.g. one per transmission penalty.
  std::vector<NeuralPolicy> nets;
};

struct TuneResult {
  TdPolicy policy;
  double knob = 0.0;
  EvalRecord record;
  bool reached = false;  // |savings - target| <= tol
  int iterations = 0;

  nlohmann::ordered_json to_json(double target, double tol) const;
};

// Bisection over the family's scalar knob against the dump. The low end of
// the knob range is tried first, then the high end; if the target is outside
// the achieved range the closer boundary is returned with reached = false.
TuneResult tune_to_target_savings(const ExitDump& dump, PolicyFamily family, double target,
                                  double tol = 0.02, const TuneInputs& inputs = {});

TuneResult tune_to_target_savings(const SplitClassifier& model, const Dataset& data,
                                  PolicyFamily family, double target, double snr_db,
                                  std::uint64_t seed, double tol = 0.02,
                                  const TuneInputs& inputs = {});

// ---- statistics -----------------------------------------------------------------

struct ClassConfidence {
  int cls = 0;
  std::optional<double> mean_conf_correct;
  std::optional<double> mean_conf_incorrect;
  std::size_t n_correct = 0;
  std::size_t n_incorrect = 0;
};

using ConfidenceStats = std::vector<ClassConfidence>;

// Grouped by true label; one row per class in [0, K).
ConfidenceStats confidence_class_stats(const Tensor& early_probs, std::span<const int> labels,
                                       std::size_t num_classes);
// Early exit of the model (no channel involved) on every sample.
ConfidenceStats confidence_class_stats(const SplitClassifier& model, const Dataset& data);

double expected_random_accuracy(double acc_early, double acc_final, double p);

// Calibration samples drawn from a set of dumps.
std::vector<CalibrationSample> calibration_samples(std::span<const ExitDump> dumps);

// ---- serialisation ------------------------------------------------------------------

inline constexpr const char* kEvalCsvHeader = "policy_id,snr_db,accuracy,savings,n_samples,seed";
inline constexpr const char* kStatsCsvHeader =
    "class,mean_conf_correct,mean_conf_incorrect,n_correct,n_incorrect";

void append_jsonl(const std::filesystem::path& path, std::span<const EvalRecord> records);
// Writes the header when the file is new or empty.
void append_csv(const std::filesystem::path& path, std::span<const EvalRecord> records);
std::vector<EvalRecord> read_jsonl(const std::filesystem::path& path);

void write_stats_csv(const std::filesystem::path& path, const ConfidenceStats& stats);

nlohmann::ordered_json threshold_table_to_json(const ThresholdTable& table);
ThresholdTable threshold_table_from_json(const nlohmann::json& j);

}  // namespace tdsim
