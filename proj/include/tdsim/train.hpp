#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tdsim/data_io.hpp"
#include "tdsim/split_model.hpp"
#include "tdsim/td_policy.hpp"

namespace tdsim {

enum class Criterion { JointCe, BceGt, Mixed };

const char* criterion_name(Criterion c);
Criterion parse_criterion(const std::string& name);

struct TrainConfig {
  std::size_t batch_size = 128;
  std::array<std::size_t, 3> stage_epochs{30, 10, 10};
  double base_lr = 0.1;
  double lr_decay_factor = 10.0;
  std::array<std::size_t, 3> lr_decay_every{30, 10, 10};
  std::uint64_t seed = 1;
  double alpha = 0.1;
  double beta = 0.05;
  double temperature = 10.0;
  Criterion criterion = Criterion::Mixed;
  // Codec-only epochs at the start of stage 2; unset means half of stage 2.
  std::optional<std::size_t> stage2_codec_epochs;
  // Stage-3 starting step size; unset means base_lr / temperature, since the
  // tempered sigmoid scales every gradient into the decision network by T.
  std::optional<double> td_base_lr;
  TdFeatureSet td_inputs = TdFeatureSet::all();
  std::size_t td_hidden = 256;

  void validate() const;
  std::size_t codec_epochs() const;

  // 90/30/30 epochs as in the full-size CIFAR100 setup; documentation only.
  static TrainConfig paper_scale();
};

// base_lr / decay_factor^floor(epoch / decay_every(stage)); stage in {1,2,3}.
double lr_at(std::size_t epoch, int stage, const TrainConfig& cfg);
// Stage-3 schedule: td_base_lr with the stage-3 decay of lr_at.
double td_lr_at(std::size_t epoch, const TrainConfig& cfg);

struct EpochLog {
  int stage = 1;
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  double acc_early = 0.0;
  double acc_final = 0.0;
  std::optional<double> savings;    // stage 3 only
  std::optional<double> acc_joint;  // stage 3 only

  nlohmann::ordered_json to_json() const;
};

using LogSink = std::function<void(const EpochLog&)>;

// Per-iteration SNR in dB for a stage-2/3 training step.
double training_snr(const SnrSpec& spec, std::uint64_t iteration, Rng& rng);

// Joint CE of both exits without the codec or channel.
std::vector<EpochLog> stage1_train(SplitClassifier& model, const Dataset& data,
                                   const TrainConfig& cfg, const LogSink& sink = {});

// Codec-only epochs followed by end-to-end epochs, all through the channel.
std::vector<EpochLog> stage2_train(SplitClassifier& model, const Dataset& data,
                                   const TrainConfig& cfg, const LogSink& sink = {});

// 1 when the early prediction should be kept; 0 only when the early exit is
// wrong and the final exit is right.
std::vector<double> make_gt_labels(const Tensor& early_probs, const Tensor& final_probs,
                                   std::span<const int> labels);

// Losses over a batch; d_soft has one entry per row of the probability
// tensors. Every term is a batch mean.
Var loss_joint(const Var& early_probs, const Var& final_probs, const Var& d_soft,
               const Tensor& label_onehot, double beta);
Var loss_gt(const Var& d_soft, const Tensor& d_gt, double beta);
Var loss_mixed(const Var& early_probs, const Var& final_probs, const Var& d_soft,
               const Tensor& d_gt, const Tensor& label_onehot, double alpha, double beta);

TdNnConfig td_config_for(const SplitClassifier& model, const TrainConfig& cfg);

// Trains a fresh decision network against the frozen classifier.
TdNet stage3_train_td(const SplitClassifier& model, const Dataset& data, const TrainConfig& cfg,
                      const LogSink& sink = {});

}  // namespace tdsim
