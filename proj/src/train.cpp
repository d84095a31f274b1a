#include "tdsim/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "tdsim/errors.hpp"
#include "tdsim/nn.hpp"

namespace tdsim {

const char* criterion_name(Criterion c) {
  switch (c) {
    case Criterion::JointCe: return "joint_ce";
    case Criterion::BceGt: return "bce_gt";
    case Criterion::Mixed: return "mixed";
  }
  return "?";
}

Criterion parse_criterion(const std::string& name) {
  if (name == "joint_ce") return Criterion::JointCe;
  if (name == "bce_gt") return Criterion::BceGt;
  if (name == "mixed") return Criterion::Mixed;
  throw ConfigError("unknown criterion '" + name + "' (expected joint_ce, bce_gt, mixed)");
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
  for (auto e : lr_decay_every) {
    if (e == 0) throw ConfigError("train.lr_decay_every entries must be positive");
  }
  if (!(base_lr > 0.0)) throw ConfigError("train.base_lr must be > 0");
  if (!(lr_decay_factor > 0.0)) throw ConfigError("train.lr_decay_factor must be > 0");
  if (!(alpha >= 0.0)) throw ConfigError("train.alpha must be >= 0");
  if (!(beta >= 0.0)) throw ConfigError("train.beta must be >= 0");
  if (!(temperature > 0.0)) throw ConfigError("train.temperature must be > 0");
  if (td_inputs.empty()) throw ConfigError("train.td_inputs must not be empty");
  if (td_hidden == 0) throw ConfigError("train.td_hidden must be positive");
  if (td_base_lr && !(*td_base_lr > 0.0)) throw ConfigError("train.td_base_lr must be > 0");
  if (stage2_codec_epochs && *stage2_codec_epochs > stage_epochs[1]) {
    throw ConfigError("train.stage2_codec_epochs exceeds stage 2 epochs");
  }
}

std::size_t TrainConfig::codec_epochs() const {
  return stage2_codec_epochs.value_or(stage_epochs[1] / 2);
}

TrainConfig TrainConfig::paper_scale() {
  TrainConfig cfg;
  cfg.stage_epochs = {90, 30, 30};
  cfg.lr_decay_every = {30, 10, 10};
  return cfg;
}

double lr_at(std::size_t epoch, int stage, const TrainConfig& cfg) {
  if (stage < 1 || stage > 3) throw ValidationError("stage must be 1, 2 or 3");
  const auto steps = epoch / cfg.lr_decay_every[static_cast<std::size_t>(stage - 1)];
  return cfg.base_lr / std::pow(cfg.lr_decay_factor, static_cast<double>(steps));
}

double td_lr_at(std::size_t epoch, const TrainConfig& cfg) {
  return lr_at(epoch, 3, cfg) * cfg.td_base_lr.value_or(cfg.base_lr / cfg.temperature) /
         cfg.base_lr;
}

nlohmann::ordered_json EpochLog::to_json() const {
  nlohmann::ordered_json j;
  j["stage"] = stage;
  j["epoch"] = epoch;
  j["lr"] = lr;
  j["loss"] = loss;
  j["acc_early"] = acc_early;
  j["acc_final"] = acc_final;
  if (savings) j["savings"] = *savings;
  if (acc_joint) j["acc_joint"] = *acc_joint;
  return j;
}

double training_snr(const SnrSpec& spec, std::uint64_t iteration, Rng& rng) {
  if (const auto* fixed = std::get_if<FixedDb>(&spec)) return fixed->db;
  const auto& r = std::get<SandwichRange>(spec);
  return sandwich_snr(iteration, r.lo_db, r.hi_db, rng);
}

namespace {

struct Batches {
  std::vector<std::size_t> order;
  std::size_t batch_size;

  std::size_t count() const { return (order.size() + batch_size - 1) / batch_size; }
  std::span<const std::size_t> at(std::size_t b) const {
    const std::size_t lo = b * batch_size;
    return std::span<const std::size_t>(order).subspan(lo,
                                                       std::min(batch_size, order.size() - lo));
  }
};

Batches shuffled(std::size_t n, std::size_t batch, Rng& rng) {
  Batches b{std::vector<std::size_t>(n), batch};
  std::iota(b.order.begin(), b.order.end(), std::size_t{0});
  std::shuffle(b.order.begin(), b.order.end(), rng);
  return b;
}

std::size_t count_correct(const Tensor& probs, std::span<const int> labels) {
  const auto pred = argmax_rows(probs);
  std::size_t c = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) c += pred[i] == labels[i];
  return c;
}

void check_finite(double loss, int stage, std::size_t epoch, std::size_t batch) {
  if (!std::isfinite(loss)) {
    std::ostringstream os;
    os << "non-finite loss at stage " << stage << ", epoch " << epoch << ", batch " << batch
       << ": " << loss;
    throw NumericError(os.str());
  }
}

struct EpochTally {
  double loss = 0.0;
  std::size_t batches = 0, seen = 0, early = 0, final = 0;

  EpochLog finish(int stage, std::size_t epoch, double lr) const {
    const double n = static_cast<double>(seen);
    return {stage, epoch, lr, loss / static_cast<double>(batches), early / n, final / n,
            std::nullopt, std::nullopt};
  }
};

// Stages 1 and 2 share the loop; the forward differs by whether the codec
// and channel are in the path.
std::vector<EpochLog> classifier_epochs(SplitClassifier& model, const Dataset& data,
                                        const TrainConfig& cfg, int stage, bool through_channel,
                                        std::size_t first_epoch, std::size_t last_epoch,
                                        const ParamRegistry& trainable, Rng& shuffle_rng,
                                        Rng& noise_rng, Rng& snr_rng, std::uint64_t& iteration,
                                        const LogSink& sink) {
  std::vector<EpochLog> logs;
  auto active = trainable;
  for (std::size_t epoch = first_epoch; epoch < last_epoch; ++epoch) {
    const double lr = lr_at(epoch, stage, cfg);
    const auto batches = shuffled(data.size(), cfg.batch_size, shuffle_rng);
    EpochTally tally;
    for (std::size_t b = 0; b < batches.count(); ++b) {
      const auto idx = batches.at(b);
      const auto labels = data.gather_labels(idx);
      Var x(data.gather_inputs(idx));
      const Tensor target = one_hot(labels, data.num_classes);
      SplitClassifier::Exits exits;
      try {
        if (through_channel) {
          const double snr = training_snr(model.channel().snr, iteration, snr_rng);
          exits = model.forward_channel(x, snr_db_to_noise_var(snr, model.channel().power),
                                        noise_rng);
        } else {
          exits = model.forward_unsplit(x);
        }
      } catch (const NumericError& e) {
        std::ostringstream os;
        os << "stage " << stage << ", epoch " << epoch << ", batch " << b << ": " << e.what();
        throw NumericError(os.str());
      }
      ++iteration;
      auto loss = add(cross_entropy(exits.early, target), cross_entropy(exits.final, target));
      check_finite(loss.value()[0], stage, epoch, b);
      backward(loss);
      sgd_step(active, lr);
      tally.loss += loss.value()[0];
      tally.batches += 1;
      tally.seen += idx.size();
      tally.early += count_correct(exits.early.value(), labels);
      tally.final += count_correct(exits.final.value(), labels);
    }
    logs.push_back(tally.finish(stage, epoch, lr));
    if (sink) sink(logs.back());
  }
  return logs;
}

}  // namespace

std::vector<EpochLog> stage1_train(SplitClassifier& model, const Dataset& data,
                                   const TrainConfig& cfg, const LogSink& sink) {
  cfg.validate();
  data.validate();
  model.set_trainable({Partition::Edge, Partition::Early, Partition::Server});
  auto active = model.params({Partition::Edge, Partition::Early, Partition::Server});
  active.zero_grad();
  Rng shuffle_rng(mix_seed(cfg.seed, 101));
  Rng noise_rng(mix_seed(cfg.seed, 201));
  Rng snr_rng(mix_seed(cfg.seed, 301));
  std::uint64_t it = 0;
  auto logs = classifier_epochs(model, data, cfg, 1, false, 0, cfg.stage_epochs[0], active,
                                shuffle_rng, noise_rng, snr_rng, it, sink);
  model.set_trainable({});
  return logs;
}

std::vector<EpochLog> stage2_train(SplitClassifier& model, const Dataset& data,
                                   const TrainConfig& cfg, const LogSink& sink) {
  cfg.validate();
  data.validate();
  Rng shuffle_rng(mix_seed(cfg.seed, 102));
  Rng noise_rng(mix_seed(cfg.seed, 202));
  Rng snr_rng(mix_seed(cfg.seed, 302));
  std::uint64_t it = 0;
  const std::size_t codec_epochs = cfg.codec_epochs();

  model.set_trainable({Partition::Encoder, Partition::Decoder});
  auto codec = model.params({Partition::Encoder, Partition::Decoder});
  codec.zero_grad();
  auto logs = classifier_epochs(model, data, cfg, 2, true, 0, codec_epochs, codec, shuffle_rng,
                                noise_rng, snr_rng, it, sink);

  model.set_trainable({Partition::Edge, Partition::Early, Partition::Encoder, Partition::Decoder,
                       Partition::Server});
  auto all = model.all_params();
  all.zero_grad();
  auto rest = classifier_epochs(model, data, cfg, 2, true, codec_epochs, cfg.stage_epochs[1], all,
                                shuffle_rng, noise_rng, snr_rng, it, sink);
  logs.insert(logs.end(), rest.begin(), rest.end());
  model.set_trainable({});
  return logs;
}

std::vector<double> make_gt_labels(const Tensor& early_probs, const Tensor& final_probs,
                                   std::span<const int> labels) {
  const auto pe = argmax_rows(early_probs);
  const auto pf = argmax_rows(final_probs);
  if (pe.size() != labels.size() || pf.size() != labels.size()) {
    throw DimensionError("make_gt_labels: probability rows and labels differ in count");
  }
  std::vector<double> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    out[i] = gt_decision(pe[i] == labels[i], pf[i] == labels[i]).keep_early ? 1.0 : 0.0;
  }
  return out;
}

namespace {

// beta * mean(1 - d)
Var transmission_penalty(const Var& d_soft, double beta) {
  return scale(add_scalar(scale(mean(d_soft), -1.0), 1.0), beta);
}

Var flat_rows(const Var& d_soft) {
  const std::size_t n = d_soft.value().size();
  return d_soft.shape().size() == 1 ? d_soft : reshape(d_soft, {n});
}

}  // namespace

Var loss_joint(const Var& early_probs, const Var& final_probs, const Var& d_soft,
               const Tensor& label_onehot, double beta) {
  auto mixture = mix_rows(d_soft, early_probs, final_probs);
  return add(cross_entropy(mixture, label_onehot), transmission_penalty(d_soft, beta));
}

Var loss_gt(const Var& d_soft, const Tensor& d_gt, double beta) {
  auto d = flat_rows(d_soft);
  const Tensor target = d_gt.reshaped({d_gt.size()});
  return add(binary_cross_entropy(d, target), transmission_penalty(d_soft, beta));
}

Var loss_mixed(const Var& early_probs, const Var& final_probs, const Var& d_soft,
               const Tensor& d_gt, const Tensor& label_onehot, double alpha, double beta) {
  auto d = flat_rows(d_soft);
  const Tensor target = d_gt.reshaped({d_gt.size()});
  auto joint = loss_joint(early_probs, final_probs, d_soft, label_onehot, beta);
  return add(joint, scale(binary_cross_entropy(d, target), alpha));
}

TdNnConfig td_config_for(const SplitClassifier& model, const TrainConfig& cfg) {
  TdNnConfig td;
  td.features = cfg.td_inputs;
  td.hidden = cfg.td_hidden;
  td.temperature = cfg.temperature;
  td.num_classes = model.backbone().num_classes;
  return td;
}

TdNet stage3_train_td(const SplitClassifier& model, const Dataset& data, const TrainConfig& cfg,
                      const LogSink& sink) {
  cfg.validate();
  data.validate();
  TdNet td(td_config_for(model, cfg), mix_seed(cfg.seed, 3));
  auto& params = td.params();
  params.set_requires_grad(true);
  params.zero_grad();
  Rng shuffle_rng(mix_seed(cfg.seed, 103));
  Rng noise_rng(mix_seed(cfg.seed, 203));
  Rng snr_rng(mix_seed(cfg.seed, 303));
  std::uint64_t it = 0;
  const double power = model.channel().power;

  for (std::size_t epoch = 0; epoch < cfg.stage_epochs[2]; ++epoch) {
    const double lr = td_lr_at(epoch, cfg);
    const auto batches = shuffled(data.size(), cfg.batch_size, shuffle_rng);
    EpochTally tally;
    std::size_t kept = 0, joint_correct = 0;
    for (std::size_t b = 0; b < batches.count(); ++b) {
      const auto idx = batches.at(b);
      const auto labels = data.gather_labels(idx);
      const double snr = training_snr(model.channel().snr, it++, snr_rng);
      SplitClassifier::Exits exits;
      {
        NoGradGuard frozen;
        exits = model.forward_channel(Var(data.gather_inputs(idx)),
                                      snr_db_to_noise_var(snr, power), noise_rng);
      }
      const Tensor& pe = exits.early.value();
      const Tensor& pf = exits.final.value();
      const auto gt = make_gt_labels(pe, pf, labels);
      const Tensor d_gt({idx.size()}, gt);
      const Tensor target = one_hot(labels, data.num_classes);
      const std::vector<double> snrs(idx.size(), snr);
      Var inputs(assemble_td_inputs_batch(pe, snrs, td.config()));
      auto raw = td.raw(inputs);
      auto d = sigmoid(scale(raw, td.config().temperature));
      Var loss;
      switch (cfg.criterion) {
        case Criterion::JointCe:
          loss = loss_joint(exits.early, exits.final, d, target, cfg.beta);
          break;
        case Criterion::BceGt:
          loss = loss_gt(d, d_gt, cfg.beta);
          break;
        case Criterion::Mixed:
          loss = loss_mixed(exits.early, exits.final, d, d_gt, target, cfg.alpha, cfg.beta);
          break;
      }
      check_finite(loss.value()[0], 3, epoch, b);
      backward(loss);
      sgd_step(params, lr);

      const auto pred_e = argmax_rows(pe);
      const auto pred_f = argmax_rows(pf);
      for (std::size_t i = 0; i < idx.size(); ++i) {
        const bool keep = raw.value()[i] >= 0.0;
        kept += keep;
        joint_correct += (keep ? pred_e[i] : pred_f[i]) == labels[i];
        tally.early += pred_e[i] == labels[i];
        tally.final += pred_f[i] == labels[i];
      }
      tally.loss += loss.value()[0];
      tally.batches += 1;
      tally.seen += idx.size();
    }
    auto log = tally.finish(3, epoch, lr);
    log.savings = static_cast<double>(kept) / static_cast<double>(tally.seen);
    log.acc_joint = static_cast<double>(joint_correct) / static_cast<double>(tally.seen);
    if (sink) sink(log);
  }
  params.set_requires_grad(false);
  td.mark_trained();
  return td;
}

}  // namespace tdsim
