#include "tdsim/split_model.hpp"

#include <cmath>
#include <string>

#include "tdsim/errors.hpp"

namespace tdsim {

void BackboneConfig::validate() const {
  const std::size_t stages = stage_channels.size();
  if (stages < 2) throw ConfigError("model.stage_channels needs at least 2 stages");
  for (auto c : stage_channels) {
    if (c == 0) throw ConfigError("model.stage_channels entries must be positive");
  }
  if (split_after_stage < 1 || split_after_stage >= stages) {
    throw ConfigError("model.split_after_stage must be in [1, " + std::to_string(stages - 1) +
                      "]");
  }
  if (num_classes < 2) throw ConfigError("model.num_classes must be >= 2");
  if (early_hidden == 0) throw ConfigError("model.early_hidden must be positive");
  if (codec_channels == 0) throw ConfigError("model.codec_channels must be positive");
  const std::size_t div = std::size_t{1} << stages;
  if (input_shape[0] == 0 || input_shape[1] == 0 || input_shape[2] == 0) {
    throw ConfigError("model.input_shape entries must be positive");
  }
  if (input_shape[1] % div != 0 || input_shape[2] % div != 0) {
    throw ConfigError("model.input_shape H and W must be divisible by 2^" +
                      std::to_string(stages));
  }
}

Shape BackboneConfig::split_shape() const {
  const std::size_t div = std::size_t{1} << split_after_stage;
  return {stage_channels[split_after_stage - 1], input_shape[1] / div, input_shape[2] / div};
}

namespace {

Var he_normal(Shape shape, std::size_t fan_in, double gain, Rng& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> g(0.0, gain * std::sqrt(1.0 / static_cast<double>(fan_in)));
  for (auto& v : t.data()) v = g(rng);
  return Var(std::move(t), true);
}

Var zeros(Shape shape) { return Var(Tensor(std::move(shape), 0.0), true); }

void add_conv(ParamRegistry& reg, const std::string& name, std::size_t out, std::size_t in,
              std::size_t k, Rng& rng) {
  reg.add(name + ".weight", he_normal({out, in, k, k}, in * k * k, std::sqrt(2.0), rng));
  reg.add(name + ".bias", zeros({out}));
}

void add_linear(ParamRegistry& reg, const std::string& name, std::size_t in, std::size_t out,
                double gain, Rng& rng) {
  reg.add(name + ".weight", he_normal({in, out}, in, gain, rng));
  reg.add(name + ".bias", zeros({out}));
}

Var conv_stage(const ParamRegistry& reg, const std::string& name, const Var& x, PoolKind pool) {
  auto y = conv2d(x, reg.at(name + ".weight"), reg.at(name + ".bias"));
  return pool2d(relu(y), pool);
}

Var dense(const ParamRegistry& reg, const std::string& name, const Var& x) {
  return linear(x, reg.at(name + ".weight"), reg.at(name + ".bias"));
}

constexpr std::size_t idx(Partition p) { return static_cast<std::size_t>(p); }

}  // namespace

SplitClassifier::SplitClassifier(BackboneConfig backbone, ChannelConfig channel,
                                 std::uint64_t seed)
    : backbone_(std::move(backbone)), channel_(channel) {
  backbone_.validate();
  channel_.validate();
  Rng rng(mix_seed(seed, 0x5eed));
  const auto& ch = backbone_.stage_channels;
  const std::size_t split = backbone_.split_after_stage;
  const std::size_t k = backbone_.num_classes;
  const double relu_gain = std::sqrt(2.0);

  auto& edge = parts_[idx(Partition::Edge)];
  auto& server = parts_[idx(Partition::Server)];
  std::size_t in_c = backbone_.input_shape[0];
  for (std::size_t s = 0; s < ch.size(); ++s) {
    auto& reg = s < split ? edge : server;
    add_conv(reg, (s < split ? "edge.conv" : "server.conv") + std::to_string(s), ch[s], in_c, 3,
             rng);
    in_c = ch[s];
  }
  const std::size_t div = std::size_t{1} << ch.size();
  const std::size_t flat =
      ch.back() * (backbone_.input_shape[1] / div) * (backbone_.input_shape[2] / div);
  add_linear(server, "server.fc", flat, k, 1.0, rng);

  auto& early = parts_[idx(Partition::Early)];
  const std::size_t split_c = ch[split - 1];
  add_linear(early, "early.fc0", split_c, backbone_.early_hidden, relu_gain, rng);
  add_linear(early, "early.fc1", backbone_.early_hidden, k, 1.0, rng);

  const auto ss = backbone_.split_shape();
  const std::size_t cc = backbone_.codec_channels;
  const std::size_t reduced = cc * ss[1] * ss[2];
  const auto b = static_cast<std::size_t>(channel_.bandwidth);
  auto& enc = parts_[idx(Partition::Encoder)];
  auto& dec = parts_[idx(Partition::Decoder)];
  enc.add("enc.reduce.weight", he_normal({cc, split_c, 1, 1}, split_c, 1.0, rng));
  enc.add("enc.reduce.bias", zeros({cc}));
  add_linear(enc, "enc.fc", reduced, b, 1.0, rng);
  add_linear(dec, "dec.fc", b, reduced, 1.0, rng);
  dec.add("dec.expand.weight", he_normal({split_c, cc, 1, 1}, cc, 1.0, rng));
  dec.add("dec.expand.bias", zeros({split_c}));
}

SplitClassifier SplitClassifier::clone() const {
  SplitClassifier out;
  out.backbone_ = backbone_;
  out.channel_ = channel_;
  for (std::size_t i = 0; i < parts_.size(); ++i) {
    for (const auto& [name, p] : parts_[i]) out.parts_[i].add(name, p.detached_copy());
  }
  return out;
}

Var SplitClassifier::forward_edge(const Var& input) const {
  const auto& s = input.shape();
  const auto& want = backbone_.input_shape;
  if (s.size() != 4) throw DimensionError("forward_edge: expected [N,C,H,W], got " + shape_str(s));
  const char* axes[3] = {"C", "H", "W"};
  for (std::size_t a = 0; a < 3; ++a) {
    if (s[a + 1] != want[a]) {
      throw DimensionError("forward_edge: axis " + std::string(axes[a]) + " is " +
                           std::to_string(s[a + 1]) + ", expected " + std::to_string(want[a]));
    }
  }
  const auto& reg = parts_[idx(Partition::Edge)];
  Var x = input;
  for (std::size_t st = 0; st < backbone_.split_after_stage; ++st) {
    x = conv_stage(reg, "edge.conv" + std::to_string(st), x, backbone_.pool);
  }
  return x;
}

Var SplitClassifier::early_exit(const Var& features) const {
  const auto& reg = parts_[idx(Partition::Early)];
  auto h = relu(dense(reg, "early.fc0", global_avg_pool(features)));
  return softmax(dense(reg, "early.fc1", h));
}

Var SplitClassifier::jscc_encode(const Var& features) const {
  const auto& reg = parts_[idx(Partition::Encoder)];
  auto r = conv2d(features, reg.at("enc.reduce.weight"), reg.at("enc.reduce.bias"));
  const std::size_t n = features.shape()[0];
  auto flat = reshape(r, {n, r.value().size() / n});
  return power_normalize(dense(reg, "enc.fc", flat), channel_.power);
}

Var SplitClassifier::jscc_decode(const Var& received) const {
  const auto& reg = parts_[idx(Partition::Decoder)];
  const auto b = static_cast<std::size_t>(channel_.bandwidth);
  if (received.shape().size() != 2 || received.shape()[1] != b) {
    throw DimensionError("jscc_decode: expected [N," + std::to_string(b) + "], got " +
                         shape_str(received.shape()));
  }
  const std::size_t n = received.shape()[0];
  const auto ss = backbone_.split_shape();
  auto h = dense(reg, "dec.fc", received);
  auto grid = reshape(h, {n, backbone_.codec_channels, ss[1], ss[2]});
  return conv2d(grid, reg.at("dec.expand.weight"), reg.at("dec.expand.bias"));
}

Var SplitClassifier::forward_server(const Var& features_hat) const {
  const auto ss = backbone_.split_shape();
  const auto& s = features_hat.shape();
  if (s.size() != 4 || s[1] != ss[0] || s[2] != ss[1] || s[3] != ss[2]) {
    throw DimensionError("forward_server: expected [N," + std::to_string(ss[0]) + "," +
                         std::to_string(ss[1]) + "," + std::to_string(ss[2]) + "], got " +
                         shape_str(s));
  }
  const auto& reg = parts_[idx(Partition::Server)];
  Var x = features_hat;
  for (std::size_t st = backbone_.split_after_stage; st < backbone_.stage_channels.size(); ++st) {
    x = conv_stage(reg, "server.conv" + std::to_string(st), x, backbone_.pool);
  }
  const std::size_t n = s[0];
  auto flat = reshape(x, {n, x.value().size() / n});
  return softmax(dense(reg, "server.fc", flat));
}

SplitClassifier::Exits SplitClassifier::forward_unsplit(const Var& input) const {
  auto f = forward_edge(input);
  return {early_exit(f), forward_server(f)};
}

SplitClassifier::Exits SplitClassifier::forward_channel(const Var& input, double noise_var,
                                                        Rng& rng) const {
  auto f = forward_edge(input);
  auto y = transmit(jscc_encode(f), noise_var, rng);
  return {early_exit(f), forward_server(jscc_decode(y))};
}

ParamRegistry& SplitClassifier::params(Partition part) { return parts_[idx(part)]; }
const ParamRegistry& SplitClassifier::params(Partition part) const { return parts_[idx(part)]; }

ParamRegistry SplitClassifier::all_params() const {
  ParamRegistry all;
  for (const auto& p : parts_) all.merge(p);
  return all;
}

ParamRegistry SplitClassifier::params(std::initializer_list<Partition> parts) const {
  ParamRegistry out;
  for (auto p : parts) out.merge(parts_[idx(p)]);
  return out;
}

void SplitClassifier::set_trainable(std::initializer_list<Partition> parts) {
  for (auto& p : parts_) p.set_requires_grad(false);
  for (auto p : parts) parts_[idx(p)].set_requires_grad(true);
}

std::uint64_t linear_flops(std::size_t in, std::size_t out) {
  return static_cast<std::uint64_t>(in) * out + out;
}

std::uint64_t conv_flops(std::size_t filters, std::size_t channels, std::size_t k, std::size_t h,
                         std::size_t w) {
  const std::uint64_t hw = static_cast<std::uint64_t>(h) * w;
  return filters * channels * k * k * hw + filters * hw;
}

std::uint64_t mlp_flops(std::span<const std::size_t> dims) {
  std::uint64_t total = 0;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) total += linear_flops(dims[i], dims[i + 1]);
  return total;
}

namespace {

std::uint64_t stage_range_flops(const BackboneConfig& cfg, std::size_t first, std::size_t last) {
  std::uint64_t total = 0;
  std::size_t c = cfg.input_shape[0], h = cfg.input_shape[1], w = cfg.input_shape[2];
  for (std::size_t s = 0; s < last; ++s) {
    if (s >= first) total += conv_flops(cfg.stage_channels[s], c, 3, h, w);
    c = cfg.stage_channels[s];
    h /= 2;
    w /= 2;
  }
  return total;
}

}  // namespace

std::uint64_t count_flops(FlopsPart part, const BackboneConfig& cfg, std::size_t td_input_dim,
                          std::size_t td_hidden) {
  const std::size_t stages = cfg.stage_channels.size();
  switch (part) {
    case FlopsPart::TdNn: {
      const std::size_t dims[] = {td_input_dim, td_hidden, td_hidden, 1};
      return mlp_flops(dims);
    }
    case FlopsPart::EarlyHead: {
      const std::size_t dims[] = {cfg.stage_channels[cfg.split_after_stage - 1], cfg.early_hidden,
                                  cfg.num_classes};
      return mlp_flops(dims);
    }
    case FlopsPart::EdgePart:
      return stage_range_flops(cfg, 0, cfg.split_after_stage);
    case FlopsPart::ServerPart: {
      const std::size_t div = std::size_t{1} << stages;
      const std::size_t flat =
          cfg.stage_channels.back() * (cfg.input_shape[1] / div) * (cfg.input_shape[2] / div);
      return stage_range_flops(cfg, cfg.split_after_stage, stages) +
             linear_flops(flat, cfg.num_classes);
    }
    case FlopsPart::FullDnn:
      return count_flops(FlopsPart::EdgePart, cfg, td_input_dim, td_hidden) +
             count_flops(FlopsPart::ServerPart, cfg, td_input_dim, td_hidden);
  }
  return 0;
}

const char* flops_part_name(FlopsPart part) {
  switch (part) {
    case FlopsPart::TdNn: return "td_nn";
    case FlopsPart::EarlyHead: return "early_head";
    case FlopsPart::EdgePart: return "edge_part";
    case FlopsPart::ServerPart: return "server_part";
    case FlopsPart::FullDnn: return "full_dnn";
  }
  return "?";
}

}  // namespace tdsim
