#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "tdsim/channel.hpp"
#include "tdsim/nn.hpp"
#include "tdsim/tensor.hpp"

namespace tdsim {

// Each stage is conv3x3 + relu + 2x2 pool. Stages [0, split_after_stage) run
// on the edge device, the rest on the server.
struct BackboneConfig {
  std::vector<std::size_t> stage_channels{16, 32, 64};
  std::size_t split_after_stage = 2;
  std::size_t num_classes = 10;
  std::size_t early_hidden = 64;
  std::array<std::size_t, 3> input_shape{1, 16, 16};  // C, H, W
  std::size_t codec_channels = 8;                     // 1x1 reduction width inside the codec
  PoolKind pool = PoolKind::Avg;

  void validate() const;

  // [C', H', W'] at the split point.
  Shape split_shape() const;
  std::size_t split_numel() const { return shape_numel(split_shape()); }
};

enum class Partition { Edge, Early, Encoder, Decoder, Server };

class SplitClassifier {
 public:
  SplitClassifier(BackboneConfig backbone, ChannelConfig channel, std::uint64_t seed);

  SplitClassifier(SplitClassifier&&) = default;
  SplitClassifier& operator=(SplitClassifier&&) = default;
  SplitClassifier(const SplitClassifier&) = delete;
  SplitClassifier& operator=(const SplitClassifier&) = delete;

  // Deep copy with independent parameter storage.
  SplitClassifier clone() const;

  const BackboneConfig& backbone() const noexcept { return backbone_; }
  const ChannelConfig& channel() const noexcept { return channel_; }
  // Training SNR schedule; bandwidth and power are fixed by the parameters.
  void set_snr(SnrSpec snr) { channel_.snr = snr; }

  Var forward_edge(const Var& input) const;
  Var early_exit(const Var& features) const;
  Var jscc_encode(const Var& features) const;
  Var jscc_decode(const Var& received) const;
  Var forward_server(const Var& features_hat) const;

  // Unsplit network (no codec, no channel) used before the codec exists.
  struct Exits {
    Var early;
    Var final;
  };
  Exits forward_unsplit(const Var& input) const;

  // Full path: edge -> early exit, and edge -> codec -> AWGN -> server.
  Exits forward_channel(const Var& input, double noise_var, Rng& rng) const;

  ParamRegistry& params(Partition part);
  const ParamRegistry& params(Partition part) const;

  // Handles of every parameter, partition order Edge, Early, Encoder,
  // Decoder, Server.
  ParamRegistry all_params() const;
  ParamRegistry params(std::initializer_list<Partition> parts) const;

  void set_trainable(std::initializer_list<Partition> parts);

 private:
  SplitClassifier() = default;
  BackboneConfig backbone_;
  ChannelConfig channel_;
  std::array<ParamRegistry, 5> parts_;
};

// FLOP accounting: a multiply-accumulate counts as 1; a linear layer I->O
// costs I*O + O; a conv stage costs F*C*k*k*H*W + F*H*W. Pooling and
// activations are free.
enum class FlopsPart { TdNn, EarlyHead, EdgePart, ServerPart, FullDnn };

std::uint64_t linear_flops(std::size_t in, std::size_t out);
std::uint64_t conv_flops(std::size_t filters, std::size_t channels, std::size_t k, std::size_t h,
                         std::size_t w);

// Dimensions of an MLP with ReLU between layers: dims[0] -> ... -> dims.back().
std::uint64_t mlp_flops(std::span<const std::size_t> dims);

std::uint64_t count_flops(FlopsPart part, const BackboneConfig& cfg, std::size_t td_input_dim,
                          std::size_t td_hidden);

const char* flops_part_name(FlopsPart part);

}  // namespace tdsim
