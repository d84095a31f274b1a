#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tdsim/split_model.hpp"
#include "tdsim/td_policy.hpp"
#include "tdsim/tensor.hpp"

namespace tdsim {

enum class Split { Train, Test };

const char* split_name(Split s);

struct Dataset {
  Tensor inputs;            // [N,C,H,W]
  std::vector<int> labels;  // N entries in [0, num_classes)
  std::size_t num_classes = 0;
  Split split = Split::Train;

  std::size_t size() const noexcept { return labels.size(); }
  std::array<std::size_t, 3> geometry() const;
  void validate() const;

  Tensor gather_inputs(std::span<const std::size_t> indices) const;
  std::vector<int> gather_labels(std::span<const std::size_t> indices) const;
};

// Class templates are smooth random fields drawn from `seed`; each sample is
// a circularly shifted template (|shift| <= max_shift per axis) plus
// difficulty * N(0,1) pixel noise, squashed into (0,1) by a logistic. Train
// and test splits share templates and draw samples from separate streams.
Dataset synth_generate(std::size_t num_classes, std::array<std::size_t, 3> geometry,
                       std::size_t n_per_class, std::uint64_t seed, double difficulty,
                       Split split = Split::Train, int max_shift = 2);

// The unshifted, noiseless class templates behind synth_generate, [K,C,H,W].
Tensor synth_templates(std::size_t num_classes, std::array<std::size_t, 3> geometry,
                       std::uint64_t seed);

// Rows are `label,v1,...,v{C*H*W}` with values in [0,1].
Dataset load_csv_dataset(const std::filesystem::path& path, std::array<std::size_t, 3> geometry,
                         std::size_t num_classes, Split split = Split::Train);
void save_csv_dataset(const Dataset& data, const std::filesystem::path& path);

// ---- model configuration <-> JSON ---------------------------------------------

nlohmann::json backbone_to_json(const BackboneConfig& cfg);
BackboneConfig backbone_from_json(const nlohmann::json& j);
nlohmann::json td_config_to_json(const TdNnConfig& cfg);
TdNnConfig td_config_from_json(const nlohmann::json& j);

// ---- checkpoints ------------------------------------------------------------------
//
// Layout: u64 little-endian header length, JSON header, then the
// concatenated little-endian float32 payloads listed in header.param_manifest
// (byte_offset relative to the payload start).

inline constexpr int kCheckpointVersion = 1;

struct CheckpointContents {
  SplitClassifier model;
  std::optional<TdNet> td;
  std::string td_criterion;
  int stage_completed = 0;
  std::uint64_t seed = 0;
  nlohmann::json header;
};

void save_checkpoint(const std::filesystem::path& path, const SplitClassifier& model,
                     const TdNet* td, const std::string& td_criterion, int stage_completed,
                     std::uint64_t seed);

CheckpointContents load_checkpoint(const std::filesystem::path& path);

}  // namespace tdsim
