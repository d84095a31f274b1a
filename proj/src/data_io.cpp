#include "tdsim/data_io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "tdsim/errors.hpp"

namespace tdsim {

const char* split_name(Split s) { return s == Split::Train ? "train" : "test"; }

std::array<std::size_t, 3> Dataset::geometry() const {
  return {inputs.dim(1), inputs.dim(2), inputs.dim(3)};
}

void Dataset::validate() const {
  if (labels.empty()) throw ValidationError("dataset is empty");
  if (inputs.rank() != 4 || inputs.dim(0) != labels.size()) {
    throw DimensionError("dataset inputs " + shape_str(inputs.shape()) + " do not match " +
                         std::to_string(labels.size()) + " labels");
  }
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= num_classes) {
      throw ValidationError("label " + std::to_string(l) + " outside [0," +
                            std::to_string(num_classes) + ")");
    }
  }
}

Tensor Dataset::gather_inputs(std::span<const std::size_t> indices) const {
  const std::size_t per = inputs.size() / inputs.dim(0);
  const auto g = geometry();
  Tensor out({indices.size(), g[0], g[1], g[2]});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto src = inputs.data().subspan(indices[i] * per, per);
    std::copy(src.begin(), src.end(), out.data().begin() + i * per);
  }
  return out;
}

std::vector<int> Dataset::gather_labels(std::span<const std::size_t> indices) const {
  std::vector<int> out(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) out[i] = labels[indices[i]];
  return out;
}

namespace {

// Bilinear upsampling of a coarse grid to h x w.
std::vector<double> upsample(const std::vector<double>& coarse, std::size_t ch, std::size_t cw,
                             std::size_t h, std::size_t w) {
  std::vector<double> out(h * w);
  for (std::size_t y = 0; y < h; ++y) {
    const double fy = (static_cast<double>(y) + 0.5) * static_cast<double>(ch) / h - 0.5;
    const double cy = std::clamp(fy, 0.0, static_cast<double>(ch - 1));
    const auto y0 = static_cast<std::size_t>(std::floor(cy));
    const std::size_t y1 = std::min(y0 + 1, ch - 1);
    const double ty = cy - static_cast<double>(y0);
    for (std::size_t x = 0; x < w; ++x) {
      const double fx = (static_cast<double>(x) + 0.5) * static_cast<double>(cw) / w - 0.5;
      const double cx = std::clamp(fx, 0.0, static_cast<double>(cw - 1));
      const auto x0 = static_cast<std::size_t>(std::floor(cx));
      const std::size_t x1 = std::min(x0 + 1, cw - 1);
      const double tx = cx - static_cast<double>(x0);
      const double top = coarse[y0 * cw + x0] * (1 - tx) + coarse[y0 * cw + x1] * tx;
      const double bot = coarse[y1 * cw + x0] * (1 - tx) + coarse[y1 * cw + x1] * tx;
      out[y * w + x] = top * (1 - ty) + bot * ty;
    }
  }
  return out;
}

}  // namespace

namespace {

// Pre-logistic class templates, one [C*H*W] vector per class.
std::vector<std::vector<double>> raw_templates(std::size_t num_classes,
                                               std::array<std::size_t, 3> geometry,
                                               std::uint64_t seed) {
  const auto [c, h, w] = geometry;
  const std::size_t plane = h * w, per = c * plane;
  const std::size_t ch = std::max<std::size_t>(2, h / 4), cw = std::max<std::size_t>(2, w / 4);
  Rng trng(mix_seed(seed, 0x7e3));
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<std::vector<double>> templates(num_classes, std::vector<double>(per));
  for (auto& t : templates) {
    for (std::size_t ci = 0; ci < c; ++ci) {
      std::vector<double> coarse(ch * cw);
      for (auto& v : coarse) v = 1.5 * gauss(trng);
      auto smooth = upsample(coarse, ch, cw, h, w);
      for (std::size_t i = 0; i < plane; ++i) t[ci * plane + i] = smooth[i] + 0.5 * gauss(trng);
    }
  }
  return templates;
}

}  // namespace

Tensor synth_templates(std::size_t num_classes, std::array<std::size_t, 3> geometry,
                       std::uint64_t seed) {
  const auto raw = raw_templates(num_classes, geometry, seed);
  const auto [c, h, w] = geometry;
  Tensor out({num_classes, c, h, w});
  const std::size_t per = c * h * w;
  for (std::size_t k = 0; k < num_classes; ++k) {
    for (std::size_t i = 0; i < per; ++i) out[k * per + i] = 1.0 / (1.0 + std::exp(-raw[k][i]));
  }
  return out;
}

Dataset synth_generate(std::size_t num_classes, std::array<std::size_t, 3> geometry,
                       std::size_t n_per_class, std::uint64_t seed, double difficulty,
                       Split split, int max_shift) {
  if (num_classes < 2) throw ValidationError("synthetic data needs at least 2 classes");
  if (n_per_class == 0) throw ValidationError("n_per_class must be positive");
  if (!(difficulty >= 0.0)) throw ValidationError("difficulty must be >= 0");
  const auto [c, h, w] = geometry;
  const std::size_t plane = h * w, per = c * plane;
  const auto templates = raw_templates(num_classes, geometry, seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  Rng srng(mix_seed(seed, split == Split::Train ? 0x1 : 0x2));
  std::uniform_int_distribution<int> shift(-max_shift, max_shift);
  Dataset ds;
  ds.num_classes = num_classes;
  ds.split = split;
  const std::size_t n = num_classes * n_per_class;
  ds.inputs = Tensor({n, c, h, w});
  ds.labels.resize(n);
  auto out = ds.inputs.data();
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t cls = i % num_classes;
    ds.labels[i] = static_cast<int>(cls);
    const int dy = shift(srng), dx = shift(srng);
    const auto& t = templates[cls];
    for (std::size_t ci = 0; ci < c; ++ci) {
      for (std::size_t y = 0; y < h; ++y) {
        const auto sy = static_cast<std::size_t>((static_cast<long>(y) - dy + static_cast<long>(h)) %
                                                  static_cast<long>(h));
        for (std::size_t x = 0; x < w; ++x) {
          const auto sx = static_cast<std::size_t>(
              (static_cast<long>(x) - dx + static_cast<long>(w)) % static_cast<long>(w));
          const double v = t[ci * plane + sy * w + sx] + difficulty * gauss(srng);
          out[i * per + ci * plane + y * w + x] = 1.0 / (1.0 + std::exp(-v));
        }
      }
    }
  }
  return ds;
}

namespace {

double parse_double(std::string_view tok, std::size_t line) {
  while (!tok.empty() && (tok.front() == ' ' || tok.front() == '\t')) tok.remove_prefix(1);
  while (!tok.empty() && (tok.back() == ' ' || tok.back() == '\t' || tok.back() == '\r')) {
    tok.remove_suffix(1);
  }
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc{} || ptr != tok.data() + tok.size() || tok.empty()) {
    throw ParseError(line, "non-numeric field '" + std::string(tok) + "'");
  }
  return v;
}

}  // namespace

Dataset load_csv_dataset(const std::filesystem::path& path, std::array<std::size_t, 3> geometry,
                         std::size_t num_classes, Split split) {
  std::ifstream in(path);
  if (!in) throw ParseError(0, "cannot open " + path.string());
  const std::size_t per = geometry[0] * geometry[1] * geometry[2];
  std::vector<double> values;
  std::vector<int> labels;
  std::string row;
  std::size_t line = 0;
  while (std::getline(in, row)) {
    ++line;
    if (row.empty() || row == "\r") continue;
    std::vector<std::string_view> fields;
    std::string_view rest(row);
    while (true) {
      const auto comma = rest.find(',');
      fields.push_back(rest.substr(0, comma));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (fields.size() != per + 1) {
      throw ParseError(line, "expected " + std::to_string(per + 1) + " fields, got " +
                                 std::to_string(fields.size()));
    }
    const double label = parse_double(fields[0], line);
    if (label != std::floor(label) || label < 0 || label >= static_cast<double>(num_classes)) {
      throw ParseError(line, "label out of range [0," + std::to_string(num_classes) + ")");
    }
    labels.push_back(static_cast<int>(label));
    for (std::size_t i = 1; i <= per; ++i) {
      const double v = parse_double(fields[i], line);
      if (!(v >= 0.0 && v <= 1.0)) throw ParseError(line, "value outside [0,1]");
      values.push_back(v);
    }
  }
  if (labels.empty()) throw ParseError(line, "no data rows");
  Dataset ds;
  ds.num_classes = num_classes;
  ds.split = split;
  ds.inputs = Tensor({labels.size(), geometry[0], geometry[1], geometry[2]}, std::move(values));
  ds.labels = std::move(labels);
  return ds;
}

void save_csv_dataset(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  const std::size_t per = data.inputs.size() / data.size();
  char buf[32];
  for (std::size_t i = 0; i < data.size(); ++i) {
    out << data.labels[i];
    for (std::size_t j = 0; j < per; ++j) {
      std::snprintf(buf, sizeof buf, "%.9g", data.inputs[i * per + j]);
      out << ',' << buf;
    }
    out << '\n';
  }
}

// ---- configuration JSON ------------------------------------------------------

nlohmann::json backbone_to_json(const BackboneConfig& cfg) {
  return {{"stage_channels", cfg.stage_channels},
          {"split_after_stage", cfg.split_after_stage},
          {"num_classes", cfg.num_classes},
          {"early_hidden", cfg.early_hidden},
          {"input_shape", cfg.input_shape},
          {"codec_channels", cfg.codec_channels},
          {"pool", cfg.pool == PoolKind::Max ? "max" : "avg"}};
}

BackboneConfig backbone_from_json(const nlohmann::json& j) {
  BackboneConfig cfg;
  cfg.stage_channels = j.at("stage_channels").get<std::vector<std::size_t>>();
  cfg.split_after_stage = j.at("split_after_stage").get<std::size_t>();
  cfg.num_classes = j.at("num_classes").get<std::size_t>();
  cfg.early_hidden = j.at("early_hidden").get<std::size_t>();
  cfg.input_shape = j.at("input_shape").get<std::array<std::size_t, 3>>();
  cfg.codec_channels = j.at("codec_channels").get<std::size_t>();
  const auto pool = j.at("pool").get<std::string>();
  if (pool != "max" && pool != "avg") throw ConfigError("model.pool must be 'max' or 'avg'");
  cfg.pool = pool == "max" ? PoolKind::Max : PoolKind::Avg;
  return cfg;
}

nlohmann::json td_config_to_json(const TdNnConfig& cfg) {
  return {{"inputs", cfg.features.names()},
          {"hidden", cfg.hidden},
          {"temperature", cfg.temperature},
          {"num_classes", cfg.num_classes}};
}

TdNnConfig td_config_from_json(const nlohmann::json& j) {
  TdNnConfig cfg;
  cfg.features = TdFeatureSet::parse(j.at("inputs").get<std::vector<std::string>>());
  cfg.hidden = j.at("hidden").get<std::size_t>();
  cfg.temperature = j.at("temperature").get<double>();
  cfg.num_classes = j.at("num_classes").get<std::size_t>();
  return cfg;
}

// ---- checkpoints --------------------------------------------------------------

namespace {

void put_u64(std::ostream& os, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 8);
}

void put_f32(std::string& buf, double v) {
  const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

float get_f32(const unsigned char* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return std::bit_cast<float>(bits);
}

void append_params(const ParamRegistry& reg, nlohmann::json& manifest, std::string& payload) {
  for (const auto& [name, p] : reg) {
    const std::size_t offset = payload.size();
    for (double v : p.value().data()) put_f32(payload, v);
    manifest.push_back({{"name", name},
                        {"shape", p.shape()},
                        {"byte_offset", offset},
                        {"byte_len", payload.size() - offset}});
  }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const SplitClassifier& model,
                     const TdNet* td, const std::string& td_criterion, int stage_completed,
                     std::uint64_t seed) {
  nlohmann::json model_config = {
      {"backbone", backbone_to_json(model.backbone())},
      {"channel", {{"bandwidth", model.channel().bandwidth}, {"power", model.channel().power}}},
      {"td", td ? td_config_to_json(td->config()) : nlohmann::json(nullptr)},
      {"td_criterion", td ? td_criterion : std::string()}};
  nlohmann::json manifest = nlohmann::json::array();
  std::string payload;
  append_params(model.all_params(), manifest, payload);
  if (td) append_params(td->params(), manifest, payload);

  nlohmann::json header = {{"format_version", kCheckpointVersion},
                           {"model_config", model_config},
                           {"stage_completed", stage_completed},
                           {"seed", seed},
                           {"param_manifest", manifest}};
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot write checkpoint " + path.string());
  put_u64(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw ValidationError("failed writing checkpoint " + path.string());
}

namespace {

void load_params(ParamRegistry& reg, const nlohmann::json& manifest, std::size_t& cursor,
                 const std::vector<unsigned char>& payload) {
  for (auto& [name, p] : reg) {
    if (cursor >= manifest.size()) throw FormatError("manifest is missing parameter " + name);
    const auto& entry = manifest[cursor++];
    if (entry.at("name").get<std::string>() != name) {
      throw FormatError("manifest entry '" + entry.at("name").get<std::string>() +
                        "' where '" + name + "' was expected");
    }
    if (entry.at("shape").get<Shape>() != p.shape()) {
      throw FormatError("shape mismatch for " + name);
    }
    const auto off = entry.at("byte_offset").get<std::size_t>();
    const auto len = entry.at("byte_len").get<std::size_t>();
    if (len != p.value().size() * 4 || off + len > payload.size()) {
      throw FormatError("payload range for " + name + " is inconsistent");
    }
    auto dst = p.mutable_value().data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = get_f32(payload.data() + off + 4 * i);
  }
}

}  // namespace

CheckpointContents load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 8) throw FormatError("checkpoint truncated before header length");
  std::uint64_t hlen = 0;
  for (int i = 0; i < 8; ++i) hlen |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  if (hlen > bytes.size() - 8) throw FormatError("checkpoint truncated inside header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 8, bytes.begin() + 8 + static_cast<long>(hlen));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  std::vector<unsigned char> payload(bytes.begin() + 8 + static_cast<long>(hlen), bytes.end());

  try {
    if (header.at("format_version").get<int>() != kCheckpointVersion) {
      throw FormatError("unsupported checkpoint format_version " +
                        header.at("format_version").dump());
    }
    const auto& manifest = header.at("param_manifest");
    std::size_t expected = 0;
    for (const auto& e : manifest) {
      if (e.at("byte_offset").get<std::size_t>() != expected) {
        throw FormatError("manifest offsets are not contiguous and ascending");
      }
      expected += e.at("byte_len").get<std::size_t>();
    }
    if (expected != payload.size()) {
      throw FormatError("payload holds " + std::to_string(payload.size()) + " bytes, manifest " +
                        std::to_string(expected));
    }
    const auto& mc = header.at("model_config");
    ChannelConfig channel;
    channel.bandwidth = mc.at("channel").at("bandwidth").get<int>();
    channel.power = mc.at("channel").at("power").get<double>();
    CheckpointContents out{SplitClassifier(backbone_from_json(mc.at("backbone")), channel, 0),
                           std::nullopt,
                           mc.value("td_criterion", std::string()),
                           header.at("stage_completed").get<int>(),
                           header.at("seed").get<std::uint64_t>(),
                           header};
    std::size_t cursor = 0;
    for (auto part : {Partition::Edge, Partition::Early, Partition::Encoder, Partition::Decoder,
                      Partition::Server}) {
      load_params(out.model.params(part), manifest, cursor, payload);
    }
    if (!mc.at("td").is_null()) {
      out.td.emplace(td_config_from_json(mc.at("td")), 0);
      load_params(out.td->params(), manifest, cursor, payload);
      out.td->mark_trained();
    }
    if (cursor != manifest.size()) throw FormatError("manifest lists unknown parameters");
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header malformed: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint model config invalid: ") + e.what());
  }
}

}  // namespace tdsim
