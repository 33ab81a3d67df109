// Copyright 2026 The Paving Authors
// SPDX-License-Identifier: Apache-2.0

#include "paving/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "paving/checksum.hpp"
#include "paving/errors.hpp"

namespace paving {

using nlohmann::json;
using num::Array;

namespace {

constexpr char kMagic[8] = {'P', 'A', 'V', 'E', 'C', 'K', 'P', 'T'};
constexpr std::size_t kDigestBytes = 32;

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <class T>
T take(const std::string& in, std::size_t& at) {
  require_config(at + sizeof(T) <= in.size(), "checkpoint: truncated");
  T v;
  std::memcpy(&v, in.data() + at, sizeof(T));
  at += sizeof(T);
  return v;
}

std::string raw_digest(std::string_view bytes) {
  const std::string hex = sha256_hex(bytes);
  std::string raw(kDigestBytes, '\0');
  for (std::size_t i = 0; i < kDigestBytes; ++i) raw[i] = static_cast<char>(std::stoi(hex.substr(2 * i, 2), nullptr, 16));
  return raw;
}

const Array& need(const Checkpoint& ck, const std::string& name) {
  auto it = ck.arrays.find(name);
  require_config(it != ck.arrays.end(), ck.section + " checkpoint: missing array '" + name + "'");
  return it->second;
}

void expect_section(const Checkpoint& ck, const std::string& section) {
  require_config(ck.section == section, "checkpoint: expected section '" + section + "', found '" + ck.section + "'");
}

template <class T>
T meta_get(const Checkpoint& ck, const char* key) {
  try {
    return ck.meta.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(ck.section + " checkpoint: bad header field '" + key + "': " + e.what());
  }
}

}  // namespace

std::string encode_checkpoint(const Checkpoint& ck) {
  json header;
  header["section"] = ck.section;
  header["stage"] = ck.stage;
  header["meta"] = ck.meta;
  json arrays = json::array();
  for (const auto& [name, a] : ck.arrays) arrays.push_back({{"name", name}, {"rows", a.rows()}, {"cols", a.cols()}});
  header["arrays"] = arrays;
  const std::string h = header.dump();
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, h.size());
  out += h;
  for (const auto& [name, a] : ck.arrays) {
    for (double v : a.data()) put<double>(out, v);
  }
  out += raw_digest(out);
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  require_config(bytes.size() >= sizeof(kMagic) + 12 + kDigestBytes, "checkpoint: truncated");
  require_config(std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) == 0, "checkpoint: bad magic");
  const std::string_view body(bytes.data(), bytes.size() - kDigestBytes);
  require_config(raw_digest(body) == bytes.substr(bytes.size() - kDigestBytes), "checkpoint: digest mismatch");
  std::size_t at = sizeof(kMagic);
  const auto version = take<std::uint32_t>(bytes, at);
  require_config(version == kCheckpointVersion, "checkpoint: unsupported version " + std::to_string(version));
  const auto hlen = take<std::uint64_t>(bytes, at);
  require_config(at + hlen <= body.size(), "checkpoint: truncated header");
  json header;
  try {
    header = json::parse(bytes.substr(at, hlen));
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("checkpoint: bad header: ") + e.what());
  }
  at += hlen;
  Checkpoint ck;
  ck.section = header.at("section").get<std::string>();
  ck.stage = header.at("stage").get<std::string>();
  ck.meta = header.at("meta");
  for (const json& a : header.at("arrays")) {
    const auto rows = a.at("rows").get<std::size_t>();
    const auto cols = a.at("cols").get<std::size_t>();
    require_config(at + rows * cols * sizeof(double) <= body.size(), "checkpoint: truncated payload");
    std::vector<double> data(rows * cols);
    if (!data.empty()) std::memcpy(data.data(), bytes.data() + at, data.size() * sizeof(double));
    at += data.size() * sizeof(double);
    ck.arrays.emplace(a.at("name").get<std::string>(), Array(rows, cols, std::move(data)));
  }
  require_config(at == body.size(), "checkpoint: trailing bytes after payload");
  return ck;
}

std::string write_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  const std::string bytes = encode_checkpoint(ck);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require_config(out.good(), "cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require_config(out.good(), "failed writing checkpoint " + path.string());
  return sha256_hex(bytes);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require_config(in.good(), "cannot open checkpoint " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str());
}

Checkpoint backbone_checkpoint(const Backbone& backbone) {
  Checkpoint ck;
  ck.section = "backbone";
  ck.stage = "frozen";
  const BackboneConfig& c = backbone.config();
  ck.meta = {{"vocab_size", c.vocab_size}, {"width", c.width},       {"n_layers", c.n_layers},
             {"n_heads", c.n_heads},       {"max_seq_len", c.max_seq_len}, {"ffn_mult", c.ffn_mult},
             {"seed", c.seed},             {"checksum", backbone.checksum()}};
  for (const auto& [name, a] : backbone.params().named()) ck.arrays.emplace(name, *a);
  return ck;
}

Backbone backbone_from_checkpoint(const Checkpoint& ck) {
  expect_section(ck, "backbone");
  BackboneConfig c;
  c.vocab_size = meta_get<int>(ck, "vocab_size");
  c.width = meta_get<int>(ck, "width");
  c.n_layers = meta_get<int>(ck, "n_layers");
  c.n_heads = meta_get<int>(ck, "n_heads");
  c.max_seq_len = meta_get<int>(ck, "max_seq_len");
  c.ffn_mult = meta_get<int>(ck, "ffn_mult");
  c.seed = meta_get<std::uint64_t>(ck, "seed");
  c.validate();
  Backbone bb(c, BackboneParams::from_named(c, ck.arrays));
  require_config(bb.checksum() == meta_get<std::string>(ck, "checksum"), "backbone checkpoint: checksum mismatch");
  return bb;
}

Checkpoint controller_checkpoint(const ControllerParams& p, const ControllerConfig& cfg, int width,
                                 const std::string& stage) {
  Checkpoint ck;
  ck.section = "controller";
  ck.stage = stage;
  std::vector<double> centers, widths;
  for (const ExpertParams& e : p.experts) {
    centers.push_back(e.center);
    widths.push_back(e.width);
  }
  ck.meta = {{"width", width},
             {"experts", cfg.experts},
             {"bottleneck", cfg.bottleneck},
             {"router_hidden", cfg.router_hidden},
             {"expert_init_std", cfg.expert_init_std},
             {"seed", cfg.seed},
             {"window_centers", centers},
             {"window_widths", widths},
             {"scale", p.scale},
             {"gain_clip", p.gain_clip},
             {"route_layers", p.route_layers},
             {"intervention_layers", p.intervention_layers},
             {"uniform_mixture", p.uniform_mixture},
             {"policy", to_string(p.policy.kind)},
             {"stages",
              {{"gate_pretrained", p.stages.gate_pretrained},
               {"warmed_up", p.stages.warmed_up},
               {"fitted", p.stages.fitted},
               {"calibrated", p.stages.calibrated},
               {"fit_steps", p.stages.fit_steps}}},
             {"router_checksum", p.router_checksum()},
             {"experts_checksum", p.experts_checksum()}};
  for (const auto& [name, a] : p.named()) ck.arrays.emplace(name, *a);
  ck.arrays.emplace("policy.threshold", Array::scalar(p.policy.threshold));
  return ck;
}

ControllerParams controller_from_checkpoint(const Checkpoint& ck) {
  expect_section(ck, "controller");
  ControllerConfig cfg;
  cfg.experts = meta_get<int>(ck, "experts");
  cfg.bottleneck = meta_get<int>(ck, "bottleneck");
  cfg.router_hidden = meta_get<int>(ck, "router_hidden");
  cfg.expert_init_std = meta_get<double>(ck, "expert_init_std");
  cfg.seed = meta_get<std::uint64_t>(ck, "seed");
  cfg.window_centers = meta_get<std::vector<double>>(ck, "window_centers");
  cfg.window_widths = meta_get<std::vector<double>>(ck, "window_widths");
  cfg.scale = meta_get<double>(ck, "scale");
  cfg.gain_clip = meta_get<double>(ck, "gain_clip");
  cfg.route_layers = meta_get<std::vector<int>>(ck, "route_layers");
  cfg.intervention_layers = meta_get<std::vector<int>>(ck, "intervention_layers");
  cfg.uniform_mixture = meta_get<bool>(ck, "uniform_mixture");
  ControllerParams p = ControllerParams::from_named(ControllerParams::init(cfg, meta_get<int>(ck, "width")), ck.arrays);
  p.policy.kind = parse_gate_kind(meta_get<std::string>(ck, "policy"));
  p.policy.threshold = need(ck, "policy.threshold").item();
  const json& st = ck.meta.at("stages");
  p.stages.gate_pretrained = st.at("gate_pretrained").get<bool>();
  p.stages.warmed_up = st.at("warmed_up").get<bool>();
  p.stages.fitted = st.at("fitted").get<bool>();
  p.stages.calibrated = st.at("calibrated").get<bool>();
  p.stages.fit_steps = st.at("fit_steps").get<std::size_t>();
  require_config(p.router_checksum() == meta_get<std::string>(ck, "router_checksum") &&
                     p.experts_checksum() == meta_get<std::string>(ck, "experts_checksum"),
                 "controller checkpoint: checksum mismatch");
  return p;
}

Checkpoint veto_checkpoint(const VetoModel& v) {
  Checkpoint ck;
  ck.section = "veto";
  ck.stage = "fitted";
  ck.meta = {{"mode", to_string(v.mode)}, {"dim", v.dim()}};
  ck.arrays.emplace("weights", Array::row_vector(v.weights));
  ck.arrays.emplace("norm_mean", Array::row_vector(v.norm_mean));
  ck.arrays.emplace("norm_std", Array::row_vector(v.norm_std));
  ck.arrays.emplace("bias_threshold", Array::row_vector({v.bias, v.threshold}));
  return ck;
}

VetoModel veto_from_checkpoint(const Checkpoint& ck) {
  expect_section(ck, "veto");
  VetoModel v;
  v.mode = parse_threshold_mode(meta_get<std::string>(ck, "mode"));
  v.weights = need(ck, "weights").values();
  v.norm_mean = need(ck, "norm_mean").values();
  v.norm_std = need(ck, "norm_std").values();
  const Array& bt = need(ck, "bias_threshold");
  require_config(bt.size() == 2, "veto checkpoint: bias_threshold must hold two values");
  v.bias = bt[0];
  v.threshold = bt[1];
  const auto dim = meta_get<std::size_t>(ck, "dim");
  require_config(v.weights.size() == dim && v.norm_mean.size() == dim && v.norm_std.size() == dim,
                 "veto checkpoint: dimension mismatch");
  return v;
}

}  // namespace paving
