// Copyright 2026 The Paving Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "paving/checkpoint.hpp"
#include "paving/errors.hpp"
#include "paving/pipeline.hpp"
#include "world.hpp"

namespace paving {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using testing::trained;
using testing::world;

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "paving-harness-test";
  fs::create_directories(dir);
  return dir / name;
}

TEST(Config, JsonRoundTripAndDigest) {
  RunConfig cfg = desk_defaults();
  cfg.schedule.fit_lr = 1e-3;
  cfg.baselines.enabled = true;
  const RunConfig back = config_from_json(to_json(cfg));
  EXPECT_EQ(canonical_json(back), canonical_json(cfg));
  EXPECT_EQ(config_digest(back), config_digest(cfg));
  EXPECT_EQ(config_digest(cfg).size(), 64u);
  cfg.schedule.fit_lr = 2e-3;
  EXPECT_NE(config_digest(back), config_digest(cfg));
  // An empty object is the desk default.
  EXPECT_EQ(canonical_json(config_from_json(json::object())), canonical_json(desk_defaults()));
}

TEST(Config, RejectsUnknownKeysAndWrongTypes) {
  EXPECT_THROW(config_from_json(json{{"sede", 3}}), ConfigError);
  EXPECT_THROW(config_from_json(json{{"schedule", {{"horizonn", 3}}}}), ConfigError);
  EXPECT_THROW(config_from_json(json{{"seed", "three"}}), ConfigError);
  EXPECT_THROW(config_from_json(json{{"judge", "oracle-of-delphi"}}), ConfigError);
  EXPECT_THROW(config_from_json(json{{"schedule", {{"horizon", 0}}}}), ConfigError);
}

TEST(Config, LoadFromFile) {
  const fs::path p = scratch("cfg.json");
  std::ofstream(p) << R"({"seed": 9, "veto": {"enabled": false}})";
  const RunConfig cfg = load_config(p);
  EXPECT_EQ(cfg.seed, 9u);
  EXPECT_FALSE(cfg.veto.enabled);
  std::ofstream(p) << "{not json";
  EXPECT_THROW(load_config(p), ConfigError);
  EXPECT_THROW(load_config(scratch("absent.json")), ConfigError);
}

TEST(Config, ApplySeedReseedsEveryComponent) {
  RunConfig a = desk_defaults();
  RunConfig b = desk_defaults();
  apply_seed(a, 1);
  apply_seed(b, 2);
  EXPECT_NE(a.seed, b.seed);
  EXPECT_NE(a.backbone.seed, b.backbone.seed);
  EXPECT_NE(a.pretrain.seed, b.pretrain.seed);
  EXPECT_NE(a.controller.seed, b.controller.seed);
  EXPECT_NE(a.schedule.seed, b.schedule.seed);
  RunConfig c = desk_defaults();
  apply_seed(c, 1);
  EXPECT_EQ(config_digest(a), config_digest(c));
}

TEST(Checkpoint, BackboneRoundTrip) {
  const Backbone& bb = *world().backbone;
  const fs::path p = scratch("backbone.ckpt");
  const std::string sha = write_checkpoint(p, backbone_checkpoint(bb));
  EXPECT_EQ(sha.size(), 64u);
  const Backbone back = backbone_from_checkpoint(read_checkpoint(p));
  EXPECT_EQ(back.checksum(), bb.checksum());
  const Tokens& prompt = world().splits.eval.front().tokens;
  EXPECT_EQ(back.forward(prompt).step_logits, bb.forward(prompt).step_logits);
}

TEST(Checkpoint, ControllerRoundTripKeepsPolicy) {
  const auto& t = trained();
  const Checkpoint ck = controller_checkpoint(t.params, testing::world_controller_config(),
                                              static_cast<int>(world().backbone->width()), "calibrated");
  const ControllerParams back = controller_from_checkpoint(decode_checkpoint(encode_checkpoint(ck)));
  EXPECT_EQ(back.router_checksum(), t.params.router_checksum());
  EXPECT_EQ(back.experts_checksum(), t.params.experts_checksum());
  EXPECT_EQ(back.policy.kind, t.params.policy.kind);
  EXPECT_EQ(back.policy.threshold, t.params.policy.threshold);
  EXPECT_EQ(back.intervention_layers, t.params.intervention_layers);
  EXPECT_EQ(back.scale, t.params.scale);

  ControllerParams inf = t.params;
  inf.policy.threshold = std::numeric_limits<double>::infinity();
  const Checkpoint ck2 = controller_checkpoint(inf, testing::world_controller_config(), 16, "gate");
  EXPECT_EQ(controller_from_checkpoint(decode_checkpoint(encode_checkpoint(ck2))).policy.threshold,
            inf.policy.threshold);
}

TEST(Checkpoint, VetoRoundTrip) {
  const VetoModel& v = trained().veto;
  const VetoModel back = veto_from_checkpoint(decode_checkpoint(encode_checkpoint(veto_checkpoint(v))));
  EXPECT_EQ(back.weights, v.weights);
  EXPECT_EQ(back.bias, v.bias);
  EXPECT_EQ(back.threshold, v.threshold);
  EXPECT_EQ(back.norm_mean, v.norm_mean);
  EXPECT_EQ(back.norm_std, v.norm_std);
}

TEST(Checkpoint, TamperingIsDetected) {
  std::string bytes = encode_checkpoint(veto_checkpoint(trained().veto));
  std::string flipped = bytes;
  flipped[flipped.size() / 2] ^= 0x01;
  EXPECT_THROW(decode_checkpoint(flipped), ConfigError);
  std::string magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW(decode_checkpoint(magic), ConfigError);
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, 20)), ConfigError);
  // A veto checkpoint is not a controller.
  EXPECT_THROW(controller_from_checkpoint(decode_checkpoint(bytes)), ConfigError);
}

TEST(RunSummary, AppendsOneJsonLinePerEvent) {
  const fs::path p = scratch("summary.jsonl");
  fs::remove(p);
  {
    RunSummary s("test", desk_defaults(), p);
    s.event("note", {{"k", 1}});
    s.timing("stage", 0.5);
    EXPECT_EQ(s.config_digest(), config_digest(desk_defaults()));
    EXPECT_EQ(s.events().size(), 3u);
  }
  std::ifstream in(p);
  std::string line;
  std::vector<json> lines;
  while (std::getline(in, line)) lines.push_back(json::parse(line));
  ASSERT_EQ(lines.size(), 3u);
  EXPECT_EQ(lines[0]["event"], "start");
  EXPECT_EQ(lines[1]["data"]["k"], 1);
}

TEST(Pipeline, AblationNamesAndLateLayers) {
  EXPECT_EQ(late_layers(8), (std::vector<int>{6, 7, 8}));
  EXPECT_EQ(late_layers(4), (std::vector<int>{3, 4}));
  for (auto v : {AblationVariant::full, AblationVariant::uniform_mixture, AblationVariant::no_warmup,
                 AblationVariant::late_layers})
    EXPECT_EQ(parse_ablation_variant(to_string(v)), v);
  EXPECT_THROW(parse_ablation_variant("none"), ConfigError);
  EXPECT_THROW(make_judge("nobody"), ConfigError);
}

}  // namespace
}  // namespace paving
