#include <doctest.h>
#include <set>

#include <filesystem>
#include <fstream>

#include "mcinet/config.hpp"
#include "mcinet/errors.hpp"

using namespace mcinet;
using nlohmann::json;

namespace {

const std::filesystem::path kSourceDir = MCINET_SOURCE_DIR;

json read_json(const std::filesystem::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

// Collects dotted key paths of every leaf in a config document.
void leaf_keys(const json& j, const std::string& prefix, std::set<std::string>& out) {
  for (const auto& [k, v] : j.items()) {
    const std::string path = prefix.empty() ? k : prefix + "." + k;
    if (v.is_object()) {
      leaf_keys(v, path, out);
    } else {
      out.insert(path);
    }
  }
}

void schema_keys(const json& schema, const std::string& prefix, std::set<std::string>& out) {
  for (const auto& [k, v] : schema.at("properties").items()) {
    const std::string path = prefix.empty() ? k : prefix + "." + k;
    if (v.contains("properties")) {
      schema_keys(v, path, out);
    } else {
      out.insert(path);
    }
  }
}

}  // namespace

TEST_SUITE("config") {
  TEST_CASE("defaults") {
    RunConfig c;
    CHECK(c.train.lr == 0.001);
    CHECK(c.train.momentum == 0.9);
    CHECK(c.model.mlim.heads == 4);
    CHECK(c.model.backbone.input_size == 64);
    CHECK(c.eval.episodes == 200);
    CHECK(c.train.resolved_lambda() == 0.6);
    c.train.k = 5;
    CHECK(c.train.resolved_lambda() == 1.0);
    c.train.lambda = 0.3;
    CHECK(c.train.resolved_lambda() == 0.3);
    CHECK_NOTHROW(RunConfig{}.validate());
  }

  TEST_CASE("json round-trip preserves every field and the hash") {
    RunConfig c;
    c.model.mcfm.low_level_source = LowLevelSource::backbone_block2;
    c.model.mlim.aggregate = Aggregate::raw;
    c.model.msmp.skip_support = SkipSupport::whole_image;
    c.model.msmp.aspp_rates = {1, 3};
    c.train.lambda = 0.25;
    c.train.seed = 12345678901ULL;
    const RunConfig back = run_config_from_json(to_json(c));
    CHECK(to_json(back) == to_json(c));
    CHECK(config_hash(back) == config_hash(c));
    CHECK(config_hash(RunConfig{}) != config_hash(c));
  }

  TEST_CASE("strict parsing") {
    CHECK_THROWS_WITH_AS(run_config_from_json(json::parse(R"({"train": {"bogus": 1}})")),
                         "unknown config key: train.bogus", ConfigError);
    CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"model": {"extra": {}}})")), ConfigError);
    CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"train": {"steps": 1.5}})")), ConfigError);
    CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"train": {"fixed_episode": 1}})")), ConfigError);
    CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"model": {"mlim": {"aggregate": "mean"}}})")), ConfigError);
    CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"train": {"lambda": -1}})")), ConfigError);
    CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"train": {"fold": 4}})")), ConfigError);
    CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"model": {"backbone": {"input_size": 60}}})")), ConfigError);
    CHECK_THROWS_AS(run_config_from_json(json::parse("[]")), ConfigError);
    CHECK_THROWS_AS(load_run_config("/nonexistent/config.json"), ConfigError);
  }

  TEST_CASE("partial documents keep defaults") {
    const RunConfig c = run_config_from_json(json::parse(R"({"train": {"lr": 0.05}})"));
    CHECK(c.train.lr == 0.05);
    CHECK(c.train.momentum == 0.9);
    CHECK(c.model.msmp.width == 64);
  }

  TEST_CASE("schema documents exactly the accepted keys") {
    std::set<std::string> emitted, documented;
    leaf_keys(to_json(RunConfig{}), "", emitted);
    schema_keys(read_json(kSourceDir / "docs" / "config.schema.json"), "", documented);
    CHECK(emitted == documented);
  }

  TEST_CASE("shipped presets parse") {
    for (const auto& entry : std::filesystem::directory_iterator(kSourceDir / "configs")) {
      CAPTURE(entry.path().string());
      CHECK_NOTHROW(load_run_config(entry.path().string()));
    }
    CHECK(to_json(load_run_config((kSourceDir / "configs" / "default.json").string())) == to_json(RunConfig{}));
    CHECK(load_run_config((kSourceDir / "configs" / "tiny.json").string()).model.backbone.channels_per_scale ==
          tiny_model_config().backbone.channels_per_scale);
  }
}
