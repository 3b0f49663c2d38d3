#include <doctest.h>

#include <fstream>

#include "../support/fixtures.hpp"
#include "jepa/config.hpp"

using namespace jepa;
using nlohmann::json;

namespace {

std::string config_error(const json& j) {
  try {
    run_config_from_json(j);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("an empty object yields the defaults") {
  const RunConfig c = run_config_from_json(json::object());
  CHECK(c.packer.rows == 32);
  CHECK(c.packer.ctx_capacity == 64);
  CHECK(c.packer.tgt_capacity == 192);
  CHECK(c.train.repetition == 4);
  CHECK(c.train.drop_rate == 0.75);
  CHECK(c.train.lr.lr0 == 1e-4);
  CHECK(c.train.lr.peak == 5e-4);
  CHECK(c.train.lr.warmup == 10'000);
  CHECK(c.train.ema.start == 0.95);
  CHECK(c.train.ema.end == 0.9995);
  CHECK(c.train.adamw.beta2 == 0.95);
  CHECK(c.train.adamw.weight_decay == 0.05);
  CHECK(c.model.postproc == PostprocMode::kLayerNorm);
  CHECK(c.pipeline.window_size == 2);
}

TEST_CASE("json round trip") {
  RunConfig c;
  c.seed = 123;
  c.dataset = "/tmp/x/index.csv";
  c.model.postproc = PostprocMode::kDynTanh;
  c.model.dyntanh_init = 0.5;
  c.pipeline.scale_lo = 0.3;
  c.train.ema.ramp = 77;
  const json j = to_json(c);
  const RunConfig d = run_config_from_json(j);
  CHECK(to_json(d) == j);
  CHECK(d.train.seed == 123);
  CHECK(config_hash(c) == config_hash(d));
  RunConfig e = d;
  e.train.drop_rate = 0.5;
  CHECK(config_hash(e) != config_hash(d));
}

TEST_CASE("unknown keys and wrong types name the field") {
  CHECK(config_error({{"model", {{"hiden_dim", 8}}}}) == "model.hiden_dim: unknown key");
  CHECK(config_error({{"colour", 1}}) == "colour: unknown key");
  CHECK(config_error({{"train", {{"lr", {{"peak", "high"}}}}}}) == "train.lr.peak: expected a number");
  CHECK(config_error({{"packer", {{"rows", 2.5}}}}) == "packer.rows: expected an integer");
  CHECK(config_error({{"seed", -1}}) == "seed: expected a non-negative integer");
  CHECK(config_error({{"pipeline", {{"scale_range", {0.1}}}}}) == "pipeline.scale_range: expected [lo, hi]");
  CHECK(config_error({{"model", 3}}) == "model: expected an object");
  CHECK(config_error({{"model", {{"postproc", "rms"}}}}).starts_with("model.postproc: "));
}

TEST_CASE("validation") {
  RunConfig c;
  c.pipeline.patch_size = 8;
  CHECK_THROWS_AS(c.validate(false), ConfigError);
  c = {};
  c.checkpoint_every = 0;
  CHECK_THROWS_AS(c.validate(false), ConfigError);
  c = {};
  c.dataset = "/definitely/not/here.csv";
  CHECK_NOTHROW(c.validate(false));
  CHECK_THROWS_AS(c.validate(true), ConfigError);
}

TEST_CASE("relative dataset paths resolve against the config file") {
  const auto dir = jepa::testing::scratch_dir("config_paths");
  std::filesystem::create_directories(dir / "conf");
  std::ofstream(dir / "conf" / "run.json") << R"({"dataset": "../data/index.csv", "output_dir": "out"})";
  const RunConfig c = load_run_config(dir / "conf" / "run.json");
  CHECK(c.dataset == dir / "conf" / "../data/index.csv");
  CHECK(c.output_dir == "out");

  std::ofstream(dir / "bad.json") << "{ not json";
  CHECK_THROWS_AS(load_run_config(dir / "bad.json"), ConfigError);
  CHECK_THROWS_AS(load_run_config(dir / "missing.json"), ConfigError);
}

TEST_CASE("fnv1a reference values") {
  CHECK(fnv1a_hex("") == "cbf29ce484222325");
  CHECK(fnv1a_hex("a") == "af63dc4c8601ec8c");
  CHECK(fnv1a_hex("foobar") == "85944171f73967e8");
}
