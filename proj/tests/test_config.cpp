#include <doctest.h>

#include "macow/config.hpp"

using namespace macow;

namespace {

ErrorCode code_of(const std::string& text) {
  try {
    parse_config(text);
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode{};
}

}  // namespace

TEST_CASE("depth lists parse and print") {
  auto d = parse_depths("[[2,2],2]");
  REQUIRE(d.size() == 2);
  CHECK(d[0] == std::vector<std::size_t>{2, 2});
  CHECK(d[1] == std::vector<std::size_t>{2});
  CHECK(format_depths(d) == "[[2,2],2]");
  CHECK(format_depths(parse_depths("[ 3 , [1, 4] ]")) == "[3,[1,4]]");
  CHECK_THROWS_AS(parse_depths("[[2,2],"), Error);
  CHECK_THROWS_AS(parse_depths("[]"), Error);
  CHECK_THROWS_AS(parse_depths("[0]"), Error);
  CHECK_THROWS_AS(parse_depths("[-1]"), Error);
  CHECK_THROWS_AS(parse_depths("[[]]"), Error);
}

TEST_CASE("config text round-trips") {
  RunConfig cfg;
  cfg.model.height = 16;
  cfg.model.channels = 3;
  cfg.model.depths = {{1, 1}, {1, 1}, {3}};
  cfg.model.coupling = CouplingMode::kAdditive;
  cfg.model.dequant = DequantMode::kUniform;
  cfg.train.learning_rate = 3.3e-4;
  cfg.train.precision = Precision::kF64;
  cfg.train.seed = 1234567890123ull;
  const auto text = config_text(cfg);
  auto back = parse_config(text);
  CHECK(back.model == cfg.model);
  CHECK(back.train == cfg.train);
  CHECK(config_text(back) == text);
}

TEST_CASE("comments and blanks are ignored") {
  auto cfg = parse_config("# toy run\n\n  steps = 10   # short\nmultiscale=original\ndepths = [2, 2]\n");
  CHECK(cfg.train.steps == 10);
  CHECK(cfg.model.multiscale == MultiScale::kOriginal);
  CHECK(cfg.model.split_factor() == 2);
}

TEST_CASE("bad config text is rejected") {
  CHECK(code_of("colour = red\n") == ErrorCode::kConfig);
  CHECK(code_of("steps = 1\nsteps = 2\n") == ErrorCode::kConfig);
  CHECK(code_of("steps = -3\n") == ErrorCode::kConfig);
  CHECK(code_of("learning_rate = fast\n") == ErrorCode::kConfig);
  CHECK(code_of("steps\n") == ErrorCode::kConfig);
  CHECK(code_of("n_bits = 9\n") == ErrorCode::kConfig);
  CHECK(code_of("precision = f16\n") == ErrorCode::kConfig);
  CHECK_THROWS_AS(load_config("/nonexistent/run.cfg"), Error);
}

TEST_CASE("architecture validation") {
  ModelConfig m;
  CHECK_NOTHROW(m.validate());
  m.height = 6;  // 6 -> 3 is odd at the second squeeze
  CHECK_THROWS_AS(m.validate(), Error);
  m = ModelConfig{};
  m.depths = {{2}, {2}};  // fine-grained non-last level needs two blocks
  CHECK_THROWS_AS(m.validate(), Error);
  m.multiscale = MultiScale::kOriginal;
  CHECK_NOTHROW(m.validate());
  m.depths = {{2}, {1, 1}};
  CHECK_THROWS_AS(m.validate(), Error);
  m = ModelConfig{};
  m.depths = {{1, 1, 1, 1}};  // four quarter splits would empty the level
  CHECK_THROWS_AS(m.validate(), Error);
}

TEST_CASE("single keys can be overridden and read back") {
  RunConfig cfg;
  set_config_value(cfg, "dequant", "unif");
  set_config_value(cfg, "seed", "42");
  CHECK(cfg.model.dequant == DequantMode::kUniform);
  CHECK(cfg.train.seed == 42);
  CHECK(config_value(cfg, "dequant") == "unif");
  CHECK(config_value(cfg, "depths") == "[[2,2],2]");
  CHECK_THROWS_AS(set_config_value(cfg, "seeds", "1"), Error);
  CHECK_THROWS_AS(set_config_value(cfg, "seed", ""), Error);
  CHECK_THROWS_AS(config_value(cfg, "nope"), Error);
}
