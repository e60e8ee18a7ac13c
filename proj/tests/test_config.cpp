#include "simplex_flows/config.hpp"
#include "simplex_flows/types.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

using namespace sflow;

TEST(RunConfig, EmptyTextGivesDefaults) {
  RunConfig cfg;
  cfg.merge_text("", "empty");
  EXPECT_EQ(cfg.values(), RunConfig::defaults());
  EXPECT_EQ(cfg.get_long("n"), 2);
  EXPECT_EQ(cfg.get_seed(), 7u);
}

TEST(RunConfig, FileThenOverride) {
  const auto path = std::filesystem::temp_directory_path() / "simplex_flows_cfg_test.ini";
  {
    std::ofstream out(path);
    out << "# comment\n[sweep]\nn = 10\ntol = 1e-3\n\ngrid = 0.5:1.5:11\n";
  }
  RunConfig cfg = RunConfig::load(path);
  EXPECT_EQ(cfg.get_long("n"), 10);
  EXPECT_DOUBLE_EQ(cfg.get_double("tol"), 1e-3);
  const GridSpec g = cfg.get_grid("grid");
  EXPECT_EQ(g.values().size(), 11u);
  EXPECT_DOUBLE_EQ(g.values()[5], 1.0);
  cfg.set("n", "2");
  EXPECT_EQ(cfg.get_long("n"), 2);
  std::filesystem::remove(path);
}

TEST(RunConfig, MalformedNumberNamesKeyAndLine) {
  RunConfig cfg;
  try {
    cfg.merge_text("n = 3\ndt = fast\n", "run.ini");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError &e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("run.ini:2"), std::string::npos) << msg;
    EXPECT_NE(msg.find("dt"), std::string::npos) << msg;
  }
}

TEST(RunConfig, RejectsUnknownKeysAndBadValues) {
  RunConfig cfg;
  EXPECT_THROW(cfg.set("learning_rat", "1"), ConfigError);
  EXPECT_THROW(cfg.set("n", "0"), ConfigError);
  EXPECT_THROW(cfg.set("n", "2.5"), ConfigError);
  EXPECT_THROW(cfg.set("dt", "-1"), ConfigError);
  EXPECT_THROW(cfg.set("mode", "online"), ConfigError);
  EXPECT_THROW(cfg.set("method", "adam"), ConfigError);
  EXPECT_THROW(cfg.set("grid", "1:0.5:3"), ConfigError);
  EXPECT_THROW(cfg.set("tol", "nan"), ConfigError);
  EXPECT_THROW(cfg.merge_text("just words", "x"), ConfigError);
  EXPECT_THROW(RunConfig::load("/nonexistent/run.ini"), ConfigError);
  EXPECT_NO_THROW(cfg.set("tol", "auto"));
  EXPECT_NO_THROW(cfg.set("grid", "auto"));
}

TEST(GridSpec, ParseAndValues) {
  const GridSpec g = GridSpec::parse("0.1:1.7:100");
  EXPECT_EQ(g.values().size(), 100u);
  EXPECT_DOUBLE_EQ(g.values().front(), 0.1);
  EXPECT_DOUBLE_EQ(g.values().back(), 1.7);
  EXPECT_EQ(GridSpec::parse("2:2:1").values(), std::vector<double>{2.0});
  EXPECT_THROW(GridSpec::parse("0.1:1.7"), ConfigError);
  EXPECT_THROW(GridSpec::parse("0:1:3"), ConfigError);
  EXPECT_THROW(GridSpec::parse("0.1:1:0"), ConfigError);
}
