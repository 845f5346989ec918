#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cascade/cli.hpp"
#include "cascade/config.hpp"

namespace fs = std::filesystem;
using cascade::cli::run;

namespace {

const char* kSimConfig = R"({"seed": 7, "schema": {"labels": 3},
 "model": {"name": "k", "baseline": {"type": "homogeneous", "rate": 0.5, "prior": {"probs": [0.5, 0.3, 0.2]}},
  "components": [{"name": "self", "fertility": {"type": "constant", "alpha": ALPHA},
    "transition": {"type": "categorical", "theta": [[0.8,0.1,0.1],[0.1,0.8,0.1],[0.1,0.1,0.8]]},
    "delay": {"type": "exponential", "rate": 2}}]}})";

const char* kCompareConfig = R"({"schema": {"labels": 3}, "models": [
 {"name": "base", "baseline": {"type": "homogeneous", "rate": 1, "prior": "empirical"}, "components": []},
 {"name": "kern", "baseline": {"type": "homogeneous", "rate": 1, "prior": "empirical"},
  "components": [{"name": "self", "fertility": {"type": "constant", "alpha": 0.2},
    "transition": {"type": "categorical", "theta": [[0.4,0.3,0.3],[0.3,0.4,0.3],[0.3,0.3,0.4]]},
    "delay": {"type": "exponential", "rate": 1}}]}]})";

class Cli : public ::testing::Test {
 protected:
  fs::path dir;

  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir = fs::temp_directory_path() / (std::string("cascade_cli_") + info->name());
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }

  std::string write(const std::string& name, const std::string& text) {
    std::ofstream(dir / name) << text;
    return (dir / name).string();
  }
  std::string sim_config(const std::string& alpha, const std::string& extra = "") {
    std::string s = kSimConfig;
    s.replace(s.find("ALPHA"), 5, alpha);
    if (!extra.empty()) s.insert(1, extra + ",");
    return write("sim_" + alpha + ".json", s);
  }
  static std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
  }
  int simulate(const std::string& config, const std::string& out, double horizon, int seed = 7) {
    return run({"cascade", "simulate", "--config", config, "--out", (dir / out).string(), "--horizon",
                std::to_string(horizon), "--seed", std::to_string(seed)});
  }
};

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST_F(Cli, ZeroFertilityGivesRootsOnly) {
  ASSERT_EQ(simulate(sim_config("0"), "o", 200.0), 0);
  const auto forest = lines(slurp(dir / "o" / "forest.jsonl"));
  ASSERT_FALSE(forest.empty());
  for (const auto& l : forest) EXPECT_TRUE(nlohmann::json::parse(l).at("parent").is_null()) << l;
}

TEST_F(Cli, SameSeedSameFiles) {
  const auto cfg = sim_config("0.5");
  ASSERT_EQ(simulate(cfg, "a", 300.0), 0);
  ASSERT_EQ(simulate(cfg, "b", 300.0), 0);
  ASSERT_EQ(simulate(cfg, "c", 300.0, 8), 0);
  for (const char* f : {"events.jsonl", "forest.jsonl"})
    EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
  EXPECT_NE(slurp(dir / "a" / "events.jsonl"), slurp(dir / "c" / "events.jsonl"));
}

TEST_F(Cli, SupercriticalHitsCap) {
  EXPECT_EQ(simulate(sim_config("1.5", "\"max_events\": 5000"), "o", 1000.0), 4);
  EXPECT_FALSE(fs::exists(dir / "o" / "events.jsonl"));
}

TEST_F(Cli, ZeroItersReturnsStartingModel) {
  const auto cfg = sim_config("0.5");
  ASSERT_EQ(simulate(cfg, "s", 200.0), 0);
  ASSERT_EQ(run({"cascade", "fit", "--config", cfg, "--data", (dir / "s" / "events.jsonl").string(), "--out",
                 (dir / "f").string(), "--iters", "0"}),
            0);
  std::ifstream in(dir / "f" / "model.json");
  const auto fitted = nlohmann::json::parse(in);
  std::ifstream c(cfg);
  const auto start = cascade::to_json(cascade::model_from_json(nlohmann::json::parse(c).at("model")));
  EXPECT_EQ(fitted, start);
}

TEST_F(Cli, RefitFromFittedModelConverges) {
  const auto cfg = sim_config("0.5");
  ASSERT_EQ(simulate(cfg, "s", 500.0), 0);
  const auto data = (dir / "s" / "events.jsonl").string();
  ASSERT_EQ(run({"cascade", "fit", "--config", cfg, "--data", data, "--out", (dir / "f").string(), "--iters", "500",
                 "--tol", "1e-10"}),
            0);
  std::ifstream in(dir / "f" / "model.json");
  const nlohmann::json refit_cfg = {{"model", nlohmann::json::parse(in)}};
  const auto path = write("refit.json", refit_cfg.dump());
  ASSERT_EQ(run({"cascade", "fit", "--config", path, "--data", data, "--out", (dir / "g").string(), "--tol", "1e-8"}), 0);
  const auto trace = lines(slurp(dir / "g" / "trace.csv"));
  // header, the starting row and at most a couple of iterations
  EXPECT_LE(trace.size(), 4u);
}

TEST_F(Cli, CorruptDataFailsWithoutOutputs) {
  const auto data = write("bad.jsonl", "{\"T\": 10, \"schema\": {\"labels\": 3}}\n{\"t\": 1, \"label\": 1}\n{\"t\": oops}\n");
  const auto cfg = write("cmp.json", kCompareConfig);
  EXPECT_EQ(run({"cascade", "fit", "--config", cfg, "--data", data, "--out", (dir / "f").string()}), 3);
  EXPECT_EQ(run({"cascade", "compare", "--config", cfg, "--data", data, "--out", (dir / "c").string()}), 3);
  EXPECT_FALSE(fs::exists(dir / "f" / "model.json"));
  EXPECT_FALSE(fs::exists(dir / "f" / "trace.csv"));
  EXPECT_FALSE(fs::exists(dir / "c" / "compare.csv"));
}

TEST_F(Cli, ConfigErrorsExitTwo) {
  EXPECT_EQ(run({"cascade", "fit", "--config", (dir / "missing.json").string(), "--data", "x", "--out", "y"}), 2);
  EXPECT_EQ(run({"cascade", "simulate", "--bogus"}), 2);
  const auto bad = write("bad.json", R"({"model": {"name": "m", "baseline": {"type": "homogeneous", "rate": -1, "prior": {"probs": [1]}}, "components": []}, "surprise": 1})");
  EXPECT_EQ(run({"cascade", "simulate", "--config", bad, "--out", (dir / "o").string(), "--horizon", "5"}), 2);
}

TEST_F(Cli, CompareDuplicateModelsGiveIdenticalRows) {
  const auto cfg = write("cmp.json", kCompareConfig);
  ASSERT_EQ(simulate(sim_config("0.5"), "s", 400.0), 0);
  ASSERT_EQ(run({"cascade", "compare", "--config", cfg, "--config", cfg, "--data",
                 (dir / "s" / "events.jsonl").string(), "--out", (dir / "c").string()}),
            0);
  const auto rows = lines(slurp(dir / "c" / "compare.csv"));
  ASSERT_EQ(rows.size(), 5u);
  EXPECT_EQ(rows[0], "model,train_ll,test_ll,status");
  EXPECT_EQ(rows[1], rows[3]);
  EXPECT_EQ(rows[2], rows[4]);
}

TEST_F(Cli, CompareSingleEventKeepsEveryRow) {
  const auto cfg = write("cmp.json", kCompareConfig);
  const auto data = write("one.jsonl", "{\"T\": 10, \"schema\": {\"labels\": 3}}\n{\"t\": 2.5, \"label\": 2}\n");
  ASSERT_EQ(run({"cascade", "compare", "--config", cfg, "--data", data, "--out", (dir / "c").string()}), 0);
  const auto rows = lines(slurp(dir / "c" / "compare.csv"));
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[1].substr(0, 5), "base,");
  EXPECT_EQ(rows[2].substr(0, 5), "kern,");
}

namespace {

// A directed ring with a chord, and the same nodes without edges.
const char* kGraph = "{\"node\": \"a\", \"out\": [\"b\"]}\n{\"node\": \"b\", \"out\": [\"c\"]}\n"
                     "{\"node\": \"c\", \"out\": [\"a\", \"d\"]}\n{\"node\": \"d\", \"out\": [\"a\"]}\n";
const char* kIsolated = "{\"node\": \"a\"}\n{\"node\": \"b\"}\n{\"node\": \"c\"}\n{\"node\": \"d\"}\n";

}  // namespace

class GraphCli : public Cli {
 protected:
  std::string events() {
    // deterministic stream: nodes fire in turn, types follow a fixed pattern
    std::ostringstream s;
    s << "{\"T\": 100.0, \"schema\": {\"types\": 2, \"nodes\": true}}\n";
    const char* names[] = {"a", "b", "c", "d"};
    double t = 0.0;
    for (int i = 0; i < 240; ++i) {
      t += 0.2 + 0.3 * ((i * 7) % 5) / 5.0;
      if (t > 100.0) break;
      s << "{\"t\": " << t << ", \"type\": " << 1 + (i * 3 % 7 < 4) << ", \"node\": \"" << names[i % 4]
        << "\"}\n";
    }
    return write("ev.jsonl", s.str());
  }
  int graph_fit(const std::string& graph, const std::string& out, const std::string& variant, int workers) {
    return run({"cascade", "graph-fit", "--graph", graph, "--data", events(), "--out", (dir / out).string(),
                "--variant", variant, "--workers", std::to_string(workers), "--rounds", "1", "--iters", "10"});
  }
};

TEST_F(GraphCli, WorkersDoNotChangeOutputs) {
  const auto g = write("g.jsonl", kGraph);
  ASSERT_EQ(graph_fit(g, "w1", "all", 1), 0);
  ASSERT_EQ(graph_fit(g, "w4", "all", 4), 0);
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(dir / "w1")) {
    ++files;
    EXPECT_EQ(slurp(e.path()), slurp(dir / "w4" / e.path().filename())) << e.path().filename();
  }
  EXPECT_GE(files, 5u);
  const auto summary = lines(slurp(dir / "w1" / "summary.csv"));
  EXPECT_EQ(summary.front(), "variant,c,pooling,train_ll,val_ll,test_ll");
  EXPECT_EQ(summary.size(), 5u);
}

TEST_F(GraphCli, NoEdgesNoNeighborsMatchesShared) {
  const auto g = write("g.jsonl", kIsolated);
  ASSERT_EQ(graph_fit(g, "n", "no_neighbors", 1), 0);
  ASSERT_EQ(graph_fit(g, "s", "shared_transition", 1), 0);
  auto ll = [&](const char* sub) {
    std::vector<double> v;
    for (const auto& l : lines(slurp(dir / sub / "nodes.jsonl"))) {
      const auto j = nlohmann::json::parse(l);
      v.push_back(j.at("train_ll").get<double>());
      v.push_back(j.at("test_ll").get<double>());
    }
    return v;
  };
  const auto n = ll("n"), s = ll("s");
  ASSERT_EQ(n.size(), s.size());
  ASSERT_FALSE(n.empty());
  for (std::size_t i = 0; i < n.size(); ++i) EXPECT_NEAR(n[i], s[i], 1e-6) << i;
}

TEST_F(GraphCli, MissingNodeExitsThree) {
  const auto g = write("g.jsonl", "{\"node\": \"a\", \"out\": [\"b\"]}\n{\"node\": \"b\"}\n");
  testing::internal::CaptureStderr();
  EXPECT_EQ(graph_fit(g, "o", "shared_transition", 1), 3);
  const std::string err = testing::internal::GetCapturedStderr();
  EXPECT_NE(err.find("'c'"), std::string::npos) << err;
  EXPECT_FALSE(fs::exists(dir / "o" / "summary.csv"));
}
