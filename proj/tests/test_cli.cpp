#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::string kCli = CONPER_CLI_PATH;

// Runs the CLI inside `dir` so every path in the manifests is relative.
int run(const fs::path& dir, const std::string& args) {
  const std::string cmd = "cd '" + dir.string() + "' && '" + kCli + "' " + args + " > cli.log 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json manifest(const fs::path& p) {
  json j = json::parse(slurp(p));
  j.erase("created_at");
  return j;
}

fs::path fresh_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("conper_cli_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

const std::string kModel = "--hidden 8 --layers 1 --heads 2 --ff 16 --graph-attention 4 --bpe-merges 60";

void pipeline_run(const fs::path& d) {
  ASSERT_EQ(run(d, "synth --n 60 --seed 3 --out data.jsonl --triples-out triples.tsv"), 0) << slurp(d / "cli.log");
  ASSERT_EQ(run(d, "preprocess --data data.jsonl --out-dir ann --triples triples.tsv"), 0) << slurp(d / "cli.log");
  for (const char* stage : {"target", "plot", "story"}) {
    ASSERT_EQ(run(d, std::string("train --stage ") + stage +
                         " --data data.jsonl --annotations ann/annotations.jsonl --triples triples.tsv"
                         " --checkpoint m.ckpt --epochs 1 --lr 1e-2 " + kModel),
              0)
        << slurp(d / "cli.log");
  }
  ASSERT_EQ(run(d, "generate --checkpoint m.ckpt --data data.jsonl --split test --out gen.jsonl --traces traces.jsonl"
                   " --seed 5 --max-keywords 6 --max-story-tokens 40 --max-target-tokens 20"),
            0)
      << slurp(d / "cli.log");
}

}  // namespace

TEST(Cli, EndToEndWithManifests) {
  const auto d = fresh_dir("e2e");
  pipeline_run(d);
  for (const char* f : {"data.jsonl.synth.manifest.json", "ann/preprocess.manifest.json", "m.ckpt.train-target.manifest.json",
                        "m.ckpt.train-plot.manifest.json", "m.ckpt.train-story.manifest.json",
                        "gen.jsonl.generate.manifest.json", "ann/annotations.jsonl", "ann/graph_init.jsonl", "ann/stats.txt"})
    EXPECT_TRUE(fs::exists(d / f)) << f;

  const auto m = json::parse(slurp(d / "m.ckpt.train-plot.manifest.json"));
  EXPECT_EQ(m.at("command"), "train");
  EXPECT_EQ(m.at("config").at("stage"), "plot");
  EXPECT_TRUE(m.at("inputs").contains("data.jsonl"));
  EXPECT_TRUE(m.at("outputs").contains("m.ckpt"));
  EXPECT_TRUE(m.contains("created_at"));

  std::istringstream gen(slurp(d / "gen.jsonl"));
  std::string line;
  std::size_t n = 0;
  while (std::getline(gen, line)) {
    const auto j = json::parse(line);
    for (const char* k : {"id", "target", "plan", "story", "fallback_flag"}) EXPECT_TRUE(j.contains(k)) << k;
    ++n;
  }
  EXPECT_GT(n, 0u);

  ASSERT_EQ(run(d, "evaluate --checkpoint m.ckpt --data data.jsonl --split test --generations gen.jsonl"
                   " --classifier pc.json --out metrics.json --pc-epochs 2"),
            0)
      << slurp(d / "cli.log");
  const auto metrics = json::parse(slurp(d / "metrics.json")).at("test");
  for (const char* k : {"B-1", "B-2", "D-1", "D-2", "D-3", "D-4", "BS-t", "BS-m", "PC"}) EXPECT_TRUE(metrics.contains(k)) << k;
  EXPECT_TRUE(fs::exists(d / "pc.json"));

  ASSERT_EQ(run(d, "controllability --checkpoint m.ckpt --data data.jsonl --split test --classifier pc.json"
                   " --out control.json --k 3 --max-story-tokens 20 --max-keywords 3"),
            0)
      << slurp(d / "cli.log");
  EXPECT_TRUE(json::parse(slurp(d / "control.json")).contains("controllability"));
  ASSERT_EQ(run(d, "trace-report --traces traces.jsonl --out report.txt"), 0) << slurp(d / "cli.log");
  EXPECT_FALSE(slurp(d / "report.txt").empty());
  fs::remove_all(d);
}

TEST(Cli, RepeatedRunsAreByteIdentical) {
  const auto a = fresh_dir("det_a");
  const auto b = fresh_dir("det_b");
  pipeline_run(a);
  pipeline_run(b);
  for (const char* f : {"data.jsonl", "triples.tsv", "ann/annotations.jsonl", "ann/graph_init.jsonl", "m.ckpt", "gen.jsonl",
                        "traces.jsonl"})
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  for (const char* f : {"data.jsonl.synth.manifest.json", "ann/preprocess.manifest.json", "m.ckpt.train-story.manifest.json",
                        "gen.jsonl.generate.manifest.json"})
    EXPECT_EQ(manifest(a / f), manifest(b / f)) << f;
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Cli, ExitCodes) {
  const auto d = fresh_dir("codes");
  EXPECT_EQ(run(d, ""), 1);
  EXPECT_EQ(run(d, "train --stage bogus --data x --annotations y --checkpoint z"), 1);
  std::ofstream(d / "bad.ini") << "[synth]\nn = 10\nbogus_key = 3\n";
  EXPECT_EQ(run(d, "--config bad.ini synth --out data.jsonl"), 1);
  std::ofstream(d / "good.ini") << "[synth]\nn = 12\n";
  EXPECT_EQ(run(d, "synth --config good.ini --out data.jsonl"), 0) << slurp(d / "cli.log");
  EXPECT_EQ(json::parse(slurp(d / "data.jsonl.synth.manifest.json")).at("config").at("n"), "12");

  EXPECT_EQ(run(d, "evaluate --checkpoint missing.ckpt --data data.jsonl --generations g.jsonl --out m.json"), 2);
  EXPECT_EQ(run(d, "preprocess --data nothing.jsonl --out-dir ann"), 2);
  ASSERT_EQ(run(d, "preprocess --data data.jsonl --out-dir ann"), 0) << slurp(d / "cli.log");
  EXPECT_EQ(run(d, "train --stage plot --data data.jsonl --annotations ann/annotations.jsonl --checkpoint m.ckpt --epochs 1 " +
                       kModel),
            3)
      << slurp(d / "cli.log");
  fs::remove_all(d);
}
