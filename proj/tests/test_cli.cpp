// End-to-end checks of the installed command-line surface: exit codes,
// generated files, and the synth -> train -> eval loop.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"

namespace fs = std::filesystem;

namespace {

struct RunResult {
  int exit_code = -1;
  std::string output;  // stdout + stderr
};

RunResult run_cli(const std::string& args) {
  std::string cmd = std::string(STAGE_CLI_PATH) + " " + args + " 2>&1";
  std::array<char, 4096> buf{};
  RunResult r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  while (std::fgets(buf.data(), int(buf.size()), pipe)) r.output += buf.data();
  int status = pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::path("cli_test_tmp") / name) {
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all("cli_test_tmp"); }
};

const char* kSpecJson = R"({
  "seed": 3,
  "videos_train": 6,
  "videos_val": 3,
  "clips_per_video": 6,
  "actors_per_clip": [1, 2],
  "free_objects_per_clip": [2, 3],
  "object_kinds": 2,
  "feature_width": 5,
  "noise_level": 0.05,
  "visibility": 0.5,
  "rules": [{"class_id": 0, "kind": "spatial-proximity", "object_kind": 1, "radius": 0.3}]
})";

}  // namespace

TEST_CASE("usage errors exit with 2") {
  CHECK(run_cli("").exit_code == 2);
  CHECK(run_cli("definitely-not-a-command").exit_code == 2);
  CHECK(run_cli("train --train a.jsonl").exit_code == 2);  // missing required flags
  RunResult missing = run_cli("train --train missing_file.jsonl --val also_missing.jsonl --out x");
  CHECK(missing.exit_code == 2);
  CHECK(missing.output.find("missing_file.jsonl") != std::string::npos);
}

TEST_CASE("version and help exit cleanly") {
  RunResult v = run_cli("--version");
  CHECK(v.exit_code == 0);
  CHECK(v.output.find("stage") != std::string::npos);
  CHECK(run_cli("--help").exit_code == 0);
}

TEST_CASE("params and flops report the preset accounting") {
  RunResult p = run_cli("params --preset stage-i3d");
  CHECK(p.exit_code == 0);
  CHECK(p.output.find("6432284") != std::string::npos);

  RunResult f = run_cli("flops --preset stage-i3d --actors 4 --objects 25");
  CHECK(f.exit_code == 0);
  CHECK(f.output.find("180839592") != std::string::npos);
}

TEST_CASE("gradcheck passes deterministically") {
  RunResult a = run_cli("gradcheck --seed 1 --cases 4");
  CHECK(a.exit_code == 0);
  CHECK(a.output.find("PASS") != std::string::npos);
  RunResult b = run_cli("gradcheck --seed 1 --cases 4");
  CHECK(b.output == a.output);
}

TEST_CASE("synth, train, eval loop") {
  TempDir tmp("loop");
  std::string spec_path = (tmp.path / "spec.json").string();
  {
    std::ofstream os(spec_path);
    os << kSpecJson;
  }

  std::string synth_dir = (tmp.path / "synth").string();
  RunResult synth = run_cli("synth --spec " + spec_path + " --out " + synth_dir);
  CHECK(synth.exit_code == 0);
  CHECK(fs::exists(synth_dir + "/train.jsonl"));
  CHECK(fs::exists(synth_dir + "/val.jsonl"));
  CHECK(fs::exists(synth_dir + "/synth_report.json"));
  CHECK(fs::exists(synth_dir + "/manifest.json"));

  std::string run_dir = (tmp.path / "run").string();
  RunResult train = run_cli("train --train " + synth_dir + "/train.jsonl --val " + synth_dir +
                            "/val.jsonl --out " + run_dir +
                            " --heads 2 --layers 1 --window 3 --lr 0.01 --epochs 3 --keep 1.0 "
                            "--seed 5 --batch 4");
  CHECK(train.exit_code == 0);
  CHECK(fs::exists(run_dir + "/checkpoint.stage"));
  CHECK(fs::exists(run_dir + "/history.csv"));
  CHECK(fs::exists(run_dir + "/manifest.json"));

  // best validation mAP from the history
  double best = -1.0;
  {
    std::ifstream is(run_dir + "/history.csv");
    std::string line;
    std::getline(is, line);  // header
    while (std::getline(is, line)) {
      std::stringstream ss(line);
      std::string cell;
      std::getline(ss, cell, ',');
      std::getline(ss, cell, ',');
      std::getline(ss, cell, ',');
      best = std::max(best, std::stod(cell));
    }
  }
  REQUIRE(best >= 0.0);

  std::string eval_dir = (tmp.path / "eval").string();
  RunResult eval = run_cli("eval --checkpoint " + run_dir + "/checkpoint.stage --data " +
                           synth_dir + "/val.jsonl --out " + eval_dir);
  CHECK(eval.exit_code == 0);
  CHECK(fs::exists(eval_dir + "/eval_report.csv"));
  CHECK(fs::exists(eval_dir + "/eval_report.json"));
  CHECK(fs::exists(eval_dir + "/manifest.json"));

  // the reported mAP reproduces the best history entry exactly
  auto pos = eval.output.find("mAP ");
  REQUIRE(pos != std::string::npos);
  double reported = std::stod(eval.output.substr(pos + 4));
  CHECK(reported == best);

  // evaluating against a dataset with different widths is a structured error
  std::string bad = (tmp.path / "bad.jsonl").string();
  {
    std::ofstream os(bad);
    os << R"({"video_id":"v","timestamp":0,"entities":[{"kind":"actor","box":[0.1,0.1,0.3,0.3],)"
       << R"("score":1,"feature":[1,2],"labels":[0]}]})"
       << "\n";
  }
  RunResult mismatch = run_cli("eval --checkpoint " + run_dir + "/checkpoint.stage --data " + bad);
  CHECK(mismatch.exit_code == 1);
  CHECK(mismatch.output.find("mismatch") != std::string::npos);
}

TEST_CASE("training with --gt relabels actors through the IoU assignment") {
  TempDir tmp("gt");
  std::string spec_path = (tmp.path / "spec.json").string();
  {
    std::ofstream os(spec_path);
    os << kSpecJson;
  }
  std::string synth_dir = (tmp.path / "synth").string();
  REQUIRE(run_cli("synth --spec " + spec_path + " --out " + synth_dir).exit_code == 0);

  std::string flags = " --heads 1 --layers 1 --window 3 --lr 0.01 --epochs 2 --keep 1.0 --seed 3";
  std::string plain_dir = (tmp.path / "plain").string();
  std::string gt_dir = (tmp.path / "gt_run").string();
  REQUIRE(run_cli("train --train " + synth_dir + "/train.jsonl --val " + synth_dir +
                  "/val.jsonl --out " + plain_dir + flags)
              .exit_code == 0);
  // the dataset used as its own ground truth assigns identical labels (IoU 1)
  REQUIRE(run_cli("train --train " + synth_dir + "/train.jsonl --val " + synth_dir +
                  "/val.jsonl --gt " + synth_dir + "/train.jsonl --out " + gt_dir + flags)
              .exit_code == 0);
  auto slurp = [](const fs::path& p) {
    std::ifstream is(p);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
  };
  CHECK(slurp(plain_dir + "/history.csv") == slurp(gt_dir + "/history.csv"));
}

TEST_CASE("synth is deterministic across runs") {
  TempDir tmp("determinism");
  std::string spec_path = (tmp.path / "spec.json").string();
  {
    std::ofstream os(spec_path);
    os << kSpecJson;
  }
  RunResult a = run_cli("synth --spec " + spec_path + " --out " + (tmp.path / "a").string());
  RunResult b = run_cli("synth --spec " + spec_path + " --out " + (tmp.path / "b").string());
  CHECK(a.exit_code == 0);
  CHECK(b.exit_code == 0);
  auto slurp = [](const fs::path& p) {
    std::ifstream is(p);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
  };
  CHECK(slurp(tmp.path / "a" / "train.jsonl") == slurp(tmp.path / "b" / "train.jsonl"));
  CHECK(slurp(tmp.path / "a" / "val.jsonl") == slurp(tmp.path / "b" / "val.jsonl"));
}
