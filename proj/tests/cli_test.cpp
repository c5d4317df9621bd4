#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

namespace fs = std::filesystem;

namespace {

std::string cli() {
  const char* path = std::getenv("NAVWAM_CLI");
  REQUIRE(path != nullptr);
  return path;
}

std::string suites_dir() {
  const char* path = std::getenv("NAVWAM_SUITES");
  REQUIRE(path != nullptr);
  return path;
}

int run(const std::string& cmd) {
  const int rc = std::system((cmd + " > /dev/null 2>&1").c_str());
  return WEXITSTATUS(rc);
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(f)),
                     std::istreambuf_iterator<char>());
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / "navwam_cli_test";
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("gen-demos is byte-identical across runs") {
  TempDir dir;
  const std::string a = (dir.path / "a.jsonl").string();
  const std::string b = (dir.path / "b.jsonl").string();
  CHECK(run(cli() + " gen-demos --count 12 --seed 5 --out " + a) == 0);
  CHECK(run(cli() + " gen-demos --count 12 --seed 5 --out " + b) == 0);
  const std::string sa = slurp(a), sb = slurp(b);
  CHECK(!sa.empty());
  CHECK(sa == sb);
  // different seed differs
  const std::string c = (dir.path / "c.jsonl").string();
  CHECK(run(cli() + " gen-demos --count 12 --seed 6 --out " + c) == 0);
  CHECK(slurp(c) != sa);
}

TEST_CASE("exit codes: usage, config, missing artifact, incompatible checkpoint") {
  TempDir dir;
  // unknown flag -> usage
  CHECK(run(cli() + " gen-demos --no-such-flag") == 2);
  // unreadable config -> config error
  CHECK(run(cli() + " --config " + (dir.path / "missing.json").string() +
            " gen-demos --count 1 --out " + (dir.path / "x.jsonl").string()) == 3);
  // malformed config
  {
    std::ofstream f(dir.path / "bad.json");
    f << "{\"sim.k\": \"four\"}";
  }
  CHECK(run(cli() + " --config " + (dir.path / "bad.json").string() +
            " gen-demos --count 1 --out " + (dir.path / "x.jsonl").string()) == 3);
  // unknown key
  {
    std::ofstream f(dir.path / "unknown.json");
    f << "{\"sim.bogus\": 3}";
  }
  CHECK(run(cli() + " --config " + (dir.path / "unknown.json").string() +
            " gen-demos --count 1 --out " + (dir.path / "x.jsonl").string()) == 3);
  // train-grpo without a stage-1 checkpoint -> missing artifact
  CHECK(run(cli() + " train-grpo --init-ckpt " + (dir.path / "none.ckpt").string() +
            " --out-ckpt " + (dir.path / "out.ckpt").string()) == 4);
}

TEST_CASE("eval refuses a checkpoint from a different config unless forced") {
  TempDir dir;
  const std::string demos = (dir.path / "demos.jsonl").string();
  const std::string ae = (dir.path / "ae.ckpt").string();
  // small config to keep the autoencoder pass quick
  const std::string cfg_path = (dir.path / "cfg.json").string();
  {
    std::ofstream f(cfg_path);
    f << "{\"sft.ae_epochs\": 2, \"sft.random_walks\": 5, \"seed\": 3}";
  }
  const std::string other_cfg = (dir.path / "cfg2.json").string();
  {
    std::ofstream f(other_cfg);
    f << "{\"sft.ae_epochs\": 2, \"sft.random_walks\": 5, \"seed\": 4}";
  }
  REQUIRE(run(cli() + " --config " + cfg_path + " gen-demos --count 500 --out " + demos) == 0);
  // rmse target will not be reached in 2 epochs; accept exit 6 but require the file
  const int rc = run(cli() + " --config " + cfg_path + " --run-dir " +
                     (dir.path / "run").string() + " pretrain-ae --demos " + demos +
                     " --out-ckpt " + ae);
  CHECK((rc == 0 || rc == 6));
  REQUIRE(fs::exists(ae));

  const std::string suite = suites_dir() + "/easy.json";
  const std::string report = (dir.path / "report.json").string();
  // mismatched config -> incompatible (exit 5)
  CHECK(run(cli() + " --config " + other_cfg + " eval --ckpt " + ae + " --suite " +
            suite + " --out " + report) == 5);
  // force overrides
  {
    std::ofstream f(dir.path / "tiny_suite.json");
    f << "{\"suite_id\":\"tiny\",\"difficulty\":\"easy\",\"count\":3,"
         "\"seed_start\":8000000,\"families\":[\"Ascend\"]}";
  }
  CHECK(run(cli() + " --config " + other_cfg + " eval --ckpt " + ae + " --suite " +
            (dir.path / "tiny_suite.json").string() + " --out " + report + " --force") == 0);
  CHECK(fs::exists(report));
}

TEST_CASE("gradcheck subcommand passes") {
  CHECK(run(cli() + " gradcheck") == 0);
}
