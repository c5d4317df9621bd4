#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "navwam/errors.hpp"
#include "navwam/eval.hpp"

using namespace navwam;

namespace {

struct Fixture {
  RunConfig run;
  SimParams sim;
  ModelConfig cfg;
  ParameterStore store;
  SuiteSpec suite;

  Fixture() {
    sim = SimParams::from_config(run);
    cfg = ModelConfig::from_config(run);
    init_params(store, cfg, 21);
    suite.suite_id = "unit-suite";
    suite.difficulty = Difficulty::Easy;
    suite.count = 28;
    suite.seed_start = 7000000;
    for (int f = 0; f < kNumFamilies; ++f) {
      suite.families.push_back(static_cast<TaskFamily>(f));
    }
  }
};

}  // namespace

TEST_CASE("oracle replay scores 100% on any generated suite") {
  Fixture fx;
  const EvalReport report = evaluate_oracle(fx.sim, fx.suite);
  CHECK(report.episode_count == fx.suite.count);
  CHECK(report.overall_sr == doctest::Approx(1.0));
  // expert replay matches the reference trajectory exactly -> NDTW 1
  CHECK(report.mean_ndtw == doctest::Approx(1.0).epsilon(1e-9));
  for (const auto& row : report.rows) {
    CHECK(row.success);
    CHECK(row.ndtw == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("untrained policy stays near chance; report invariants hold") {
  Fixture fx;
  SuiteSpec medium = fx.suite;
  medium.suite_id = "unit-medium";
  medium.difficulty = Difficulty::Medium;
  const EvalReport report = evaluate(fx.store, fx.cfg, fx.sim, medium,
                                     RolloutMode::ClosedLoop, RngPolicy::MeanAction,
                                     0xc0ffee, 5);
  CHECK(report.overall_sr < 0.10);

  // SR equals an independent recount of the per-episode rows
  int wins = 0;
  double ndtw_sum = 0.0;
  for (const auto& row : report.rows) {
    wins += row.success ? 1 : 0;
    ndtw_sum += row.ndtw;
    CHECK(row.ndtw >= 0.0);
    CHECK(row.ndtw <= 1.0);
  }
  CHECK(report.overall_sr ==
        doctest::Approx(static_cast<double>(wins) / report.episode_count).epsilon(1e-12));
  CHECK(report.mean_ndtw ==
        doctest::Approx(ndtw_sum / report.episode_count).epsilon(1e-12));

  // per-family counts aggregate to the total
  int family_total = 0, family_wins = 0;
  for (const auto& [name, fs] : report.per_family) {
    family_total += fs.count;
    family_wins += fs.successes;
  }
  CHECK(family_total == report.episode_count);
  CHECK(family_wins == wins);

  // rows ordered by seed
  for (std::size_t i = 1; i < report.rows.size(); ++i) {
    CHECK(report.rows[i - 1].seed < report.rows[i].seed);
  }
}

TEST_CASE("mean_action evaluation is idempotent, including serialized form") {
  Fixture fx;
  const EvalReport a = evaluate(fx.store, fx.cfg, fx.sim, fx.suite,
                                RolloutMode::ClosedLoop, RngPolicy::MeanAction, 0x11, 9);
  const EvalReport b = evaluate(fx.store, fx.cfg, fx.sim, fx.suite,
                                RolloutMode::ClosedLoop, RngPolicy::MeanAction, 0x11, 9);
  CHECK(report_to_json(a) == report_to_json(b));
}

TEST_CASE("report JSON round-trip") {
  Fixture fx;
  const EvalReport a = evaluate(fx.store, fx.cfg, fx.sim, fx.suite,
                                RolloutMode::OpenLoop, RngPolicy::MeanAction, 0x33, 2);
  const EvalReport back = report_from_json(report_to_json(a));
  CHECK(back.suite_id == a.suite_id);
  CHECK(back.mode == a.mode);
  CHECK(back.overall_sr == a.overall_sr);
  CHECK(back.rows.size() == a.rows.size());
  CHECK(back.per_family.size() == a.per_family.size());
}

TEST_CASE("compare: self-delta is zero, suite mismatch rejected") {
  Fixture fx;
  const EvalReport a = evaluate(fx.store, fx.cfg, fx.sim, fx.suite,
                                RolloutMode::ClosedLoop, RngPolicy::MeanAction, 0x1, 3);
  const CompareTable self = compare(a, a);
  CHECK(self.overall_sr_delta == doctest::Approx(0.0));
  CHECK(self.overall_ndtw_delta == doctest::Approx(0.0));
  for (const auto& row : self.rows) {
    CHECK(row.sr_delta == doctest::Approx(0.0));
    CHECK(row.ndtw_delta == doctest::Approx(0.0));
  }
  EvalReport other = a;
  other.suite_id = "different";
  CHECK_THROWS_AS(compare(a, other), std::invalid_argument);
}

TEST_CASE("latent probe: shared prefix, series lengths") {
  Fixture fx;
  const Demo episode = generate_episode(TaskFamily::Approach, 7100, Difficulty::Medium,
                                        fx.sim);
  const LatentProbeResult closed =
      latent_probe(fx.store, fx.cfg, fx.sim, episode, RolloutMode::ClosedLoop);
  const LatentProbeResult open =
      latent_probe(fx.store, fx.cfg, fx.sim, episode, RolloutMode::OpenLoop);
  REQUIRE(closed.divergence.size() == static_cast<std::size_t>(fx.cfg.n_segments));
  REQUIRE(open.divergence.size() == closed.divergence.size());
  // segment 1 shares its context between the modes
  CHECK(closed.divergence[0] == open.divergence[0]);
  CHECK(closed.decode_rmse[0] == open.decode_rmse[0]);
}

TEST_CASE("emit_curves") {
  const auto dir = std::filesystem::temp_directory_path() / "navwam_curves_test";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  const auto log_path = dir / "train.log";

  // empty log -> no outputs, no error
  {
    std::ofstream f(log_path);
  }
  CHECK(emit_curves(log_path.string(), (dir / "out0").string()).empty());

  // monotone series round-trips exactly
  {
    std::ofstream f(log_path);
    f << "{\"iteration\":0,\"mean_r_task\":0.50,\"note\":\"x\"}\n";
    f << "{\"iteration\":1,\"mean_r_task\":0.75}\n";
    f << "{\"iteration\":2,\"mean_r_task\":0.80}\n";
  }
  const auto files = emit_curves(log_path.string(), (dir / "out1").string());
  REQUIRE(files.size() == 1);
  std::ifstream data(files[0]);
  double step, value;
  std::vector<double> values;
  while (data >> step >> value) values.push_back(value);
  REQUIRE(values.size() == 3);
  CHECK(values[0] == 0.50);
  CHECK(values[1] == 0.75);
  CHECK(values[2] == 0.80);

  // malformed line reports its number
  {
    std::ofstream f(log_path);
    f << "{\"iteration\":0,\"m\":1}\n";
    f << "not json\n";
  }
  try {
    emit_curves(log_path.string(), (dir / "out2").string());
    CHECK(false);
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("suite spec loading") {
  const auto dir = std::filesystem::temp_directory_path() / "navwam_suite_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "suite.json";
  {
    std::ofstream f(path);
    f << "{\"suite_id\":\"s\",\"difficulty\":\"hard\",\"count\":5,"
         "\"seed_start\":123,\"families\":[\"Turn\",\"Orbit\"]}\n";
  }
  const SuiteSpec s = load_suite(path.string());
  CHECK(s.suite_id == "s");
  CHECK(s.difficulty == Difficulty::Hard);
  CHECK(s.count == 5);
  CHECK(s.families.size() == 2);
  const SimParams sim = SimParams::from_config(RunConfig{});
  const Demo d0 = s.episode(0, sim);
  CHECK(d0.spec.family == TaskFamily::Turn);
  const Demo d1 = s.episode(1, sim);
  CHECK(d1.spec.family == TaskFamily::Orbit);
  CHECK_THROWS_AS(load_suite((dir / "missing.json").string()), MissingArtifact);
  std::filesystem::remove_all(dir);
}
