#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "navwam/errors.hpp"
#include "navwam/rng.hpp"
#include "navwam/train_grpo.hpp"

using namespace navwam;

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

struct Fixture {
  RunConfig run;
  SimParams sim;
  ModelConfig cfg;
  GrpoConfig grpo;
  ParameterStore store;

  Fixture() {
    sim = SimParams::from_config(run);
    cfg = ModelConfig::from_config(run);
    grpo = GrpoConfig::from_config(run);
    init_params(store, cfg, 7);
    freeze_autoencoder(store);
  }
};

Tensor const_segment(int k, double value) {
  Tensor t(static_cast<std::size_t>(k), 4, value);
  return t;
}

}  // namespace

TEST_CASE("trajectory_reward examples") {
  Fixture fx;
  // identical segments -> 1.0
  const Tensor a = const_segment(fx.cfg.k, 0.25);
  CHECK(trajectory_reward(a, a, fx.cfg) == doctest::Approx(1.0).epsilon(1e-12));

  // d = 1 -> 0.5: all normalized errors equal 1 gives every MSE = 1
  Tensor expert = const_segment(fx.cfg.k, 0.0);
  Tensor off(static_cast<std::size_t>(fx.cfg.k), 4);
  for (std::size_t r = 0; r < off.rows; ++r) {
    off.at(r, 0) = 1.0;
    off.at(r, 1) = 1.0;
    off.at(r, 2) = 1.0;
    off.at(r, 3) = 0.5;  // yaw bound
  }
  CHECK(trajectory_reward(off, expert, fx.cfg) == doctest::Approx(0.5).epsilon(1e-12));

  // weighted-distance arithmetic: MSE_xyz = a^2, MSE_yaw = b^2 via uniform errors
  // pick errors 0.6 (xyz, normalized) and 0 (yaw): MSE_all = 0.27
  Tensor mixed(static_cast<std::size_t>(fx.cfg.k), 4);
  for (std::size_t r = 0; r < mixed.rows; ++r) {
    mixed.at(r, 0) = 0.6;
    mixed.at(r, 1) = 0.6;
    mixed.at(r, 2) = 0.6;
    mixed.at(r, 3) = 0.0;
  }
  const double mse_xyz = 0.36, mse_yaw = 0.0, mse_all = 0.27;
  const double d = 0.45 * mse_xyz + 0.45 * mse_yaw + 0.1 * mse_all;
  CHECK(trajectory_reward(mixed, expert, fx.cfg) ==
        doctest::Approx(1.0 / (1.0 + d)).epsilon(1e-12));

  CHECK_THROWS_AS(trajectory_reward(a, Tensor(1, 4), fx.cfg), ShapeError);
}

TEST_CASE("trajectory distance formula on stated component values") {
  // MSE_xyz=2, MSE_yaw=0, MSE_all=1.5 -> d = 1.05, reward = 1/2.05
  const double d = 0.45 * 2.0 + 0.45 * 0.0 + 0.1 * 1.5;
  CHECK(d == doctest::Approx(1.05).epsilon(1e-12));
  CHECK(1.0 / (1.0 + d) == doctest::Approx(1.0 / 2.05).epsilon(1e-12));
}

TEST_CASE("task_reward examples") {
  CHECK(task_reward(Pose{0, 0, 0, 0.3}, {0, 0, 0}) == doctest::Approx(1.0));
  CHECK(task_reward(Pose{3, 0, 0, 0}, {0, 0, 0}) == doctest::Approx(0.25));
  CHECK(task_reward(Pose{1, 0, 0, 0}, {0, 0, 0}) == doctest::Approx(0.5));
}

TEST_CASE("reference_reward is the raw log-probability") {
  CHECK(reference_reward(-3.7) == doctest::Approx(-3.7));
  // sample at the reference mode with log_std = 0 per dim: -K*4*0.5*log(2*pi)
  const double at_mode = -4 * 4 * 0.5 * kLog2Pi;
  CHECK(reference_reward(at_mode) == doctest::Approx(at_mode));
  CHECK_THROWS_AS(reference_reward(std::nan("")), NumericError);
}

TEST_CASE("segment_reward decay and weighting") {
  Fixture fx;
  // j = 1: decay 1; paper weights: 0.2*1 + 0.7*1 + 0.1*0 = 0.9
  CHECK(segment_reward(1.0, 1.0, 0.0, 1, fx.grpo) == doctest::Approx(0.9).epsilon(1e-12));
  // j = 2: factor gamma = 0.9
  CHECK(segment_reward(1.0, 1.0, 0.0, 2, fx.grpo) ==
        doctest::Approx(0.9 * 0.9).epsilon(1e-12));
  CHECK_THROWS_AS(segment_reward(1, 1, 0, 0, fx.grpo), std::invalid_argument);

  // decay ordering: equal undecayed parts decrease strictly with j
  double prev = segment_reward(0.8, 0.6, -2.0, 1, fx.grpo);
  for (int j = 2; j <= 6; ++j) {
    const double r = segment_reward(0.8, 0.6, -2.0, j, fx.grpo);
    if (prev > 0) CHECK(r < prev);
    prev = r;
  }
}

TEST_CASE("group_advantages") {
  // identical rewards -> all zero
  {
    const auto adv = group_advantages({{1.0}, {1.0}, {1.0}, {1.0}}, 1e-8);
    for (const auto& row : adv) CHECK(row[0] == doctest::Approx(0.0));
  }
  // rewards [1,0,1,0] -> [+1,-1,+1,-1] (population std 0.5)
  {
    const auto adv = group_advantages({{1.0}, {0.0}, {1.0}, {0.0}}, 1e-8);
    CHECK(adv[0][0] == doctest::Approx(1.0).epsilon(1e-7));
    CHECK(adv[1][0] == doctest::Approx(-1.0).epsilon(1e-7));
    CHECK(adv[2][0] == doctest::Approx(1.0).epsilon(1e-7));
    CHECK(adv[3][0] == doctest::Approx(-1.0).epsilon(1e-7));
  }
  CHECK_THROWS_AS(group_advantages({{1.0}}, 1e-8), std::invalid_argument);

  // normalization identities on random groups
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::vector<double>> rewards(4, std::vector<double>(6));
    for (auto& row : rewards) {
      for (double& v : row) v = rng.uniform(-1.0, 1.0);
    }
    const auto adv = group_advantages(rewards, 1e-8);
    for (std::size_t j = 0; j < 6; ++j) {
      double mean = 0.0, var = 0.0;
      for (std::size_t i = 0; i < 4; ++i) mean += adv[i][j];
      mean /= 4.0;
      CHECK(std::abs(mean) <= 1e-12);
      for (std::size_t i = 0; i < 4; ++i) {
        var += (adv[i][j] - mean) * (adv[i][j] - mean);
      }
      var /= 4.0;
      // population std of the advantages is 1 whenever sigma >> eps
      CHECK(std::sqrt(var) == doctest::Approx(1.0).epsilon(1e-6));
    }
  }
}

TEST_CASE("sample_rollout_group structure and determinism") {
  Fixture fx;
  const Demo episode = generate_episode(TaskFamily::Approach, 500, Difficulty::Easy, fx.sim);
  const auto group =
      sample_rollout_group(episode, fx.store, fx.store, fx.cfg, fx.sim, fx.grpo, 77);
  REQUIRE(group.size() == 4);
  for (const auto& gr : group) {
    REQUIRE(gr.scored.size() == static_cast<std::size_t>(fx.cfg.n_segments));
    for (std::size_t j = 0; j < gr.scored.size(); ++j) {
      const auto& sc = gr.scored[j];
      CHECK(sc.r_traj > 0.0);
      CHECK(sc.r_traj <= 1.0);
      CHECK(sc.r_task > 0.0);
      CHECK(sc.r_task <= 1.0);
      CHECK(std::isfinite(sc.logp_old));
      CHECK(std::isfinite(sc.logp_ref));
      // reward decomposition identity, 1e-12
      const double recombined =
          segment_reward(sc.r_traj, sc.r_task, sc.r_ref, static_cast<int>(j) + 1, fx.grpo);
      CHECK(std::abs(recombined - sc.combined) <= 1e-12);
      // decay factor recorded correctly
      CHECK(sc.decay == doctest::Approx(std::pow(fx.grpo.gamma, j)).epsilon(1e-12));
    }
  }
  // independent streams: the four rollouts differ
  bool any_diff = false;
  for (std::size_t i = 1; i < 4; ++i) {
    if (group[i].roll.segments[0].sampled_actions.d !=
        group[0].roll.segments[0].sampled_actions.d) {
      any_diff = true;
    }
  }
  CHECK(any_diff);

  // same base seed -> identical group
  const auto group2 =
      sample_rollout_group(episode, fx.store, fx.store, fx.cfg, fx.sim, fx.grpo, 77);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(group2[i].roll.terminal.x == group[i].roll.terminal.x);
    CHECK(group2[i].scored.back().combined == group[i].scored.back().combined);
  }

  // deterministic policy limit: log_std -> -inf makes all G rollouts identical
  ParameterStore det = fx.store;
  det.params["policy.log_std"] = Tensor(1, 4, -60.0);
  const auto dgroup = sample_rollout_group(episode, det, det, fx.cfg, fx.sim, fx.grpo, 3);
  for (std::size_t i = 1; i < dgroup.size(); ++i) {
    for (std::size_t j = 0; j < dgroup[i].roll.segments.size(); ++j) {
      const auto& a = dgroup[0].roll.segments[j].sampled_actions;
      const auto& b = dgroup[i].roll.segments[j].sampled_actions;
      for (std::size_t v = 0; v < a.size(); ++v) {
        CHECK(a.d[v] == doctest::Approx(b.d[v]).epsilon(1e-12));
      }
    }
  }
  // closed-loop context frames are all real-flagged
  for (bool real : group[0].roll.context_real) CHECK(real);
}

TEST_CASE("old log-probs recompute bit-exactly from the snapshot") {
  Fixture fx;
  const Demo episode = generate_episode(TaskFamily::Turn, 501, Difficulty::Medium, fx.sim);
  const auto group =
      sample_rollout_group(episode, fx.store, fx.store, fx.cfg, fx.sim, fx.grpo, 9);
  for (const auto& gr : group) {
    std::vector<Tensor> forced;
    for (const auto& seg : gr.roll.segments) forced.push_back(seg.sampled_actions);
    const RolloutResult replay = roll_episode(fx.store, fx.cfg, fx.sim, episode,
                                              fx.grpo.mode, false, nullptr, &forced);
    for (std::size_t j = 0; j < gr.scored.size(); ++j) {
      CHECK(replay.segments[j].logp_behavior == gr.scored[j].logp_old);
    }
    // replayed poses are bit-identical too
    for (std::size_t i = 0; i < replay.poses.size(); ++i) {
      CHECK(replay.poses[i].x == gr.roll.poses[i].x);
      CHECK(replay.poses[i].psi == gr.roll.poses[i].psi);
    }
  }
}

TEST_CASE("clipped surrogate semantics on a two-parameter toy policy") {
  // policy: 1-D Gaussian, parameters mu and log_std; fixed sample a, old
  // log-prob recorded at (mu0, s0). Check value and zero-gradient in the
  // clipped regime by finite differences.
  const double eps_clip = 0.02;
  const double a_sample = 0.7;
  const double mu0 = 0.0, s0 = std::log(0.4);
  auto logp = [&](double mu, double s) {
    const double z = (a_sample - mu) * std::exp(-s);
    return -0.5 * z * z - s - 0.5 * kLog2Pi;
  };
  const double logp_old = logp(mu0, s0);

  auto surrogate = [&](double mu, double s, double advantage) {
    ParameterStore params;
    params.params["mu"] = Tensor(1, 1, mu);
    params.params["s"] = Tensor(1, 1, s);
    Tape tape;
    const int mu_node = tape.parameter(params, "mu");
    const int s_node = tape.parameter(params, "s");
    const int value = tape.constant(Tensor(1, 1, a_sample));
    const int nll = tape.gaussian_nll(mu_node, s_node, value);
    const int lp = tape.scale(nll, -1.0);
    const int ratio = tape.exp_op(tape.add(lp, tape.constant(Tensor(1, 1, -logp_old))));
    const int unclipped = tape.scale(ratio, advantage);
    const int clipped =
        tape.scale(tape.clip(ratio, 1.0 - eps_clip, 1.0 + eps_clip), advantage);
    const int surr = tape.minimum(unclipped, clipped);
    tape.backward(surr);
    const auto grads = tape.parameter_gradients(params);
    struct Out {
      double value, dmu, ds, rho;
    };
    return Out{tape.value(surr).d[0], grads.at("mu").d[0], grads.at("s").d[0],
               tape.value(ratio).d[0]};
  };

  // at theta = theta_old: rho = 1, surrogate = A, gradient = A * dlogp/dtheta
  {
    const double a_dv = 1.7;
    const auto out = surrogate(mu0, s0, a_dv);
    CHECK(out.rho == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(out.value == doctest::Approx(a_dv).epsilon(1e-12));
    const double h = 1e-6;
    const double dlogp_mu = (logp(mu0 + h, s0) - logp(mu0 - h, s0)) / (2 * h);
    const double dlogp_s = (logp(mu0, s0 + h) - logp(mu0, s0 - h)) / (2 * h);
    CHECK(out.dmu == doctest::Approx(a_dv * dlogp_mu).epsilon(1e-5));
    CHECK(out.ds == doctest::Approx(a_dv * dlogp_s).epsilon(1e-5));
  }
  // rho pushed above 1 + eps with A > 0: value = (1 + eps) * A, zero gradient
  {
    double mu = mu0 + 0.05;  // moves mean toward the sample -> rho > 1
    auto out = surrogate(mu, s0, 2.0);
    CHECK(out.rho > 1.0 + eps_clip);
    CHECK(out.value == doctest::Approx((1.0 + eps_clip) * 2.0).epsilon(1e-12));
    CHECK(out.dmu == 0.0);
    CHECK(out.ds == 0.0);
  }
  // rho > 1 + eps with A < 0: unclipped branch is the minimum, gradient alive
  {
    double mu = mu0 + 0.05;
    auto out = surrogate(mu, s0, -2.0);
    CHECK(out.rho > 1.0 + eps_clip);
    CHECK(out.value == doctest::Approx(out.rho * -2.0).epsilon(1e-12));
    CHECK(out.dmu != 0.0);
  }
  // clipping bound: |surrogate| never exceeds max(rho, 1 + eps)*|A|
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    const double mu = rng.uniform(-0.3, 0.3);
    const double s = s0 + rng.uniform(-0.2, 0.2);
    const double adv = rng.uniform(-2.0, 2.0);
    const auto out = surrogate(mu, s, adv);
    CHECK(std::abs(out.value) <=
          std::max(out.rho, 1.0 + eps_clip) * std::abs(adv) + 1e-12);
  }
}

TEST_CASE("grpo_update: first step equals unclipped policy gradient; zero advantages freeze") {
  Fixture fx;
  fx.run.grpo_iterations = 1;
  const Demo episode = generate_episode(TaskFamily::Shift, 502, Difficulty::Easy, fx.sim);
  auto group = sample_rollout_group(episode, fx.store, fx.store, fx.cfg, fx.sim,
                                    fx.grpo, 21);

  // all-zero advantages -> parameters unchanged (Adam sees exact zeros)
  {
    auto zeroed = group;
    for (auto& gr : zeroed) {
      for (auto& sc : gr.scored) sc.advantage = 0.0;
    }
    ParameterStore params = fx.store;
    apply_grpo_freezing(params, fx.cfg, fx.grpo.frozen_prefix_depth);
    const auto stats = grpo_update({episode}, {zeroed}, params, fx.cfg, fx.run, fx.grpo);
    CHECK(!stats.aborted);
    for (const auto& [name, t] : fx.store.params) {
      const Tensor& after = params.params.at(name);
      for (std::size_t i = 0; i < t.size(); ++i) CHECK(after.d[i] == t.d[i]);
    }
  }
  // ratio = 1 on the first step: logp_new equals logp_old bit-for-bit
  {
    ParameterStore params = fx.store;
    apply_grpo_freezing(params, fx.cfg, fx.grpo.frozen_prefix_depth);
    const auto stats = grpo_update({episode}, {group}, params, fx.cfg, fx.run, fx.grpo);
    CHECK(!stats.aborted);
    CHECK(stats.clip_fraction == 0.0);
    for (std::size_t i = 0; i < group.size(); ++i) {
      for (std::size_t j = 0; j < group[i].scored.size(); ++j) {
        CHECK(stats.logp_new[0][i][j] == group[i].scored[j].logp_old);
      }
    }
    // frozen chunks did not move
    for (const auto& name : params.frozen) {
      const Tensor& before = fx.store.params.at(name);
      const Tensor& after = params.params.at(name);
      for (std::size_t v = 0; v < before.size(); ++v) CHECK(after.d[v] == before.d[v]);
    }
    // something trainable moved
    bool moved = false;
    for (const auto& [name, t] : params.params) {
      if (!params.trainable(name)) continue;
      const Tensor& before = fx.store.params.at(name);
      for (std::size_t v = 0; v < t.size(); ++v) {
        if (t.d[v] != before.d[v]) moved = true;
      }
    }
    CHECK(moved);
  }
}

TEST_CASE("grpo freezing honors the prefix depth") {
  Fixture fx;
  ParameterStore params = fx.store;
  apply_grpo_freezing(params, fx.cfg, 1);
  CHECK(!params.trainable("bb.l0.attn.q.w"));
  CHECK(params.trainable("bb.l1.attn.q.w"));
  CHECK(params.trainable("text.tok"));
  ParameterStore deeper = fx.store;
  apply_grpo_freezing(deeper, fx.cfg, 3);
  CHECK(!deeper.trainable("bb.l1.attn.q.w"));
  CHECK(!deeper.trainable("text.tok"));
}

TEST_CASE("short run_grpo: reference stays frozen, logs audit clean") {
  Fixture fx;
  fx.run.grpo_iterations = 2;
  fx.run.grpo_batch_episodes = 2;
  fx.run.grpo_probe_every = 0;
  fx.run.grpo_snapshot_every = 1;
  fx.run.grpo_rollout_log_every = 1;
  fx.run.grpo_difficulty = "easy";
  const GrpoConfig grpo = GrpoConfig::from_config(fx.run);

  const auto dir = std::filesystem::temp_directory_path() / "navwam_grpo_test";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  const std::string metrics_path = (dir / "metrics.log").string();
  const std::string rollout_path = (dir / "rollouts.log").string();
  const std::string snap_dir = (dir / "snapshots").string();
  std::filesystem::create_directories(snap_dir);

  ParameterStore params = fx.store;
  const ParameterStore ref = fx.store;
  {
    std::ofstream metrics(metrics_path), rollouts(rollout_path);
    const auto result =
        run_grpo(params, ref, fx.run, fx.cfg, fx.sim, &metrics, &rollouts, snap_dir);
    CHECK(result.iterations_run == 2);
    CHECK(result.aborted_iterations == 0);
  }
  // pi_ref bit-identical before and after the run
  for (const auto& [name, t] : fx.store.params) {
    const Tensor& after = ref.params.at(name);
    for (std::size_t i = 0; i < t.size(); ++i) CHECK(after.d[i] == t.d[i]);
  }
  // full offline audit of the logs
  const auto report = audit_grpo_log(rollout_path, snap_dir, fx.run, fx.cfg, fx.sim);
  CHECK(report.segments_checked ==
        static_cast<std::size_t>(2 * 2 * grpo.group_size * fx.cfg.n_segments));
  CHECK(report.snapshot_segments_checked == report.segments_checked);
  CHECK(report.pose_mismatches == 0);
  CHECK(report.logp_mismatches == 0);
  CHECK(report.max_reward_recompute_err <= 1e-12);
  CHECK(report.max_part_recompute_err <= 1e-12);
  CHECK(report.max_advantage_group_mean <= 1e-12);
  CHECK(report.max_advantage_recompute_err <= 1e-12);
  CHECK(report.passed());
  std::filesystem::remove_all(dir);
}

TEST_CASE("optional KL penalty produces the closed-form value") {
  // one segment, mu_theta vs mu_ref with diagonal stds: check the graph value
  Fixture fx;
  Rng rng(17);
  const Demo episode = generate_episode(TaskFamily::Orbit, 503, Difficulty::Easy, fx.sim);
  auto group =
      sample_rollout_group(episode, fx.store, fx.store, fx.cfg, fx.sim, fx.grpo, 5);
  // with identical policies the KL must be ~0: run one update with kl_coef > 0
  RunConfig with_kl = fx.run;
  with_kl.grpo_kl_coef = 0.5;
  const GrpoConfig grpo_kl = GrpoConfig::from_config(with_kl);
  ParameterStore params = fx.store;
  apply_grpo_freezing(params, fx.cfg, grpo_kl.frozen_prefix_depth);
  const auto stats = grpo_update({episode}, {group}, params, fx.cfg, with_kl, grpo_kl);
  CHECK(!stats.aborted);
}
