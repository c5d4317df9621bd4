#include "navwam/train_grpo.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "navwam/errors.hpp"
#include "navwam/parallel.hpp"
#include "navwam/rng.hpp"

namespace navwam {

namespace {

std::string f17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::vector<Tensor> context_prefix(const RolloutResult& roll, int segment_j, int k) {
  const std::size_t frames = 1 + static_cast<std::size_t>((segment_j - 1) * k);
  return std::vector<Tensor>(roll.context_frames.begin(),
                             roll.context_frames.begin() + static_cast<std::ptrdiff_t>(frames));
}

Tensor expert_segment(const Demo& episode, int segment_j, int k) {
  Tensor seg(static_cast<std::size_t>(k), 4);
  for (int i = 0; i < k; ++i) {
    const std::size_t row = static_cast<std::size_t>((segment_j - 1) * k + i);
    const Action& a = episode.expert_actions.at(row);
    seg.at(static_cast<std::size_t>(i), 0) = a.dx;
    seg.at(static_cast<std::size_t>(i), 1) = a.dy;
    seg.at(static_cast<std::size_t>(i), 2) = a.dz;
    seg.at(static_cast<std::size_t>(i), 3) = a.dpsi;
  }
  return seg;
}

}  // namespace

GrpoConfig GrpoConfig::from_config(const RunConfig& c) {
  GrpoConfig g;
  g.group_size = c.grpo_group_size;
  g.gamma = c.grpo_gamma;
  g.lambda_traj = c.grpo_lambda_traj;
  g.lambda_task = c.grpo_lambda_task;
  g.lambda_ref = c.grpo_lambda_ref;
  g.eps_clip = c.grpo_eps_clip;
  g.eps_adv = c.grpo_eps_adv;
  g.kl_coef = c.grpo_kl_coef;
  g.frozen_prefix_depth = c.grpo_frozen_prefix_depth;
  g.iterations = c.grpo_iterations;
  g.lr = c.grpo_lr;
  g.batch_episodes = c.grpo_batch_episodes;
  g.grad_clip = c.grpo_grad_clip;
  g.difficulty = difficulty_from_name(c.grpo_difficulty);
  return g;
}

double trajectory_reward(const Tensor& actions, const Tensor& expert,
                         const ModelConfig& cfg) {
  if (!actions.same_shape(expert) || actions.cols != 4) {
    throw ShapeError("trajectory_reward: segments must both be K x 4");
  }
  const double norm[4] = {cfg.a_max_xyz, cfg.a_max_xyz, cfg.a_max_xyz, cfg.a_max_yaw};
  double xyz = 0.0, yaw = 0.0, all = 0.0;
  for (std::size_t i = 0; i < actions.rows; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      const double e = (actions.at(i, j) - expert.at(i, j)) / norm[j];
      all += e * e;
      if (j < 3) {
        xyz += e * e;
      } else {
        yaw += e * e;
      }
    }
  }
  const double rows = static_cast<double>(actions.rows);
  const double mse_xyz = xyz / (rows * 3.0);
  const double mse_yaw = yaw / rows;
  const double mse_all = all / (rows * 4.0);
  const double d = 0.45 * mse_xyz + 0.45 * mse_yaw + 0.1 * mse_all;
  return 1.0 / (1.0 + d);
}

double task_reward(const Pose& terminal, const Vec3& target) {
  return 1.0 / (1.0 + endpoint_distance(terminal, target));
}

double reference_reward(double ref_log_prob) {
  if (!std::isfinite(ref_log_prob)) {
    throw NumericError("reference_reward: non-finite log-probability");
  }
  return ref_log_prob;
}

double segment_reward(double r_traj, double r_task, double r_ref, int j,
                      const GrpoConfig& cfg) {
  if (j < 1) throw std::invalid_argument("segment_reward: j is 1-based");
  const double decay = std::pow(cfg.gamma, j - 1);
  return decay * (cfg.lambda_traj * r_traj + cfg.lambda_task * r_task +
                  cfg.lambda_ref * r_ref);
}

std::vector<std::vector<double>> group_advantages(
    const std::vector<std::vector<double>>& rewards, double eps_adv) {
  const std::size_t g = rewards.size();
  if (g < 2) throw std::invalid_argument("group_advantages: needs G >= 2");
  const std::size_t n = rewards[0].size();
  for (const auto& r : rewards) {
    if (r.size() != n) throw std::invalid_argument("group_advantages: ragged input");
  }
  std::vector<std::vector<double>> adv(g, std::vector<double>(n, 0.0));
  for (std::size_t j = 0; j < n; ++j) {
    double mu = 0.0;
    for (std::size_t i = 0; i < g; ++i) mu += rewards[i][j];
    mu /= static_cast<double>(g);
    double var = 0.0;
    for (std::size_t i = 0; i < g; ++i) {
      const double dv = rewards[i][j] - mu;
      var += dv * dv;
    }
    const double sigma = std::sqrt(var / static_cast<double>(g));
    for (std::size_t i = 0; i < g; ++i) {
      adv[i][j] = (rewards[i][j] - mu) / (sigma + eps_adv);
    }
  }
  return adv;
}

std::vector<GroupRollout> sample_rollout_group(const Demo& episode,
                                               const ParameterStore& policy,
                                               const ParameterStore& ref_store,
                                               const ModelConfig& cfg,
                                               const SimParams& sim,
                                               const GrpoConfig& grpo,
                                               std::uint64_t rng_base) {
  std::vector<GroupRollout> group(static_cast<std::size_t>(grpo.group_size));
  parallel_for_indexed(group.size(), [&](std::size_t i) {
    Rng rng(mix_seed(rng_base, static_cast<std::uint64_t>(i)));
    GroupRollout r;
    r.index = static_cast<int>(i);
    r.ref_log_std = ref_store.params.at("policy.log_std");
    r.roll = roll_episode(policy, cfg, sim, episode, grpo.mode, true, &rng);
    r.scored.resize(r.roll.segments.size());
    const double r_task_val = task_reward(r.roll.terminal, episode.spec.target);
    for (std::size_t j = 0; j < r.roll.segments.size(); ++j) {
      const SegmentTrace& seg = r.roll.segments[j];
      ScoredSegment& sc = r.scored[j];
      sc.logp_old = seg.logp_behavior;
      {
        Tape tape;
        const auto ref_nodes = modelg::build_segment_policy(
            tape, ref_store, cfg, episode.spec.instruction,
            context_prefix(r.roll, static_cast<int>(j) + 1, cfg.k), false);
        sc.mu_ref = tape.value(ref_nodes.mean);
        sc.logp_ref = tape.value(modelg::log_prob_node(tape, ref_store, cfg,
                                                       ref_nodes.mean,
                                                       seg.sampled_actions, false))
                          .d[0];
      }
      sc.r_traj = trajectory_reward(seg.sampled_actions,
                                    expert_segment(episode, static_cast<int>(j) + 1, cfg.k),
                                    cfg);
      sc.r_task = r_task_val;
      sc.r_ref = reference_reward(sc.logp_ref);
      sc.decay = std::pow(grpo.gamma, static_cast<double>(j));
      sc.combined = segment_reward(sc.r_traj, sc.r_task, sc.r_ref,
                                   static_cast<int>(j) + 1, grpo);
    }
    group[i] = std::move(r);
  });

  std::vector<std::vector<double>> rewards(group.size());
  for (std::size_t i = 0; i < group.size(); ++i) {
    for (const ScoredSegment& sc : group[i].scored) rewards[i].push_back(sc.combined);
  }
  const auto adv = group_advantages(rewards, grpo.eps_adv);
  for (std::size_t i = 0; i < group.size(); ++i) {
    for (std::size_t j = 0; j < group[i].scored.size(); ++j) {
      group[i].scored[j].advantage = adv[i][j];
    }
  }
  return group;
}

namespace {

// Closed-form KL between the current diagonal-Gaussian policy and the frozen
// reference on one segment, built on the tape.
int kl_node(Tape& tape, const ParameterStore& params, const ModelConfig& cfg,
            int mean_node, const ScoredSegment& sc, const Tensor& sref) {
  const int s_theta = tape.parameter(params, "policy.log_std", true);
  const double rows = static_cast<double>(cfg.k);

  const int t1 = tape.sum(tape.add(tape.scale(s_theta, -1.0), tape.constant(sref)));
  const int t1s = tape.scale(t1, rows);

  Tensor m2sref = sref;
  for (double& v : m2sref.d) v = -2.0 * v;
  const int t2 = tape.sum(tape.exp_op(tape.add(tape.scale(s_theta, 2.0), tape.constant(m2sref))));
  const int t2s = tape.scale(t2, 0.5 * rows);

  Tensor neg_mu = sc.mu_ref;
  for (double& v : neg_mu.d) v = -v;
  const int diff = tape.add(mean_node, tape.constant(neg_mu));
  Tensor w(1, 4);
  for (std::size_t j = 0; j < 4; ++j) w.d[j] = 0.5 * std::exp(-2.0 * sref.d[j]);
  const int t3 = tape.sum(tape.mul(tape.mul(diff, diff), tape.constant(w)));

  const int t4 = tape.constant(Tensor(1, 1, -0.5 * rows * 4.0));
  return tape.add(tape.add(tape.add(t1s, t2s), t3), t4);
}

}  // namespace

UpdateStats grpo_update(const std::vector<Demo>& episodes,
                        const std::vector<std::vector<GroupRollout>>& batch,
                        ParameterStore& params, const ModelConfig& cfg,
                        const RunConfig& run, const GrpoConfig& grpo) {
  if (episodes.size() != batch.size()) {
    throw std::invalid_argument("grpo_update: episode/batch size mismatch");
  }
  struct Unit {
    std::size_t ep;
    std::size_t i;
  };
  std::vector<Unit> units;
  std::size_t n_terms = 0;
  for (std::size_t e = 0; e < batch.size(); ++e) {
    for (std::size_t i = 0; i < batch[e].size(); ++i) {
      units.push_back({e, i});
      n_terms += batch[e][i].scored.size();
    }
  }
  if (n_terms == 0) throw std::invalid_argument("grpo_update: empty batch");

  // pi_ref parameters are only needed for the optional KL term; reuse mu_ref
  // stored at sampling time plus the reference log_std carried per segment.
  UpdateStats stats;
  stats.logp_new.resize(batch.size());
  for (std::size_t e = 0; e < batch.size(); ++e) {
    stats.logp_new[e].resize(batch[e].size());
  }

  std::vector<GradMap> grads(units.size());
  std::vector<double> surrogate_parts(units.size(), 0.0);
  std::vector<std::size_t> clipped_counts(units.size(), 0);
  std::vector<bool> failed(units.size(), false);

  parallel_for_indexed(units.size(), [&](std::size_t u) {
    const Unit unit = units[u];
    const GroupRollout& gr = batch[unit.ep][unit.i];
    try {
      Tape tape;
      std::vector<int> terms;
      std::vector<int> kls;
      std::vector<double>& logp_out = stats.logp_new[unit.ep][unit.i];
      logp_out.assign(gr.scored.size(), 0.0);
      for (std::size_t j = 0; j < gr.scored.size(); ++j) {
        const auto nodes = modelg::build_segment_policy(
            tape, params, cfg, episodes[unit.ep].spec.instruction,
            context_prefix(gr.roll, static_cast<int>(j) + 1, cfg.k), true);
        const int logp_new = modelg::log_prob_node(
            tape, params, cfg, nodes.mean, gr.roll.segments[j].sampled_actions, true);
        logp_out[j] = tape.value(logp_new).d[0];
        const int diff = tape.add(logp_new, tape.constant(Tensor(1, 1, -gr.scored[j].logp_old)));
        const int ratio = tape.exp_op(diff);
        const double rho = tape.value(ratio).d[0];
        if (rho < 1.0 - grpo.eps_clip || rho > 1.0 + grpo.eps_clip) {
          clipped_counts[u] += 1;
        }
        const double a = gr.scored[j].advantage;
        const int unclipped = tape.scale(ratio, a);
        const int clipped = tape.scale(
            tape.clip(ratio, 1.0 - grpo.eps_clip, 1.0 + grpo.eps_clip), a);
        terms.push_back(tape.minimum(unclipped, clipped));
        if (grpo.kl_coef > 0.0) {
          kls.push_back(
              kl_node(tape, params, cfg, nodes.mean, gr.scored[j], gr.ref_log_std));
        }
      }
      const int objective = tape.sum(tape.concat_rows(terms));
      surrogate_parts[u] = tape.value(objective).d[0];
      int loss = tape.scale(objective, -1.0 / static_cast<double>(n_terms));
      if (!kls.empty()) {
        const int kl_total = tape.sum(tape.concat_rows(kls));
        loss = tape.add(loss, tape.scale(kl_total, grpo.kl_coef / static_cast<double>(n_terms)));
      }
      tape.backward(loss);
      grads[u] = tape.parameter_gradients(params);
    } catch (const NumericError&) {
      failed[u] = true;
    }
  });

  for (bool f : failed) {
    if (f) {
      stats.aborted = true;
      return stats;
    }
  }

  GradMap total;
  for (const GradMap& g : grads) accumulate(total, g);
  double surrogate = 0.0;
  std::size_t clipped = 0;
  for (std::size_t u = 0; u < units.size(); ++u) {
    surrogate += surrogate_parts[u];
    clipped += clipped_counts[u];
  }
  stats.surrogate = surrogate / static_cast<double>(n_terms);
  stats.clip_fraction = static_cast<double>(clipped) / static_cast<double>(n_terms);
  stats.grad_scale = clip_global_norm(total, grpo.grad_clip);
  adam_step(params, total, grpo.lr, run.adam_beta1, run.adam_beta2, run.adam_eps);
  return stats;
}

Demo grpo_episode(const RunConfig& run, const GrpoConfig& grpo, const SimParams& sim,
                  int iteration, int slot) {
  const int idx = iteration * grpo.batch_episodes + slot;
  const TaskFamily family = static_cast<TaskFamily>(idx % kNumFamilies);
  const std::uint64_t seed =
      mix_seed(run.seed, 0xe915c0deULL, static_cast<std::uint64_t>(idx));
  return generate_episode(family, seed, grpo.difficulty, sim);
}

GrpoRunResult run_grpo(ParameterStore& params, const ParameterStore& ref_store,
                       const RunConfig& run, const ModelConfig& cfg,
                       const SimParams& sim, std::ostream* metrics_log,
                       std::ostream* rollout_log, const std::string& snapshot_dir) {
  const GrpoConfig grpo = GrpoConfig::from_config(run);
  apply_grpo_freezing(params, cfg, grpo.frozen_prefix_depth);
  const std::uint64_t cfg_hash = config_hash(run);
  GrpoRunResult result;

  for (int it = 0; it < grpo.iterations; ++it) {
    if (!snapshot_dir.empty() && run.grpo_snapshot_every > 0 &&
        it % run.grpo_snapshot_every == 0) {
      char name[64];
      std::snprintf(name, sizeof(name), "iter_%06d.ckpt", it);
      save_checkpoint((std::filesystem::path(snapshot_dir) / name).string(), params,
                      cfg_hash);
    }

    std::vector<Demo> episodes;
    for (int s = 0; s < grpo.batch_episodes; ++s) {
      episodes.push_back(grpo_episode(run, grpo, sim, it, s));
    }
    std::vector<std::vector<GroupRollout>> batch(episodes.size());
    for (std::size_t e = 0; e < episodes.size(); ++e) {
      const std::uint64_t base = mix_seed(
          mix_seed(run.seed, 0x9011ULL, static_cast<std::uint64_t>(it)),
          episodes[e].spec.seed);
      batch[e] = sample_rollout_group(episodes[e], params, ref_store, cfg, sim, grpo, base);
    }

    const UpdateStats stats = grpo_update(episodes, batch, params, cfg, run, grpo);
    if (stats.aborted) result.aborted_iterations += 1;

    double mean_task = 0.0, mean_traj = 0.0;
    std::size_t segs = 0;
    for (const auto& group : batch) {
      for (const auto& gr : group) {
        for (const auto& sc : gr.scored) {
          mean_task += sc.r_task;
          mean_traj += sc.r_traj;
          segs += 1;
        }
      }
    }
    mean_task /= static_cast<double>(segs);
    mean_traj /= static_cast<double>(segs);
    result.mean_r_task.push_back(mean_task);
    result.mean_r_traj.push_back(mean_traj);
    result.surrogate.push_back(stats.surrogate);
    result.iterations_run = it + 1;

    double sr_probe = -1.0;
    if (run.grpo_probe_every > 0 && (it + 1) % run.grpo_probe_every == 0) {
      std::vector<int> wins(static_cast<std::size_t>(run.grpo_probe_episodes), 0);
      parallel_for_indexed(wins.size(), [&](std::size_t i) {
        const Demo probe = generate_episode(
            static_cast<TaskFamily>(i % kNumFamilies),
            run.grpo_probe_seed_start + static_cast<std::uint64_t>(i), grpo.difficulty,
            sim);
        const RolloutResult rr =
            roll_episode(params, cfg, sim, probe, grpo.mode, false, nullptr);
        wins[i] = rr.success ? 1 : 0;
      });
      int total = 0;
      for (int w : wins) total += w;
      sr_probe = static_cast<double>(total) / static_cast<double>(wins.size());
    }

    if (metrics_log != nullptr) {
      *metrics_log << "{\"iteration\":" << it << ",\"mean_r_task\":" << f17(mean_task)
                   << ",\"mean_r_traj\":" << f17(mean_traj)
                   << ",\"surrogate\":" << f17(stats.surrogate)
                   << ",\"clip_fraction\":" << f17(stats.clip_fraction);
      if (sr_probe >= 0.0) *metrics_log << ",\"sr_probe\":" << f17(sr_probe);
      if (stats.aborted) *metrics_log << ",\"aborted\":true";
      *metrics_log << "}\n";
    }

    if (rollout_log != nullptr && run.grpo_rollout_log_every > 0 &&
        it % run.grpo_rollout_log_every == 0) {
      for (std::size_t e = 0; e < batch.size(); ++e) {
        const Demo& ep = episodes[e];
        for (const GroupRollout& gr : batch[e]) {
          for (std::size_t j = 0; j < gr.scored.size(); ++j) {
            const SegmentTrace& seg = gr.roll.segments[j];
            const ScoredSegment& sc = gr.scored[j];
            std::ostringstream line;
            line << "{\"iteration\":" << it << ",\"episode_seed\":" << ep.spec.seed
                 << ",\"family\":\"" << family_name(ep.spec.family)
                 << "\",\"difficulty\":\"" << difficulty_name(ep.spec.difficulty)
                 << "\",\"mode\":\"" << rollout_mode_name(grpo.mode)
                 << "\",\"rollout\":" << gr.index << ",\"segment\":" << (j + 1)
                 << ",\"actions\":[";
            for (std::size_t v = 0; v < seg.sampled_actions.size(); ++v) {
              if (v) line << ",";
              line << f17(seg.sampled_actions.d[v]);
            }
            line << "],\"poses\":[";
            for (std::size_t pv = 0; pv < seg.poses.size(); ++pv) {
              const Pose& p = seg.poses[pv];
              if (pv) line << ",";
              line << f17(p.x) << "," << f17(p.y) << "," << f17(p.z) << ","
                   << f17(p.psi);
            }
            line << "],\"terminal\":[" << f17(gr.roll.terminal.x) << ","
                 << f17(gr.roll.terminal.y) << "," << f17(gr.roll.terminal.z) << ","
                 << f17(gr.roll.terminal.psi) << "]"
                 << ",\"success\":" << (gr.roll.success ? "true" : "false")
                 << ",\"logp_old\":" << f17(sc.logp_old)
                 << ",\"logp_ref\":" << f17(sc.logp_ref) << ",\"logp_new\":"
                 << f17(stats.aborted ? sc.logp_old
                                      : stats.logp_new[e][static_cast<std::size_t>(gr.index)][j])
                 << ",\"r_traj\":" << f17(sc.r_traj) << ",\"r_task\":" << f17(sc.r_task)
                 << ",\"r_ref\":" << f17(sc.r_ref) << ",\"decay\":" << f17(sc.decay)
                 << ",\"reward\":" << f17(sc.combined)
                 << ",\"advantage\":" << f17(sc.advantage) << "}";
            *rollout_log << line.str() << "\n";
          }
        }
      }
    }
  }
  return result;
}

// --- audit -------------------------------------------------------------------

AuditReport audit_grpo_log(const std::string& rollout_log_path,
                           const std::string& snapshot_dir, const RunConfig& run,
                           const ModelConfig& cfg, const SimParams& sim) {
  using json = nlohmann::json;
  std::ifstream f(rollout_log_path);
  if (!f) throw MissingArtifact("cannot open rollout log: " + rollout_log_path);
  const GrpoConfig grpo = GrpoConfig::from_config(run);

  struct SegLine {
    int segment;
    Tensor actions;
    std::vector<Pose> poses;
    Pose terminal;
    double logp_old, logp_ref, logp_new, r_traj, r_task, r_ref, decay, reward, advantage;
  };
  struct RolloutKey {
    int iteration;
    std::uint64_t seed;
    int rollout;
    bool operator<(const RolloutKey& o) const {
      if (iteration != o.iteration) return iteration < o.iteration;
      if (seed != o.seed) return seed < o.seed;
      return rollout < o.rollout;
    }
  };
  std::map<RolloutKey, std::vector<SegLine>> rollouts;
  std::map<RolloutKey, std::pair<TaskFamily, Difficulty>> meta;
  std::map<RolloutKey, RolloutMode> modes;

  std::string line;
  std::size_t line_no = 0;
  while (std::getline(f, line)) {
    line_no += 1;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const std::exception& e) {
      throw ConfigError("rollout log line " + std::to_string(line_no) + ": " + e.what());
    }
    RolloutKey key{j.at("iteration").get<int>(), j.at("episode_seed").get<std::uint64_t>(),
                   j.at("rollout").get<int>()};
    SegLine s;
    s.segment = j.at("segment").get<int>();
    const auto av = j.at("actions").get<std::vector<double>>();
    s.actions = Tensor(av.size() / 4, 4);
    s.actions.d = av;
    const auto pv = j.at("poses").get<std::vector<double>>();
    for (std::size_t i = 0; i < pv.size(); i += 4) {
      s.poses.push_back(Pose{pv[i], pv[i + 1], pv[i + 2], pv[i + 3]});
    }
    const auto tv = j.at("terminal").get<std::vector<double>>();
    s.terminal = Pose{tv[0], tv[1], tv[2], tv[3]};
    s.logp_old = j.at("logp_old").get<double>();
    s.logp_ref = j.at("logp_ref").get<double>();
    s.logp_new = j.at("logp_new").get<double>();
    s.r_traj = j.at("r_traj").get<double>();
    s.r_task = j.at("r_task").get<double>();
    s.r_ref = j.at("r_ref").get<double>();
    s.decay = j.at("decay").get<double>();
    s.reward = j.at("reward").get<double>();
    s.advantage = j.at("advantage").get<double>();
    rollouts[key].push_back(std::move(s));
    meta[key] = {family_from_name(j.at("family").get<std::string>()),
                 difficulty_from_name(j.at("difficulty").get<std::string>())};
    modes[key] = rollout_mode_from_name(j.at("mode").get<std::string>());
  }

  AuditReport report;
  std::map<std::pair<int, std::uint64_t>, Demo> demo_cache;

  for (auto& [key, segs] : rollouts) {
    std::sort(segs.begin(), segs.end(),
              [](const SegLine& a, const SegLine& b) { return a.segment < b.segment; });
    auto dk = std::make_pair(key.iteration, key.seed);
    if (!demo_cache.count(dk)) {
      demo_cache.emplace(dk, generate_episode(meta[key].first, key.seed,
                                              meta[key].second, sim));
    }
    const Demo& episode = demo_cache.at(dk);

    // Pose replay, exact.
    Environment env(episode.spec, sim);
    for (const SegLine& s : segs) {
      for (std::size_t k = 0; k < s.actions.rows; ++k) {
        const auto step = env.step(Action{s.actions.at(k, 0), s.actions.at(k, 1),
                                          s.actions.at(k, 2), s.actions.at(k, 3)});
        const Pose& logged = s.poses[k];
        if (step.pose.x != logged.x || step.pose.y != logged.y ||
            step.pose.z != logged.z || step.pose.psi != logged.psi) {
          report.pose_mismatches += 1;
        }
      }
      report.segments_checked += 1;
    }
    const Pose& terminal = segs.back().terminal;
    if (env.pose().x != terminal.x || env.pose().y != terminal.y ||
        env.pose().z != terminal.z || env.pose().psi != terminal.psi) {
      report.pose_mismatches += 1;
    }

    // Reward recomputation from parts and from raw data.
    for (const SegLine& s : segs) {
      const double recombined =
          segment_reward(s.r_traj, s.r_task, s.r_ref, s.segment, grpo);
      report.max_reward_recompute_err =
          std::max(report.max_reward_recompute_err, std::abs(recombined - s.reward));
      const double traj =
          trajectory_reward(s.actions, expert_segment(episode, s.segment, cfg.k), cfg);
      report.max_part_recompute_err =
          std::max(report.max_part_recompute_err, std::abs(traj - s.r_traj));
      const double task = task_reward(s.terminal, episode.spec.target);
      report.max_part_recompute_err =
          std::max(report.max_part_recompute_err, std::abs(task - s.r_task));
    }
  }

  // Advantage groups: across rollout index per (iteration, seed, segment).
  std::map<std::tuple<int, std::uint64_t, int>, std::vector<std::pair<double, double>>>
      groups;  // (reward, logged advantage)
  for (const auto& [key, segs] : rollouts) {
    for (const SegLine& s : segs) {
      groups[{key.iteration, key.seed, s.segment}].push_back({s.reward, s.advantage});
    }
  }
  for (const auto& [gk, entries] : groups) {
    std::vector<std::vector<double>> rewards;
    for (const auto& [r, a] : entries) rewards.push_back({r});
    const auto adv = group_advantages(rewards, grpo.eps_adv);
    double mean = 0.0;
    for (std::size_t i = 0; i < entries.size(); ++i) {
      report.max_advantage_recompute_err = std::max(
          report.max_advantage_recompute_err, std::abs(adv[i][0] - entries[i].second));
      mean += entries[i].second;
    }
    mean /= static_cast<double>(entries.size());
    report.max_advantage_group_mean =
        std::max(report.max_advantage_group_mean, std::abs(mean));
  }

  // Old-policy log-probs against on-disk snapshots, bit-exact.
  if (!snapshot_dir.empty()) {
    std::map<int, ParameterStore> snapshots;
    for (const auto& [key, segs] : rollouts) {
      if (!snapshots.count(key.iteration)) {
        char name[64];
        std::snprintf(name, sizeof(name), "iter_%06d.ckpt", key.iteration);
        const auto path = std::filesystem::path(snapshot_dir) / name;
        if (!std::filesystem::exists(path)) continue;
        snapshots.emplace(key.iteration, load_checkpoint(path.string(), 0, true));
      }
      const ParameterStore& snap = snapshots.at(key.iteration);
      const Demo& episode = demo_cache.at({key.iteration, key.seed});
      std::vector<Tensor> forced;
      for (const SegLine& s : segs) forced.push_back(s.actions);
      const RolloutResult rr = roll_episode(snap, cfg, sim, episode, modes.at(key),
                                            false, nullptr, &forced);
      for (std::size_t j = 0; j < segs.size(); ++j) {
        report.snapshot_segments_checked += 1;
        if (rr.segments[j].logp_behavior != segs[j].logp_old) {
          report.logp_mismatches += 1;
        }
      }
    }
  }
  return report;
}

}  // namespace navwam
