#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "navwam/model.hpp"
#include "navwam/simworld.hpp"

namespace navwam {

struct GrpoConfig {
  int group_size = 4;
  double gamma = 0.9;
  double lambda_traj = 0.2;
  double lambda_task = 0.7;
  double lambda_ref = 0.1;
  double eps_clip = 0.02;
  double eps_adv = 1e-8;
  double kl_coef = 0.0;
  int frozen_prefix_depth = 1;
  int iterations = 400;
  double lr = 1e-4;
  int batch_episodes = 8;
  double grad_clip = 0.5;
  Difficulty difficulty = Difficulty::Medium;
  RolloutMode mode = RolloutMode::ClosedLoop;

  static GrpoConfig from_config(const RunConfig& c);
};

// --- reward terms ------------------------------------------------------

// 1 / (1 + d) with d = 0.45*MSE_xyz + 0.45*MSE_yaw + 0.1*MSE_all, MSE terms
// computed on actions normalized per component by the action bound.
double trajectory_reward(const Tensor& actions, const Tensor& expert,
                         const ModelConfig& cfg);
// 1 / (1 + terminal endpoint distance).
double task_reward(const Pose& terminal, const Vec3& target);
// Reference-policy log-probability, unchanged.
double reference_reward(double ref_log_prob);
// gamma^(j-1) * (lambda_traj*r_traj + lambda_task*r_task + lambda_ref*r_ref),
// j is 1-based.
double segment_reward(double r_traj, double r_task, double r_ref, int j,
                      const GrpoConfig& cfg);

// Per-segment-index normalization across the group: (r - mu_j)/(sigma_j + eps)
// with population standard deviation. rewards is [G][n]; G >= 2 or
// std::invalid_argument.
std::vector<std::vector<double>> group_advantages(
    const std::vector<std::vector<double>>& rewards, double eps_adv);

// --- rollout records -----------------------------------------------------

struct ScoredSegment {
  double logp_old = 0.0;
  double logp_ref = 0.0;
  Tensor mu_ref;  // [K, 4], for the optional KL penalty
  double r_traj = 0.0;
  double r_task = 0.0;
  double r_ref = 0.0;
  double decay = 1.0;
  double combined = 0.0;
  double advantage = 0.0;
};

struct GroupRollout {
  int index = 0;
  RolloutResult roll;
  std::vector<ScoredSegment> scored;
  Tensor ref_log_std;  // [1, 4] snapshot from the reference policy
};

// G independent rollouts from one policy snapshot, with per-rollout rng
// streams derived from (rng_base, i); parallel over i. Rewards and
// advantages are filled in (reference log-probs come from ref_store).
std::vector<GroupRollout> sample_rollout_group(const Demo& episode,
                                               const ParameterStore& policy,
                                               const ParameterStore& ref_store,
                                               const ModelConfig& cfg,
                                               const SimParams& sim,
                                               const GrpoConfig& grpo,
                                               std::uint64_t rng_base);

// --- update ----------------------------------------------------------------

struct UpdateStats {
  double surrogate = 0.0;      // mean min(rho*A, clip(rho)*A)
  double clip_fraction = 0.0;  // fraction of ratios outside [1 +- eps_clip]
  double grad_scale = 1.0;     // scale applied by global-norm clipping
  bool aborted = false;        // non-finite forward; parameters restored
  // logp under the parameters used for the step, per (episode, i, j)
  std::vector<std::vector<std::vector<double>>> logp_new;
};

// One clipped-objective ascent step over the batch (gradients at the current
// parameters, global-norm clip, Adam). On a non-finite forward the step is
// aborted and parameters restored.
UpdateStats grpo_update(const std::vector<Demo>& episodes,
                        const std::vector<std::vector<GroupRollout>>& batch,
                        ParameterStore& params, const ModelConfig& cfg,
                        const RunConfig& run, const GrpoConfig& grpo);

// --- full run ----------------------------------------------------------------

struct GrpoRunResult {
  std::vector<double> mean_r_task;  // per iteration
  std::vector<double> mean_r_traj;
  std::vector<double> surrogate;
  int iterations_run = 0;
  int aborted_iterations = 0;
};

// Episode used by the online sampler at (iteration, slot).
Demo grpo_episode(const RunConfig& run, const GrpoConfig& grpo, const SimParams& sim,
                  int iteration, int slot);

// Online GRPO loop: snapshot pi_old each iteration, sample groups, score,
// normalize, update. pi_ref is the supplied stage-1 parameters, fixed for the
// run. Writes optional metrics/rollout logs and pi_old snapshots under
// snapshot_dir (empty string disables).
GrpoRunResult run_grpo(ParameterStore& params, const ParameterStore& ref_store,
                       const RunConfig& run, const ModelConfig& cfg,
                       const SimParams& sim, std::ostream* metrics_log,
                       std::ostream* rollout_log, const std::string& snapshot_dir);

// --- offline audit -----------------------------------------------------------

struct AuditReport {
  std::size_t segments_checked = 0;
  std::size_t pose_mismatches = 0;       // exact double compare
  double max_reward_recompute_err = 0.0;  // combined vs recombined parts
  double max_part_recompute_err = 0.0;    // r_traj / r_task from logged data
  double max_advantage_group_mean = 0.0;
  double max_advantage_recompute_err = 0.0;
  std::size_t snapshot_segments_checked = 0;
  std::size_t logp_mismatches = 0;  // exact double compare against snapshot
  bool passed(double tol = 1e-12) const {
    return segments_checked > 0 && pose_mismatches == 0 &&
           max_reward_recompute_err <= tol && max_part_recompute_err <= tol &&
           max_advantage_group_mean <= tol && max_advantage_recompute_err <= tol &&
           logp_mismatches == 0;
  }
};

// Replays a rollout log produced by run_grpo: poses must replay exactly,
// rewards/advantages must recompute within 1e-12, and old-policy log-probs
// must match bit-exactly for iterations with a snapshot on disk.
AuditReport audit_grpo_log(const std::string& rollout_log_path,
                           const std::string& snapshot_dir, const RunConfig& run,
                           const ModelConfig& cfg, const SimParams& sim);

}  // namespace navwam
