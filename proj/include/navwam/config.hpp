#pragma once

#include <cstdint>
#include <string>

namespace navwam {

// Every tunable constant in one flat-key structure. Loaded from a single JSON
// file of flat dotted keys; missing keys take the defaults below. The config
// hash is a stable digest of the canonicalized effective content and is
// stamped into every artifact.
struct RunConfig {
  std::uint64_t seed = 0;
  int workers = 0;  // 0 = hardware default

  // simulator
  int sim_k = 4;
  int sim_n_segments = 6;
  double sim_epsilon = 0.5;
  double sim_a_max_xyz = 1.0;
  double sim_a_max_yaw = 0.5;
  double sim_fov_half_angle = 1.0471975511965976;  // pi/3
  double sim_r_max = 20.0;
  double sim_x_min = -20.0, sim_x_max = 20.0;
  double sim_y_min = -20.0, sim_y_max = 20.0;
  double sim_z_min = 0.0, sim_z_max = 8.0;
  int sim_max_landmarks = 4;
  double sim_margin_scale = 5.0;
  double sim_yaw_weight = 1.0;

  // model
  int model_d_z = 16;
  int model_d_text = 32;
  int model_width = 64;
  int model_layers = 2;
  int model_heads = 4;
  int model_mlp_hidden = 128;
  int model_ae_hidden = 96;
  int model_ad_width = 32;
  int model_ad_heads = 2;

  // stage 1
  int sft_ae_epochs = 60;
  double sft_ae_lr = 1e-3;
  int sft_ae_batch = 256;
  double sft_ae_rmse_target = 0.05;
  int sft_world_epochs = 30;
  int sft_action_epochs = 30;
  double sft_lr = 3e-4;
  int sft_batch_episodes = 32;
  double sft_holdout_fraction = 0.1;
  int sft_random_walks = 200;

  // stage 2
  int grpo_group_size = 4;
  double grpo_gamma = 0.9;
  double grpo_lambda_traj = 0.2;
  double grpo_lambda_task = 0.7;
  double grpo_lambda_ref = 0.1;
  double grpo_eps_clip = 0.02;
  double grpo_eps_adv = 1e-8;
  double grpo_kl_coef = 0.0;
  int grpo_frozen_prefix_depth = 1;
  int grpo_iterations = 400;
  double grpo_lr = 1e-4;
  int grpo_batch_episodes = 8;
  double grpo_grad_clip = 0.5;
  std::string grpo_difficulty = "medium";
  int grpo_rollout_log_every = 1;   // 0 disables the per-segment rollout log
  int grpo_snapshot_every = 100;    // 0 disables audit snapshots
  int grpo_probe_every = 50;        // 0 disables the SR probe
  int grpo_probe_episodes = 20;
  std::uint64_t grpo_probe_seed_start = 9000000;
  int grpo_reward_window = 50;

  // demo generation
  std::string demos_difficulty_mix = "easy:2,medium:2,hard:1";

  // optimizer
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  int d_obs() const { return 4 + 5 * sim_max_landmarks; }
  int horizon_steps() const { return sim_k * sim_n_segments; }
  // instruction token + initial frame + n*K frames
  int max_seq() const { return 2 + horizon_steps(); }
};

RunConfig load_config(const std::string& path);        // ConfigError on failure
RunConfig config_from_json_text(const std::string& text);
std::string config_to_json_text(const RunConfig& c);   // canonical, sorted keys
void validate_config(const RunConfig& c);               // ConfigError on violation
std::uint64_t config_hash(const RunConfig& c);          // FNV-1a over canonical text
std::string hash_hex(std::uint64_t h);

}  // namespace navwam
