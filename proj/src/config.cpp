#include "navwam/config.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "navwam/errors.hpp"

namespace navwam {

namespace {

using json = nlohmann::json;

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Key layout is a flat map; the apply/dump pair below is the single source of
// truth for key names and defaults.
template <typename FD, typename FI, typename FU, typename FS>
void for_each_key(RunConfig& c, FD fd, FI fi, FU fu, FS fs) {
  fu("seed", c.seed);
  fi("workers", c.workers);

  fi("sim.k", c.sim_k);
  fi("sim.n_segments", c.sim_n_segments);
  fd("sim.epsilon", c.sim_epsilon);
  fd("sim.a_max_xyz", c.sim_a_max_xyz);
  fd("sim.a_max_yaw", c.sim_a_max_yaw);
  fd("sim.fov_half_angle", c.sim_fov_half_angle);
  fd("sim.r_max", c.sim_r_max);
  fd("sim.x_min", c.sim_x_min);
  fd("sim.x_max", c.sim_x_max);
  fd("sim.y_min", c.sim_y_min);
  fd("sim.y_max", c.sim_y_max);
  fd("sim.z_min", c.sim_z_min);
  fd("sim.z_max", c.sim_z_max);
  fi("sim.max_landmarks", c.sim_max_landmarks);
  fd("sim.margin_scale", c.sim_margin_scale);
  fd("sim.yaw_weight", c.sim_yaw_weight);

  fi("model.d_z", c.model_d_z);
  fi("model.d_text", c.model_d_text);
  fi("model.width", c.model_width);
  fi("model.layers", c.model_layers);
  fi("model.heads", c.model_heads);
  fi("model.mlp_hidden", c.model_mlp_hidden);
  fi("model.ae_hidden", c.model_ae_hidden);
  fi("model.ad_width", c.model_ad_width);
  fi("model.ad_heads", c.model_ad_heads);

  fi("sft.ae_epochs", c.sft_ae_epochs);
  fd("sft.ae_lr", c.sft_ae_lr);
  fi("sft.ae_batch", c.sft_ae_batch);
  fd("sft.ae_rmse_target", c.sft_ae_rmse_target);
  fi("sft.world_epochs", c.sft_world_epochs);
  fi("sft.action_epochs", c.sft_action_epochs);
  fd("sft.lr", c.sft_lr);
  fi("sft.batch_episodes", c.sft_batch_episodes);
  fd("sft.holdout_fraction", c.sft_holdout_fraction);
  fi("sft.random_walks", c.sft_random_walks);

  fi("grpo.group_size", c.grpo_group_size);
  fd("grpo.gamma", c.grpo_gamma);
  fd("grpo.lambda_traj", c.grpo_lambda_traj);
  fd("grpo.lambda_task", c.grpo_lambda_task);
  fd("grpo.lambda_ref", c.grpo_lambda_ref);
  fd("grpo.eps_clip", c.grpo_eps_clip);
  fd("grpo.eps_adv", c.grpo_eps_adv);
  fd("grpo.kl_coef", c.grpo_kl_coef);
  fi("grpo.frozen_prefix_depth", c.grpo_frozen_prefix_depth);
  fi("grpo.iterations", c.grpo_iterations);
  fd("grpo.lr", c.grpo_lr);
  fi("grpo.batch_episodes", c.grpo_batch_episodes);
  fd("grpo.grad_clip", c.grpo_grad_clip);
  fs("grpo.difficulty", c.grpo_difficulty);
  fi("grpo.rollout_log_every", c.grpo_rollout_log_every);
  fi("grpo.snapshot_every", c.grpo_snapshot_every);
  fi("grpo.probe_every", c.grpo_probe_every);
  fi("grpo.probe_episodes", c.grpo_probe_episodes);
  fu("grpo.probe_seed_start", c.grpo_probe_seed_start);
  fi("grpo.reward_window", c.grpo_reward_window);

  fs("demos.difficulty_mix", c.demos_difficulty_mix);

  fd("adam.beta1", c.adam_beta1);
  fd("adam.beta2", c.adam_beta2);
  fd("adam.eps", c.adam_eps);
}

}  // namespace

RunConfig config_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config root must be a JSON object");

  RunConfig c;
  std::map<std::string, bool> known;
  auto fd = [&](const char* k, double& v) {
    known[k] = true;
    if (j.contains(k)) {
      if (!j[k].is_number()) throw ConfigError(std::string("config key not numeric: ") + k);
      v = j[k].get<double>();
    }
  };
  auto fi = [&](const char* k, int& v) {
    known[k] = true;
    if (j.contains(k)) {
      if (!j[k].is_number_integer()) throw ConfigError(std::string("config key not an integer: ") + k);
      v = j[k].get<int>();
    }
  };
  auto fu = [&](const char* k, std::uint64_t& v) {
    known[k] = true;
    if (j.contains(k)) {
      if (!j[k].is_number_unsigned() && !j[k].is_number_integer()) {
        throw ConfigError(std::string("config key not an integer: ") + k);
      }
      v = j[k].get<std::uint64_t>();
    }
  };
  auto fs = [&](const char* k, std::string& v) {
    known[k] = true;
    if (j.contains(k)) {
      if (!j[k].is_string()) throw ConfigError(std::string("config key not a string: ") + k);
      v = j[k].get<std::string>();
    }
  };
  for_each_key(c, fd, fi, fu, fs);
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.count(it.key())) throw ConfigError("unknown config key: " + it.key());
  }
  validate_config(c);
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return config_from_json_text(ss.str());
}

std::string config_to_json_text(const RunConfig& cfg) {
  RunConfig c = cfg;
  // std::map keeps keys sorted, which is the canonical order hashed below.
  std::map<std::string, std::string> kv;
  auto fd = [&](const char* k, double& v) { kv[k] = fmt17(v); };
  auto fi = [&](const char* k, int& v) { kv[k] = std::to_string(v); };
  auto fu = [&](const char* k, std::uint64_t& v) { kv[k] = std::to_string(v); };
  auto fs = [&](const char* k, std::string& v) { kv[k] = json(v).dump(); };
  for_each_key(c, fd, fi, fu, fs);
  std::string out = "{";
  bool first = true;
  for (const auto& [k, v] : kv) {
    if (!first) out += ",";
    first = false;
    out += "\n  \"" + k + "\": " + v;
  }
  out += "\n}\n";
  return out;
}

void validate_config(const RunConfig& c) {
  auto fail = [](const std::string& msg) { throw ConfigError("config: " + msg); };
  if (c.sim_k < 1) fail("sim.k must be >= 1");
  if (c.sim_n_segments < 1) fail("sim.n_segments must be >= 1");
  if (c.sim_epsilon <= 0) fail("sim.epsilon must be > 0");
  if (c.sim_a_max_xyz <= 0 || c.sim_a_max_yaw <= 0) fail("action bounds must be > 0");
  if (c.sim_max_landmarks < 2 || c.sim_max_landmarks > 8) {
    fail("sim.max_landmarks must be in [2, 8]");
  }
  if (c.sim_x_min >= c.sim_x_max || c.sim_y_min >= c.sim_y_max ||
      c.sim_z_min >= c.sim_z_max) {
    fail("world bounds are degenerate");
  }
  if (c.model_d_z < 1 || c.model_width < 4 || c.model_layers < 1) {
    fail("model dimensions invalid");
  }
  if (c.model_width % c.model_heads != 0) fail("model.width must divide by heads");
  if (c.model_ad_width % c.model_ad_heads != 0) {
    fail("model.ad_width must divide by ad_heads");
  }
  if (c.grpo_group_size < 2) fail("grpo.group_size must be >= 2");
  if (!(c.grpo_gamma > 0 && c.grpo_gamma < 1)) fail("grpo.gamma must be in (0,1)");
  if (c.grpo_lambda_traj < 0 || c.grpo_lambda_task < 0 || c.grpo_lambda_ref < 0) {
    fail("grpo reward weights must be non-negative");
  }
  if (c.grpo_eps_clip <= 0) fail("grpo.eps_clip must be > 0");
  if (c.grpo_eps_adv <= 0) fail("grpo.eps_adv must be > 0");
  if (c.grpo_difficulty != "easy" && c.grpo_difficulty != "medium" &&
      c.grpo_difficulty != "hard") {
    fail("grpo.difficulty must be easy|medium|hard");
  }
  if (c.sft_holdout_fraction <= 0 || c.sft_holdout_fraction >= 1) {
    fail("sft.holdout_fraction must be in (0,1)");
  }
}

std::uint64_t config_hash(const RunConfig& c) {
  const std::string text = config_to_json_text(c);
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hash_hex(std::uint64_t h) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace navwam
