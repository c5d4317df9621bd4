// navwam: waypoint-navigation world-action model pipeline.
//
// Subcommands: gen-demos, pretrain-ae, train-sft, train-grpo, eval, ablate,
// gradcheck, probe. Exit codes are categorized (see README).

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <CLI11.hpp>

#include "navwam/errors.hpp"
#include "navwam/eval.hpp"
#include "navwam/graph.hpp"
#include "navwam/kernels.hpp"
#include "navwam/model.hpp"
#include "navwam/simworld.hpp"
#include "navwam/train_grpo.hpp"
#include "navwam/train_sft.hpp"

namespace fs = std::filesystem;
using namespace navwam;

namespace {

// Exit codes (documented in the README).
constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitUsage = 2;
constexpr int kExitConfig = 3;
constexpr int kExitMissingArtifact = 4;
constexpr int kExitIncompatible = 5;
constexpr int kExitNumeric = 6;
constexpr int kExitGeneration = 7;

struct Common {
  std::string config_path;
  std::string run_dir;
  int workers = 0;
};

RunConfig load_common(const Common& common) {
  RunConfig cfg = common.config_path.empty() ? RunConfig{} : load_config(common.config_path);
  if (common.workers > 0) cfg.workers = common.workers;
  if (cfg.workers > 0) {
#ifdef _OPENMP
    omp_set_num_threads(cfg.workers);
#endif
    kernels::set_parallel_enabled(cfg.workers != 1);
  }
  return cfg;
}

std::string make_run_dir(const Common& common, const RunConfig& cfg) {
  if (!common.run_dir.empty()) {
    fs::create_directories(common.run_dir);
    return common.run_dir;
  }
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char stamp[32];
  std::strftime(stamp, sizeof(stamp), "%Y%m%dT%H%M%S", std::gmtime(&t));
  const std::string dir =
      (fs::path("runs") / (std::string(stamp) + "-" + hash_hex(config_hash(cfg)).substr(8)))
          .string();
  fs::create_directories(dir);
  return dir;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot write " + path);
  f << text;
}

int run_gen_demos(const Common& common, std::uint64_t seed_override, bool has_seed,
                  int count, const std::string& out_path) {
  RunConfig cfg = load_common(common);
  if (has_seed) cfg.seed = seed_override;
  const SimParams sim = SimParams::from_config(cfg);
  const auto mix = parse_difficulty_mix(cfg.demos_difficulty_mix);
  std::vector<Demo> demos;
  demos.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const TaskFamily family = static_cast<TaskFamily>(i % kNumFamilies);
    const Difficulty difficulty = mix[static_cast<std::size_t>(i) % mix.size()];
    demos.push_back(generate_episode(family, cfg.seed + static_cast<std::uint64_t>(i),
                                     difficulty, sim));
  }
  write_demos(out_path, demos, config_hash(cfg));
  std::cout << "wrote " << demos.size() << " demos to " << out_path << "\n";
  return kExitOk;
}

int run_pretrain_ae(const Common& common, const std::string& demos_path,
                    const std::string& out_ckpt) {
  RunConfig cfg = load_common(common);
  const SimParams sim = SimParams::from_config(cfg);
  const ModelConfig mc = ModelConfig::from_config(cfg);
  const std::uint64_t hash = config_hash(cfg);
  const auto demos = read_demos(demos_path, hash);
  ParameterStore store;
  init_params(store, mc, cfg.seed);
  const std::string run_dir = make_run_dir(common, cfg);
  std::ofstream log(fs::path(run_dir) / "ae_train.log");
  const auto result = pretrain_autoencoder(store, mc, sim, demos, cfg, &log);
  save_checkpoint(out_ckpt, store, hash);
  std::cout << "ae pretrain: holdout rmse " << result.final_holdout_rmse << " after "
            << result.epochs_run << " epochs\n";
  if (!result.reached_target) {
    std::cerr << "ae pretrain failed to reach rmse target " << cfg.sft_ae_rmse_target
              << "\n";
    return kExitNumeric;
  }
  return kExitOk;
}

int run_train_sft(const Common& common, const std::string& demos_path,
                  const std::string& ae_ckpt, const std::string& out_ckpt) {
  RunConfig cfg = load_common(common);
  const SimParams sim = SimParams::from_config(cfg);
  const ModelConfig mc = ModelConfig::from_config(cfg);
  const std::uint64_t hash = config_hash(cfg);
  const auto demos = read_demos(demos_path, hash);
  ParameterStore store = load_checkpoint(ae_ckpt, hash);
  const std::string run_dir = make_run_dir(common, cfg);
  std::ofstream log(fs::path(run_dir) / "sft_train.log");
  const auto items = prepare_sft_batches(store, mc, sim, demos);
  const auto world = train_world(store, mc, items, cfg, &log);
  const auto action = train_action(store, mc, items, cfg, &log);
  save_checkpoint(out_ckpt, store, hash);
  std::cout << "sft: holdout L_wm " << world.holdout_lwm_per_epoch.back()
            << ", one-segment mse " << world.holdout_segment_mse << " (persistence "
            << world.persistence_segment_mse << "), action mse "
            << action.holdout_mse_per_epoch.back() << "\n";
  return kExitOk;
}

int run_train_grpo(const Common& common, const std::string& init_ckpt,
                   const std::string& out_ckpt) {
  RunConfig cfg = load_common(common);
  const SimParams sim = SimParams::from_config(cfg);
  const ModelConfig mc = ModelConfig::from_config(cfg);
  const std::uint64_t hash = config_hash(cfg);
  if (!fs::exists(init_ckpt)) {
    throw MissingArtifact("train-grpo: stage-1 checkpoint not found: " + init_ckpt);
  }
  ParameterStore params = load_checkpoint(init_ckpt, hash);
  const ParameterStore ref = params;
  const std::string run_dir = make_run_dir(common, cfg);
  std::ofstream metrics(fs::path(run_dir) / "grpo_metrics.log");
  std::ofstream rollouts(fs::path(run_dir) / "grpo_rollouts.log");
  const std::string snap_dir = (fs::path(run_dir) / "snapshots").string();
  fs::create_directories(snap_dir);
  const auto result = run_grpo(params, ref, cfg, mc, sim, &metrics,
                               cfg.grpo_rollout_log_every > 0 ? &rollouts : nullptr,
                               snap_dir);
  save_checkpoint(out_ckpt, params, hash);
  std::cout << "grpo: " << result.iterations_run << " iterations, final mean r_task "
            << (result.mean_r_task.empty() ? 0.0 : result.mean_r_task.back()) << "\n";
  return kExitOk;
}

int run_eval(const Common& common, const std::string& ckpt_path,
             const std::string& suite_path, const std::string& mode_name,
             const std::string& rng_policy, const std::string& out_path, bool force) {
  RunConfig cfg = load_common(common);
  const SimParams sim = SimParams::from_config(cfg);
  const ModelConfig mc = ModelConfig::from_config(cfg);
  const std::uint64_t hash = config_hash(cfg);
  const ParameterStore store = load_checkpoint(ckpt_path, hash, force);
  const SuiteSpec suite = load_suite(suite_path);
  const EvalReport report =
      evaluate(store, mc, sim, suite, rollout_mode_from_name(mode_name),
               rng_policy_from_name(rng_policy), hash, mix_seed(cfg.seed, 0xe7a1ULL));
  const std::string text = report_to_json(report);
  if (out_path.empty()) {
    std::cout << text;
  } else {
    write_text(out_path, text);
    std::cout << "suite " << report.suite_id << ": SR " << report.overall_sr
              << ", NDTW " << report.mean_ndtw << " -> " << out_path << "\n";
  }
  return kExitOk;
}

int run_ablate(const Common& common, const std::string& ckpt_path,
               const std::string& ckpt_b_path, const std::string& suite_path,
               const std::string& modes_csv, const std::string& out_dir) {
  RunConfig cfg = load_common(common);
  const SimParams sim = SimParams::from_config(cfg);
  const ModelConfig mc = ModelConfig::from_config(cfg);
  const std::uint64_t hash = config_hash(cfg);
  const SuiteSpec suite = load_suite(suite_path);
  fs::create_directories(out_dir);
  const std::uint64_t eval_seed = mix_seed(cfg.seed, 0xab1a7eULL);

  std::vector<EvalReport> reports;
  if (!ckpt_b_path.empty()) {
    // Checkpoint ablation (e.g. stage-1 vs stage-2) under one mode.
    const RolloutMode mode = rollout_mode_from_name(
        modes_csv.find(',') == std::string::npos ? modes_csv : "closed_loop");
    for (const std::string& path : {ckpt_path, ckpt_b_path}) {
      const ParameterStore store = load_checkpoint(path, hash);
      reports.push_back(evaluate(store, mc, sim, suite, mode, RngPolicy::MeanAction,
                                 hash, eval_seed));
    }
  } else {
    const ParameterStore store = load_checkpoint(ckpt_path, hash);
    std::stringstream ss(modes_csv);
    std::string mode_name;
    while (std::getline(ss, mode_name, ',')) {
      reports.push_back(evaluate(store, mc, sim, suite,
                                 rollout_mode_from_name(mode_name),
                                 RngPolicy::MeanAction, hash, eval_seed));
    }
  }
  if (reports.size() != 2) {
    throw std::invalid_argument("ablate: need exactly two evaluations");
  }
  write_text((fs::path(out_dir) / "report_a.json").string(), report_to_json(reports[0]));
  write_text((fs::path(out_dir) / "report_b.json").string(), report_to_json(reports[1]));
  const CompareTable delta = compare(reports[0], reports[1]);
  write_text((fs::path(out_dir) / "compare.json").string(), compare_to_json(delta));
  std::cout << "ablate: SR " << reports[0].overall_sr << " vs " << reports[1].overall_sr
            << " (delta " << delta.overall_sr_delta << ") -> " << out_dir << "\n";
  return kExitOk;
}

int run_gradcheck(const Common& common) {
  RunConfig cfg = load_common(common);
  cfg.model_width = 8;
  cfg.model_heads = 2;
  cfg.model_mlp_hidden = 16;
  cfg.model_ae_hidden = 12;
  cfg.model_ad_width = 8;
  cfg.model_ad_heads = 2;
  const ModelConfig mc = ModelConfig::from_config(cfg);
  ParameterStore store;
  init_params(store, mc, cfg.seed);

  Rng rng(mix_seed(cfg.seed, 0x97adULL));
  Tensor latents(static_cast<std::size_t>(mc.horizon_frames()),
                 static_cast<std::size_t>(mc.d_z));
  for (double& v : latents.d) v = 0.5 * rng.normal();
  Tensor expert(static_cast<std::size_t>(mc.k * mc.n_segments), 4);
  for (double& v : expert.d) v = 0.3 * rng.normal();
  Instruction instr;
  Primitive prim;
  prim.family = TaskFamily::Approach;
  prim.landmark_id = 0;
  prim.magnitude_bucket = 3;
  prim.magnitude = magnitude_from_bucket(prim.family, 3);
  instr.task_family = prim.family;
  instr.primitives = {prim};
  instr.tokens = tokens_from_primitives(instr.primitives);

  bool all_ok = true;
  auto report_result = [&](const std::string& name, const GradCheckReport& rep) {
    double worst = 0.0;
    for (const auto& e : rep.entries) worst = std::max(worst, e.max_rel_err);
    std::cout << (rep.passed() ? "PASS " : "FAIL ") << name << " max_rel_err " << worst
              << " tol " << rep.tol << "\n";
    all_ok = all_ok && rep.passed();
  };

  {
    auto build = [&](Tape& tape, ParameterStore& params) {
      const int text = modelg::text_embedding(tape, params, mc, instr, true);
      const int frames = tape.constant(latents);
      const int preds = modelg::backbone_predictions(tape, params, mc, text, {frames}, true);
      const int next = tape.slice(preds, 1, latents.rows, 0, latents.cols);
      Tensor target(latents.rows - 1, latents.cols);
      std::copy(latents.d.begin() + static_cast<std::ptrdiff_t>(latents.cols),
                latents.d.end(), target.d.begin());
      const int log_std = tape.constant(Tensor(1, latents.cols));
      return tape.gaussian_nll(next, log_std, tape.constant(target));
    };
    report_result("stage1.l_wm", check_gradients(build, store, 1e-5, 1e-3));
  }
  {
    auto build = [&](Tape& tape, ParameterStore& params) {
      std::vector<int> means;
      for (int j = 0; j < mc.n_segments; ++j) {
        Tensor seg(static_cast<std::size_t>(mc.k), latents.cols);
        for (int k = 0; k < mc.k; ++k) {
          for (std::size_t c = 0; c < latents.cols; ++c) {
            seg.at(static_cast<std::size_t>(k), c) =
                latents.at(static_cast<std::size_t>(1 + j * mc.k + k), c);
          }
        }
        means.push_back(modelg::action_decoder(tape, params, mc, tape.constant(seg), true));
      }
      return tape.mse(tape.concat_rows(means), tape.constant(expert));
    };
    report_result("stage1.l_act", check_gradients(build, store, 1e-5, 1e-3));
  }
  std::cout << (all_ok ? "gradcheck: all passed\n" : "gradcheck: FAILURES\n");
  return all_ok ? kExitOk : kExitNumeric;
}

int run_probe(const Common& common, const std::string& ckpt_path, std::uint64_t seed,
              int count, const std::string& difficulty, const std::string& out_dir) {
  RunConfig cfg = load_common(common);
  const SimParams sim = SimParams::from_config(cfg);
  const ModelConfig mc = ModelConfig::from_config(cfg);
  const std::uint64_t hash = config_hash(cfg);
  const ParameterStore store = load_checkpoint(ckpt_path, hash);
  fs::create_directories(out_dir);
  const Difficulty diff = difficulty_from_name(difficulty);

  std::vector<double> closed_div(static_cast<std::size_t>(cfg.sim_n_segments), 0.0);
  std::vector<double> open_div = closed_div;
  std::vector<double> closed_dec = closed_div, open_dec = closed_div;
  for (int i = 0; i < count; ++i) {
    const Demo episode = generate_episode(static_cast<TaskFamily>(i % kNumFamilies),
                                          seed + static_cast<std::uint64_t>(i), diff, sim);
    const auto closed = latent_probe(store, mc, sim, episode, RolloutMode::ClosedLoop);
    const auto open = latent_probe(store, mc, sim, episode, RolloutMode::OpenLoop);
    for (std::size_t j = 0; j < closed.divergence.size(); ++j) {
      closed_div[j] += closed.divergence[j] / count;
      open_div[j] += open.divergence[j] / count;
      closed_dec[j] += closed.decode_rmse[j] / count;
      open_dec[j] += open.decode_rmse[j] / count;
    }
  }
  auto dump = [&](const std::string& name, const std::vector<double>& div,
                  const std::vector<double>& dec) {
    std::ofstream f(fs::path(out_dir) / name);
    for (std::size_t j = 0; j < div.size(); ++j) {
      f << (j + 1) << " " << div[j] << " " << dec[j] << "\n";
    }
  };
  dump("closed_loop.dat", closed_div, closed_dec);
  dump("open_loop.dat", open_div, open_dec);
  std::cout << "probe: final-segment divergence closed " << closed_div.back()
            << " vs open " << open_div.back() << " -> " << out_dir << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"waypoint-navigation world-action model pipeline"};
  app.require_subcommand(1);

  Common common;
  app.add_option("--config", common.config_path, "config file (JSON, flat keys)");
  app.add_option("--run-dir", common.run_dir, "run directory (default: runs/<stamp>-<hash>)");
  app.add_option("--workers", common.workers, "parallel worker threads (1 = serial)");

  // gen-demos
  auto* gen = app.add_subcommand("gen-demos", "generate expert demonstrations");
  int gen_count = 1000;
  std::uint64_t gen_seed = 0;
  bool gen_has_seed = false;
  std::string gen_out = "demos.jsonl";
  gen->add_option("--count", gen_count, "number of episodes");
  gen->add_option("--seed", gen_seed, "top-level seed (overrides config)")
      ->each([&](const std::string&) { gen_has_seed = true; });
  gen->add_option("--out", gen_out, "output file");

  // pretrain-ae
  auto* pae = app.add_subcommand("pretrain-ae", "pretrain and freeze the observation autoencoder");
  std::string pae_demos, pae_out = "ae.ckpt";
  pae->add_option("--demos", pae_demos, "demo file")->required();
  pae->add_option("--out-ckpt", pae_out, "output checkpoint");

  // train-sft
  auto* sft = app.add_subcommand("train-sft", "stage-1 supervised training");
  std::string sft_demos, sft_ae, sft_out = "sft.ckpt";
  sft->add_option("--demos", sft_demos, "demo file")->required();
  sft->add_option("--ae-ckpt", sft_ae, "autoencoder checkpoint")->required();
  sft->add_option("--out-ckpt", sft_out, "output checkpoint");

  // train-grpo
  auto* grpo = app.add_subcommand("train-grpo", "stage-2 GRPO training");
  std::string grpo_init, grpo_out = "grpo.ckpt";
  grpo->add_option("--init-ckpt", grpo_init, "stage-1 checkpoint")->required();
  grpo->add_option("--out-ckpt", grpo_out, "output checkpoint");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a suite");
  std::string ev_ckpt, ev_suite, ev_mode = "closed_loop", ev_rng = "mean_action", ev_out;
  bool ev_force = false;
  ev->add_option("--ckpt", ev_ckpt, "checkpoint")->required();
  ev->add_option("--suite", ev_suite, "suite spec file")->required();
  ev->add_option("--mode", ev_mode, "closed_loop|open_loop");
  ev->add_option("--rng-policy", ev_rng, "mean_action|sampled");
  ev->add_option("--out", ev_out, "report output path (stdout if empty)");
  ev->add_flag("--force", ev_force, "skip config-hash compatibility check");

  // ablate
  auto* ab = app.add_subcommand("ablate", "paired evaluations plus a delta table");
  std::string ab_ckpt, ab_ckpt_b, ab_suite, ab_modes = "closed_loop,open_loop",
                                             ab_out = "ablation";
  ab->add_option("--ckpt", ab_ckpt, "checkpoint")->required();
  ab->add_option("--ckpt-b", ab_ckpt_b, "second checkpoint (checkpoint ablation)");
  ab->add_option("--suite", ab_suite, "suite spec file")->required();
  ab->add_option("--modes", ab_modes, "comma-separated rollout modes");
  ab->add_option("--out-dir", ab_out, "output directory");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of both stage-1 losses");

  // probe
  auto* pr = app.add_subcommand("probe", "latent prediction drift, closed vs open loop");
  std::string pr_ckpt, pr_out = "probe", pr_diff = "medium";
  std::uint64_t pr_seed = 5000000;
  int pr_count = 50;
  pr->add_option("--ckpt", pr_ckpt, "checkpoint")->required();
  pr->add_option("--seed", pr_seed, "first episode seed");
  pr->add_option("--count", pr_count, "episode count");
  pr->add_option("--difficulty", pr_diff, "easy|medium|hard");
  pr->add_option("--out-dir", pr_out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (gen->parsed()) return run_gen_demos(common, gen_seed, gen_has_seed, gen_count, gen_out);
    if (pae->parsed()) return run_pretrain_ae(common, pae_demos, pae_out);
    if (sft->parsed()) return run_train_sft(common, sft_demos, sft_ae, sft_out);
    if (grpo->parsed()) return run_train_grpo(common, grpo_init, grpo_out);
    if (ev->parsed()) return run_eval(common, ev_ckpt, ev_suite, ev_mode, ev_rng, ev_out, ev_force);
    if (ab->parsed()) return run_ablate(common, ab_ckpt, ab_ckpt_b, ab_suite, ab_modes, ab_out);
    if (gc->parsed()) return run_gradcheck(common);
    if (pr->parsed()) return run_probe(common, pr_ckpt, pr_seed, pr_count, pr_diff, pr_out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const MissingArtifact& e) {
    std::cerr << "missing artifact: " << e.what() << "\n";
    return kExitMissingArtifact;
  } catch (const IncompatibleCheckpoint& e) {
    std::cerr << "incompatible artifact: " << e.what() << "\n";
    return kExitIncompatible;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const GenerationError& e) {
    std::cerr << "generation error: " << e.what() << "\n";
    return kExitGeneration;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
  return kExitUsage;
}
