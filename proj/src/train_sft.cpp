#include "navwam/train_sft.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "navwam/errors.hpp"
#include "navwam/parallel.hpp"
#include "navwam/rng.hpp"

namespace navwam {

namespace {

void shuffle_indices(std::vector<std::size_t>& idx, Rng& rng) {
  for (std::size_t i = idx.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1));
    std::swap(idx[i - 1], idx[j]);
  }
}

void log_line(std::ostream* log, const std::string& line) {
  if (log != nullptr) *log << line << "\n";
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

// Gradient accumulation over a batch of independent per-item tapes, reduced
// in item order so worker count never changes the result.
template <typename BuildFn>
GradMap batched_gradients(const ParameterStore& store, const std::vector<std::size_t>& items,
                          const BuildFn& build_loss, double* mean_loss) {
  std::vector<GradMap> grads(items.size());
  std::vector<double> losses(items.size(), 0.0);
  parallel_for_indexed(items.size(), [&](std::size_t s) {
    Tape tape;
    const int loss = build_loss(tape, items[s]);
    losses[s] = tape.value(loss).d[0];
    tape.backward(loss);
    grads[s] = tape.parameter_gradients(store);
  });
  GradMap total;
  for (const GradMap& g : grads) accumulate(total, g);
  const double inv = 1.0 / static_cast<double>(items.size());
  for (auto& [name, g] : total) {
    for (double& v : g.d) v *= inv;
  }
  if (mean_loss != nullptr) {
    double acc = 0.0;
    for (double l : losses) acc += l;
    *mean_loss = acc * inv;
  }
  return total;
}

}  // namespace

bool is_holdout_seed(std::uint64_t seed) { return seed % 10 == 9; }

std::vector<SftBatchItem> prepare_sft_batches(const ParameterStore& store,
                                              const ModelConfig& cfg,
                                              const SimParams& sim,
                                              const std::vector<Demo>& demos) {
  std::vector<SftBatchItem> items(demos.size());
  parallel_for_indexed(demos.size(), [&](std::size_t i) {
    const Demo& demo = demos[i];
    SftBatchItem item;
    item.instruction = demo.spec.instruction;
    item.seed = demo.spec.seed;
    item.holdout = is_holdout_seed(demo.spec.seed);
    std::vector<Observation> frames;
    frames.reserve(demo.expert_poses.size());
    for (const Pose& pose : demo.expert_poses) {
      frames.push_back(render_observation(demo.spec.scene, pose, sim));
    }
    item.latents = encode_frames(store, cfg, sim, frames);
    item.latents_real = true;
    item.expert_actions = Tensor(demo.expert_actions.size(), 4);
    for (std::size_t a = 0; a < demo.expert_actions.size(); ++a) {
      item.expert_actions.at(a, 0) = demo.expert_actions[a].dx;
      item.expert_actions.at(a, 1) = demo.expert_actions[a].dy;
      item.expert_actions.at(a, 2) = demo.expert_actions[a].dz;
      item.expert_actions.at(a, 3) = demo.expert_actions[a].dpsi;
    }
    items[i] = std::move(item);
  });
  return items;
}

AePretrainResult pretrain_autoencoder(ParameterStore& store, const ModelConfig& cfg,
                                      const SimParams& sim,
                                      const std::vector<Demo>& demos,
                                      const RunConfig& run, std::ostream* log) {
  if (demos.size() < 500) {
    throw std::invalid_argument("pretrain_autoencoder: needs >= 500 demonstrations");
  }
  // Frame dataset: expert observations plus bounded random walks, normalized.
  std::vector<std::vector<double>> train_frames, holdout_frames;
  for (const Demo& demo : demos) {
    auto& sink = is_holdout_seed(demo.spec.seed) ? holdout_frames : train_frames;
    for (const Pose& pose : demo.expert_poses) {
      sink.push_back(normalize_observation(
          render_observation(demo.spec.scene, pose, sim), sim));
    }
  }
  for (int w = 0; w < run.sft_random_walks; ++w) {
    Rng rng(mix_seed(run.seed, 0xa1fULL, static_cast<std::uint64_t>(w)));
    const Scene scene = generate_scene(mix_seed(run.seed, 0xa20ULL, static_cast<std::uint64_t>(w)), sim);
    Pose q;
    q.x = rng.uniform(sim.world.x_min + 2.0, sim.world.x_max - 2.0);
    q.y = rng.uniform(sim.world.y_min + 2.0, sim.world.y_max - 2.0);
    q.z = rng.uniform(sim.world.z_min + 0.5, sim.world.z_max - 0.5);
    q.psi = wrap_angle(rng.uniform(-3.14159265358979, 3.14159265358979));
    for (int t = 0; t < sim.horizon_steps(); ++t) {
      train_frames.push_back(normalize_observation(render_observation(scene, q, sim), sim));
      const Action a{rng.uniform(-sim.bounds.xyz, sim.bounds.xyz),
                     rng.uniform(-sim.bounds.xyz, sim.bounds.xyz),
                     rng.uniform(-sim.bounds.xyz, sim.bounds.xyz),
                     rng.uniform(-sim.bounds.yaw, sim.bounds.yaw)};
      q = compose_pose(q, a, sim.bounds);
    }
  }

  const std::size_t d = static_cast<std::size_t>(cfg.d_obs);
  auto frames_to_tensor = [&](const std::vector<std::vector<double>>& frames,
                              const std::vector<std::size_t>& pick) {
    Tensor t(pick.size(), d);
    for (std::size_t r = 0; r < pick.size(); ++r) {
      std::copy(frames[pick[r]].begin(), frames[pick[r]].end(), t.d.begin() + r * d);
    }
    return t;
  };

  auto holdout_rmse = [&]() {
    Tape tape;
    std::vector<std::size_t> all(holdout_frames.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    const int x = tape.constant(frames_to_tensor(holdout_frames, all));
    const int z = modelg::encode_frame(tape, store, cfg, x, false);
    const int recon = modelg::decode_frame(tape, store, cfg, z, false);
    const int loss = tape.mse(recon, x);
    return std::sqrt(tape.value(loss).d[0]);
  };

  AePretrainResult result;
  std::vector<std::size_t> order(train_frames.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < run.sft_ae_epochs; ++epoch) {
    Rng rng(mix_seed(run.seed, 0xae00ULL, static_cast<std::uint64_t>(epoch)));
    shuffle_indices(order, rng);
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(run.sft_ae_batch)) {
      const std::size_t end = std::min(order.size(), at + static_cast<std::size_t>(run.sft_ae_batch));
      std::vector<std::size_t> pick(order.begin() + static_cast<std::ptrdiff_t>(at),
                                    order.begin() + static_cast<std::ptrdiff_t>(end));
      Tape tape;
      const int x = tape.constant(frames_to_tensor(train_frames, pick));
      const int z = modelg::encode_frame(tape, store, cfg, x, true);
      const int recon = modelg::decode_frame(tape, store, cfg, z, true);
      const int loss = tape.mse(recon, x);
      epoch_loss += tape.value(loss).d[0];
      batches += 1;
      tape.backward(loss);
      GradMap grads = tape.parameter_gradients(store);
      adam_step(store, grads, run.sft_ae_lr, run.adam_beta1, run.adam_beta2, run.adam_eps);
    }
    result.train_loss_per_epoch.push_back(epoch_loss / static_cast<double>(batches));
    result.holdout_rmse_per_epoch.push_back(holdout_rmse());
    result.epochs_run = epoch + 1;
    log_line(log, std::string("{\"stage\":\"ae\",\"epoch\":") + std::to_string(epoch) +
                      ",\"split\":\"train\",\"mse\":" + num(result.train_loss_per_epoch.back()) +
                      ",\"holdout_rmse\":" + num(result.holdout_rmse_per_epoch.back()) + "}");
    // train well past the acceptance threshold; latent fidelity is upstream
    // of both the world model and the action decoder
    if (result.holdout_rmse_per_epoch.back() < 0.5 * run.sft_ae_rmse_target) break;
  }
  result.final_holdout_rmse = result.holdout_rmse_per_epoch.back();
  result.reached_target = result.final_holdout_rmse < run.sft_ae_rmse_target;
  freeze_autoencoder(store);
  return result;
}

namespace {

// L_wm for one item: unit-variance Gaussian NLL of each next frame given the
// teacher-forced real prefix, summed over the n segments.
int world_loss(Tape& tape, const ParameterStore& store, const ModelConfig& cfg,
               const SftBatchItem& item, bool trainable) {
  if (!item.latents_real) {
    throw ProtocolError("stage-1 world training requires real-flagged latents");
  }
  const int horizon = static_cast<int>(item.latents.rows) - 1;
  const int text = modelg::text_embedding(tape, store, cfg, item.instruction, trainable);
  Tensor inputs(static_cast<std::size_t>(horizon), item.latents.cols);
  std::copy(item.latents.d.begin(),
            item.latents.d.begin() + static_cast<std::ptrdiff_t>(inputs.size()),
            inputs.d.begin());
  const int frames = tape.constant(std::move(inputs));
  const int preds = modelg::backbone_predictions(tape, store, cfg, text, {frames}, trainable);
  const int pred_next = tape.slice(preds, 1, static_cast<std::size_t>(horizon) + 1, 0,
                                   item.latents.cols);
  Tensor targets(static_cast<std::size_t>(horizon), item.latents.cols);
  std::copy(item.latents.d.begin() + static_cast<std::ptrdiff_t>(item.latents.cols),
            item.latents.d.end(), targets.d.begin());
  const int target_node = tape.constant(std::move(targets));
  const int log_std = tape.constant(Tensor(1, item.latents.cols));
  return tape.gaussian_nll(pred_next, log_std, target_node);
}

int action_loss(Tape& tape, const ParameterStore& store, const ModelConfig& cfg,
                const SftBatchItem& item, bool trainable) {
  const int segments = static_cast<int>(item.expert_actions.rows) / cfg.k;
  std::vector<int> means;
  for (int j = 0; j < segments; ++j) {
    const std::size_t f0 = 1 + static_cast<std::size_t>(j * cfg.k);
    Tensor seg(static_cast<std::size_t>(cfg.k), item.latents.cols);
    std::copy(item.latents.d.begin() + static_cast<std::ptrdiff_t>(f0 * item.latents.cols),
              item.latents.d.begin() +
                  static_cast<std::ptrdiff_t>((f0 + static_cast<std::size_t>(cfg.k)) *
                                              item.latents.cols),
              seg.d.begin());
    means.push_back(modelg::action_decoder(tape, store, cfg, tape.constant(std::move(seg)),
                                           trainable));
  }
  const int all_means = means.size() == 1 ? means[0] : tape.concat_rows(means);
  const int target = tape.constant(item.expert_actions);
  return tape.mse(all_means, target);
}

}  // namespace

void world_segment_errors(const ParameterStore& store, const ModelConfig& cfg,
                          const std::vector<SftBatchItem>& items, double* model_mse,
                          double* persistence_mse) {
  double model_acc = 0.0, persist_acc = 0.0;
  std::size_t count = 0;
  std::vector<double> model_parts(items.size(), 0.0), persist_parts(items.size(), 0.0);
  std::vector<std::size_t> counts(items.size(), 0);
  parallel_for_indexed(items.size(), [&](std::size_t ii) {
    const SftBatchItem& item = items[ii];
    const int segments = static_cast<int>(item.expert_actions.rows) / cfg.k;
    for (int j = 0; j < segments; ++j) {
      const std::size_t ctx_frames = 1 + static_cast<std::size_t>(j * cfg.k);
      std::vector<Tensor> context;
      for (std::size_t r = 0; r < ctx_frames; ++r) {
        Tensor row(1, item.latents.cols);
        for (std::size_t c = 0; c < item.latents.cols; ++c) row.d[c] = item.latents.at(r, c);
        context.push_back(std::move(row));
      }
      const LatentSegment pred = predict_next_segment(store, cfg, item.instruction, context);
      const Tensor& last = context.back();
      for (int k = 0; k < cfg.k; ++k) {
        const std::size_t target_row = ctx_frames + static_cast<std::size_t>(k);
        for (std::size_t c = 0; c < item.latents.cols; ++c) {
          const double truth = item.latents.at(target_row, c);
          const double mdv = pred.frames.at(static_cast<std::size_t>(k), c) - truth;
          const double pdv = last.d[c] - truth;
          model_parts[ii] += mdv * mdv;
          persist_parts[ii] += pdv * pdv;
        }
      }
      counts[ii] += static_cast<std::size_t>(cfg.k) * item.latents.cols;
    }
  });
  for (std::size_t i = 0; i < items.size(); ++i) {
    model_acc += model_parts[i];
    persist_acc += persist_parts[i];
    count += counts[i];
  }
  *model_mse = count ? model_acc / static_cast<double>(count) : 0.0;
  *persistence_mse = count ? persist_acc / static_cast<double>(count) : 0.0;
}

WorldTrainResult train_world(ParameterStore& store, const ModelConfig& cfg,
                             const std::vector<SftBatchItem>& items,
                             const RunConfig& run, std::ostream* log) {
  std::vector<std::size_t> train_idx, holdout_idx;
  for (std::size_t i = 0; i < items.size(); ++i) {
    (items[i].holdout ? holdout_idx : train_idx).push_back(i);
  }
  if (train_idx.empty() || holdout_idx.empty()) {
    throw std::invalid_argument("train_world: both splits must be non-empty");
  }

  auto holdout_lwm = [&]() {
    std::vector<double> losses(holdout_idx.size(), 0.0);
    parallel_for_indexed(holdout_idx.size(), [&](std::size_t s) {
      Tape tape;
      const int loss = world_loss(tape, store, cfg, items[holdout_idx[s]], false);
      losses[s] = tape.value(loss).d[0];
    });
    double acc = 0.0;
    for (double l : losses) acc += l;
    return acc / static_cast<double>(losses.size());
  };

  WorldTrainResult result;
  for (int epoch = 0; epoch < run.sft_world_epochs; ++epoch) {
    Rng rng(mix_seed(run.seed, 0x301dULL, static_cast<std::uint64_t>(epoch)));
    std::vector<std::size_t> order = train_idx;
    shuffle_indices(order, rng);
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t at = 0; at < order.size();
         at += static_cast<std::size_t>(run.sft_batch_episodes)) {
      const std::size_t end =
          std::min(order.size(), at + static_cast<std::size_t>(run.sft_batch_episodes));
      const std::vector<std::size_t> pick(order.begin() + static_cast<std::ptrdiff_t>(at),
                                          order.begin() + static_cast<std::ptrdiff_t>(end));
      double mean_loss = 0.0;
      GradMap grads = batched_gradients(
          store, pick,
          [&](Tape& tape, std::size_t idx) {
            return world_loss(tape, store, cfg, items[idx], true);
          },
          &mean_loss);
      adam_step(store, grads, run.sft_lr, run.adam_beta1, run.adam_beta2, run.adam_eps);
      epoch_loss += mean_loss;
      batches += 1;
    }
    result.train_lwm_per_epoch.push_back(epoch_loss / static_cast<double>(batches));
    result.holdout_lwm_per_epoch.push_back(holdout_lwm());
    log_line(log, std::string("{\"stage\":\"world\",\"epoch\":") + std::to_string(epoch) +
                      ",\"split\":\"train\",\"l_wm\":" + num(result.train_lwm_per_epoch.back()) +
                      ",\"holdout_l_wm\":" + num(result.holdout_lwm_per_epoch.back()) + "}");
  }

  std::vector<SftBatchItem> holdout_items;
  for (std::size_t i : holdout_idx) holdout_items.push_back(items[i]);
  world_segment_errors(store, cfg, holdout_items, &result.holdout_segment_mse,
                       &result.persistence_segment_mse);
  return result;
}

ActionTrainResult train_action(ParameterStore& store, const ModelConfig& cfg,
                               const std::vector<SftBatchItem>& items,
                               const RunConfig& run, std::ostream* log) {
  std::vector<std::size_t> train_idx, holdout_idx;
  for (std::size_t i = 0; i < items.size(); ++i) {
    (items[i].holdout ? holdout_idx : train_idx).push_back(i);
  }
  if (train_idx.empty()) {
    throw std::invalid_argument("train_action: empty training split");
  }

  auto holdout_stats = [&](std::array<double, 4>* per_dim) {
    if (holdout_idx.empty()) {
      if (per_dim != nullptr) per_dim->fill(0.0);
      return 0.0;
    }
    std::vector<std::array<double, 4>> dims(holdout_idx.size(), {0, 0, 0, 0});
    std::vector<std::size_t> rows(holdout_idx.size(), 0);
    parallel_for_indexed(holdout_idx.size(), [&](std::size_t s) {
      const SftBatchItem& item = items[holdout_idx[s]];
      const int segments = static_cast<int>(item.expert_actions.rows) / cfg.k;
      for (int j = 0; j < segments; ++j) {
        const std::size_t f0 = 1 + static_cast<std::size_t>(j * cfg.k);
        Tensor seg(static_cast<std::size_t>(cfg.k), item.latents.cols);
        std::copy(
            item.latents.d.begin() + static_cast<std::ptrdiff_t>(f0 * item.latents.cols),
            item.latents.d.begin() +
                static_cast<std::ptrdiff_t>((f0 + static_cast<std::size_t>(cfg.k)) *
                                            item.latents.cols),
            seg.d.begin());
        LatentSegment zseg;
        zseg.frames = std::move(seg);
        zseg.real = true;
        const Tensor mean = decode_actions(store, cfg, zseg);
        for (int k = 0; k < cfg.k; ++k) {
          const std::size_t row = static_cast<std::size_t>(j * cfg.k + k);
          for (std::size_t c = 0; c < 4; ++c) {
            const double dv = mean.at(static_cast<std::size_t>(k), c) -
                              item.expert_actions.at(row, c);
            dims[s][c] += dv * dv;
          }
          rows[s] += 1;
        }
      }
    });
    std::array<double, 4> total{0, 0, 0, 0};
    std::size_t row_count = 0;
    for (std::size_t s = 0; s < dims.size(); ++s) {
      for (std::size_t c = 0; c < 4; ++c) total[c] += dims[s][c];
      row_count += rows[s];
    }
    double overall = 0.0;
    for (std::size_t c = 0; c < 4; ++c) {
      total[c] /= static_cast<double>(row_count);
      overall += total[c];
    }
    if (per_dim != nullptr) *per_dim = total;
    return overall / 4.0;
  };

  ActionTrainResult result;
  for (int epoch = 0; epoch < run.sft_action_epochs; ++epoch) {
    Rng rng(mix_seed(run.seed, 0xac70ULL, static_cast<std::uint64_t>(epoch)));
    std::vector<std::size_t> order = train_idx;
    shuffle_indices(order, rng);
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t at = 0; at < order.size();
         at += static_cast<std::size_t>(run.sft_batch_episodes)) {
      const std::size_t end =
          std::min(order.size(), at + static_cast<std::size_t>(run.sft_batch_episodes));
      const std::vector<std::size_t> pick(order.begin() + static_cast<std::ptrdiff_t>(at),
                                          order.begin() + static_cast<std::ptrdiff_t>(end));
      double mean_loss = 0.0;
      GradMap grads = batched_gradients(
          store, pick,
          [&](Tape& tape, std::size_t idx) {
            return action_loss(tape, store, cfg, items[idx], true);
          },
          &mean_loss);
      adam_step(store, grads, run.sft_lr, run.adam_beta1, run.adam_beta2, run.adam_eps);
      epoch_loss += mean_loss;
      batches += 1;
    }
    result.train_mse_per_epoch.push_back(epoch_loss / static_cast<double>(batches));
    result.holdout_mse_per_epoch.push_back(holdout_stats(nullptr));
    log_line(log, std::string("{\"stage\":\"action\",\"epoch\":") + std::to_string(epoch) +
                      ",\"split\":\"train\",\"mse\":" + num(result.train_mse_per_epoch.back()) +
                      ",\"holdout_mse\":" + num(result.holdout_mse_per_epoch.back()) + "}");
  }
  holdout_stats(&result.holdout_mse_per_dim);
  return result;
}

}  // namespace navwam
