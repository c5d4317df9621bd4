#pragma once

#include <array>
#include <iosfwd>
#include <vector>

#include "navwam/model.hpp"
#include "navwam/simworld.hpp"

namespace navwam {

// One demonstration prepared for stage-1 training: instruction plus the full
// real-latent frame stack and the expert action segments.
struct SftBatchItem {
  Instruction instruction;
  Tensor latents;  // [1 + n*K, d_z], all real (teacher forcing)
  bool latents_real = true;
  Tensor expert_actions;  // [n*K, 4]
  std::uint64_t seed = 0;
  bool holdout = false;
};

// 90/10 split, fixed by episode seed.
bool is_holdout_seed(std::uint64_t seed);

// Re-renders observations from stored poses and encodes them with the frozen
// encoder.
std::vector<SftBatchItem> prepare_sft_batches(const ParameterStore& store,
                                              const ModelConfig& cfg,
                                              const SimParams& sim,
                                              const std::vector<Demo>& demos);

struct AePretrainResult {
  bool reached_target = false;
  double final_holdout_rmse = 0.0;
  int epochs_run = 0;
  std::vector<double> train_loss_per_epoch;
  std::vector<double> holdout_rmse_per_epoch;
};

// Trains the observation autoencoder on expert and random-walk frames, then
// freezes it. A miss of the RMSE target is reported, not thrown.
AePretrainResult pretrain_autoencoder(ParameterStore& store, const ModelConfig& cfg,
                                      const SimParams& sim,
                                      const std::vector<Demo>& demos,
                                      const RunConfig& run, std::ostream* log);

struct WorldTrainResult {
  std::vector<double> train_lwm_per_epoch;
  std::vector<double> holdout_lwm_per_epoch;
  double holdout_segment_mse = 0.0;     // one-segment-ahead, autoregressive
  double persistence_segment_mse = 0.0;  // repeat-last-frame baseline
};

WorldTrainResult train_world(ParameterStore& store, const ModelConfig& cfg,
                             const std::vector<SftBatchItem>& items,
                             const RunConfig& run, std::ostream* log);

struct ActionTrainResult {
  std::vector<double> train_mse_per_epoch;
  std::vector<double> holdout_mse_per_epoch;
  std::array<double, 4> holdout_mse_per_dim{0, 0, 0, 0};
};

ActionTrainResult train_action(ParameterStore& store, const ModelConfig& cfg,
                               const std::vector<SftBatchItem>& items,
                               const RunConfig& run, std::ostream* log);

// Mean squared one-segment-ahead latent error over holdout items, for the
// model and for the persistence baseline.
void world_segment_errors(const ParameterStore& store, const ModelConfig& cfg,
                          const std::vector<SftBatchItem>& items, double* model_mse,
                          double* persistence_mse);

}  // namespace navwam
