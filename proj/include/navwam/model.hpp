#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "navwam/config.hpp"
#include "navwam/graph.hpp"
#include "navwam/rng.hpp"
#include "navwam/simworld.hpp"
#include "navwam/tensor.hpp"

namespace navwam {

struct ModelConfig {
  int d_obs = 24;
  int d_z = 16;
  int d_text = 32;
  int width = 64;
  int layers = 2;
  int heads = 4;
  int mlp_hidden = 128;
  int ae_hidden = 96;
  int ad_width = 32;
  int ad_heads = 2;
  int k = 4;
  int n_segments = 6;
  double a_max_xyz = 1.0;
  double a_max_yaw = 0.5;

  int horizon_frames() const { return 1 + k * n_segments; }

  static ModelConfig from_config(const RunConfig& c);
};

// K latent frames; real segments come only from the observation encoder.
struct LatentSegment {
  Tensor frames;  // [K, d_z]
  bool real = false;
};

void init_params(ParameterStore& store, const ModelConfig& cfg, std::uint64_t seed);

// Marks the autoencoder frozen (done after pretraining).
void freeze_autoencoder(ParameterStore& store);
// Partial freezing for stage 2: depth d freezes the first d chunks of
// [backbone layer 0, backbone layer 1, ..., text embedder].
void apply_grpo_freezing(ParameterStore& store, const ModelConfig& cfg, int depth);

// --- graph builders (shared by training, rollouts and recomputation) ------

namespace modelg {

// Sum of position-offset token embeddings plus the family embedding -> [1, d_text].
int text_embedding(Tape& tape, const ParameterStore& store, const ModelConfig& cfg,
                   const Instruction& instr, bool trainable);

// Frame-wise MLP encoder/decoder over normalized observation features.
int encode_frame(Tape& tape, const ParameterStore& store, const ModelConfig& cfg,
                 int obs_row, bool trainable);
int decode_frame(Tape& tape, const ParameterStore& store, const ModelConfig& cfg,
                 int z_row, bool trainable);

// Causal transformer over [text, f_0, ..., f_{L-1}]; returns [L+1, d_z] where
// row p is the unit-variance Gaussian mean for frame p given the prefix.
int backbone_predictions(Tape& tape, const ParameterStore& store,
                         const ModelConfig& cfg, int text_node,
                         const std::vector<int>& frame_nodes, bool trainable);

// Temporal transformer + per-frame head over a latent segment; output is
// squashed into action bounds with a scaled tanh -> [K, 4].
int action_decoder(Tape& tape, const ParameterStore& store, const ModelConfig& cfg,
                   int segment_node, bool trainable);

// Diagonal-Gaussian log density of `actions` under (mean, policy.log_std),
// summed over K x 4 dimensions.
int log_prob_node(Tape& tape, const ParameterStore& store, const ModelConfig& cfg,
                  int mean_node, const Tensor& actions, bool trainable);

struct SegmentPolicyNodes {
  std::vector<int> predicted_frames;  // K nodes of [1, d_z]
  int segment = -1;                   // [K, d_z]
  int mean = -1;                      // [K, 4]
};

// Autoregressive within-segment prediction from a fixed latent context,
// chained through the action decoder. CapacityError on context overflow.
SegmentPolicyNodes build_segment_policy(Tape& tape, const ParameterStore& store,
                                        const ModelConfig& cfg,
                                        const Instruction& instr,
                                        const std::vector<Tensor>& context,
                                        bool trainable);

}  // namespace modelg

// --- value-level operations -----------------------------------------------

Tensor encode_text(const ParameterStore& store, const ModelConfig& cfg,
                   const Instruction& instr);

// Encodes K raw observations into a real latent segment (frame-wise,
// pre-normalized internally). ShapeError on a wrong segment length.
LatentSegment encode_obs(const ParameterStore& store, const ModelConfig& cfg,
                         const SimParams& sim, const std::vector<Observation>& segment);
Tensor encode_frames(const ParameterStore& store, const ModelConfig& cfg,
                     const SimParams& sim, const std::vector<Observation>& frames);

// Decodes latent frames back to normalized observation features [n, d_obs].
Tensor decode_obs(const ParameterStore& store, const ModelConfig& cfg,
                  const LatentSegment& segment);

// Predicted next segment (mean of p_theta) from instruction + latent context.
LatentSegment predict_next_segment(const ParameterStore& store, const ModelConfig& cfg,
                                   const Instruction& instr,
                                   const std::vector<Tensor>& context);

Tensor decode_actions(const ParameterStore& store, const ModelConfig& cfg,
                      const LatentSegment& z_hat);

struct PolicySample {
  Tensor actions;  // [K, 4] pre-clamp
  Tensor mean;
  double log_prob = 0.0;
};

// Diagonal-Gaussian sample; the density is evaluated at the pre-clamp values
// (clamping belongs to the environment interface).
PolicySample sample_actions(const ParameterStore& store, const ModelConfig& cfg,
                            const Tensor& mean, Rng& rng);
double action_log_prob(const ParameterStore& store, const ModelConfig& cfg,
                       const Tensor& mean, const Tensor& actions);
double segment_log_prob(const ParameterStore& store, const ModelConfig& cfg,
                        const Instruction& instr, const std::vector<Tensor>& context,
                        const Tensor& actions);

// --- checkpoints -----------------------------------------------------------

void save_checkpoint(const std::string& path, const ParameterStore& store,
                     std::uint64_t config_hash);
// Hash/version mismatch raises IncompatibleCheckpoint unless force.
ParameterStore load_checkpoint(const std::string& path, std::uint64_t expected_hash,
                               bool force = false, std::uint64_t* stored_hash = nullptr);
std::string checkpoint_id(std::uint64_t config_hash, std::uint64_t step);

// --- closed/open-loop rollouts ----------------------------------------------

enum class RolloutMode { ClosedLoop, OpenLoop };
const char* rollout_mode_name(RolloutMode m);
RolloutMode rollout_mode_from_name(const std::string& name);

struct SegmentTrace {
  Tensor sampled_actions;  // [K, 4] pre-clamp (the mean when not sampling)
  Tensor mean;
  double logp_behavior = 0.0;
  Tensor predicted_frames;  // [K, d_z]
  Tensor real_frames;       // [K, d_z]
  std::vector<Observation> observations;
  std::vector<Pose> poses;
  double divergence = 0.0;   // ||pred - real||_F
  double decode_rmse = 0.0;  // decoded predicted frames vs normalized real obs
};

struct RolloutResult {
  std::vector<SegmentTrace> segments;
  Trajectory poses;  // 1 + n*K
  Pose terminal;
  bool success = false;
  std::vector<Tensor> context_frames;  // frames as fed to the backbone
  std::vector<bool> context_real;
};

// One full episode rollout. closed_loop re-encodes executed observations into
// the context; open_loop keeps the predicted frames. Context frames are
// detached values either way (history is data for the policy gradient).
// forced_actions replaces sampling for audit replays.
RolloutResult roll_episode(const ParameterStore& store, const ModelConfig& cfg,
                           const SimParams& sim, const Demo& episode,
                           RolloutMode mode, bool sample, Rng* rng,
                           const std::vector<Tensor>* forced_actions = nullptr);

}  // namespace navwam
