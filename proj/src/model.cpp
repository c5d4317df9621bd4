#include "navwam/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "navwam/errors.hpp"

namespace navwam {

namespace {

constexpr char kMagic[4] = {'N', 'V', 'W', 'M'};
constexpr std::uint32_t kCheckpointVersion = 1;

Tensor init_weight(Rng& rng, std::size_t rows, std::size_t cols, double scale) {
  Tensor t(rows, cols);
  for (double& v : t.d) v = scale * rng.normal();
  return t;
}

void add_linear(ParameterStore& store, Rng& rng, const std::string& prefix,
                std::size_t in, std::size_t out) {
  store.params[prefix + ".w"] = init_weight(rng, in, out, 1.0 / std::sqrt(static_cast<double>(in)));
  store.params[prefix + ".b"] = Tensor(1, out);
}

void add_layer_norm(ParameterStore& store, const std::string& prefix, std::size_t n) {
  store.params[prefix + ".g"] = Tensor(1, n, 1.0);
  store.params[prefix + ".b"] = Tensor(1, n);
}

void add_attention_block(ParameterStore& store, Rng& rng, const std::string& prefix,
                         std::size_t width, std::size_t hidden) {
  add_layer_norm(store, prefix + ".ln1", width);
  add_linear(store, rng, prefix + ".attn.q", width, width);
  add_linear(store, rng, prefix + ".attn.k", width, width);
  add_linear(store, rng, prefix + ".attn.v", width, width);
  add_linear(store, rng, prefix + ".attn.o", width, width);
  add_layer_norm(store, prefix + ".ln2", width);
  add_linear(store, rng, prefix + ".mlp.1", width, hidden);
  add_linear(store, rng, prefix + ".mlp.2", hidden, width);
}

int linear(Tape& tape, const ParameterStore& store, const std::string& prefix,
           int x, bool trainable) {
  const int w = tape.parameter(store, prefix + ".w", trainable);
  const int b = tape.parameter(store, prefix + ".b", trainable);
  return tape.add(tape.matmul(x, w), b);
}

// One pre-norm transformer block; mask < 0 disables masking.
int attention_block(Tape& tape, const ParameterStore& store, const std::string& prefix,
                    int x, int heads, int mask, bool trainable) {
  const std::size_t rows = tape.value(x).rows;
  const std::size_t width = tape.value(x).cols;
  const std::size_t dh = width / static_cast<std::size_t>(heads);
  const int ln1 = tape.layer_norm(x, tape.parameter(store, prefix + ".ln1.g", trainable),
                                  tape.parameter(store, prefix + ".ln1.b", trainable));
  const int q = linear(tape, store, prefix + ".attn.q", ln1, trainable);
  const int k = linear(tape, store, prefix + ".attn.k", ln1, trainable);
  const int v = linear(tape, store, prefix + ".attn.v", ln1, trainable);
  std::vector<int> ctx_heads;
  for (int h = 0; h < heads; ++h) {
    const std::size_t c0 = static_cast<std::size_t>(h) * dh;
    const int qh = tape.slice(q, 0, rows, c0, c0 + dh);
    const int kh = tape.slice(k, 0, rows, c0, c0 + dh);
    const int vh = tape.slice(v, 0, rows, c0, c0 + dh);
    int scores = tape.scale(tape.matmul_nt(qh, kh), 1.0 / std::sqrt(static_cast<double>(dh)));
    if (mask >= 0) scores = tape.add(scores, mask);
    const int attn = tape.softmax(scores);
    ctx_heads.push_back(tape.matmul(attn, vh));
  }
  const int ctx = ctx_heads.size() == 1 ? ctx_heads[0] : tape.concat_cols(ctx_heads);
  const int o = linear(tape, store, prefix + ".attn.o", ctx, trainable);
  int out = tape.add(x, o);
  const int ln2 = tape.layer_norm(out, tape.parameter(store, prefix + ".ln2.g", trainable),
                                  tape.parameter(store, prefix + ".ln2.b", trainable));
  int m = linear(tape, store, prefix + ".mlp.1", ln2, trainable);
  m = tape.gelu(m);
  m = linear(tape, store, prefix + ".mlp.2", m, trainable);
  return tape.add(out, m);
}

Tensor causal_mask(std::size_t n) {
  Tensor m(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) m.at(i, j) = -1e9;
  }
  return m;
}

Tensor bounds_row(const ModelConfig& cfg) {
  return Tensor::row({cfg.a_max_xyz, cfg.a_max_xyz, cfg.a_max_xyz, cfg.a_max_yaw});
}

}  // namespace

ModelConfig ModelConfig::from_config(const RunConfig& c) {
  ModelConfig m;
  m.d_obs = c.d_obs();
  m.d_z = c.model_d_z;
  m.d_text = c.model_d_text;
  m.width = c.model_width;
  m.layers = c.model_layers;
  m.heads = c.model_heads;
  m.mlp_hidden = c.model_mlp_hidden;
  m.ae_hidden = c.model_ae_hidden;
  m.ad_width = c.model_ad_width;
  m.ad_heads = c.model_ad_heads;
  m.k = c.sim_k;
  m.n_segments = c.sim_n_segments;
  m.a_max_xyz = c.sim_a_max_xyz;
  m.a_max_yaw = c.sim_a_max_yaw;
  return m;
}

void init_params(ParameterStore& store, const ModelConfig& cfg, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x1417ULL));
  const std::size_t w = static_cast<std::size_t>(cfg.width);
  const std::size_t dz = static_cast<std::size_t>(cfg.d_z);
  const std::size_t dt = static_cast<std::size_t>(cfg.d_text);

  add_linear(store, rng, "ae.enc.1", cfg.d_obs, cfg.ae_hidden);
  add_linear(store, rng, "ae.enc.2", cfg.ae_hidden, dz);
  add_linear(store, rng, "ae.dec.1", dz, cfg.ae_hidden);
  add_linear(store, rng, "ae.dec.2", cfg.ae_hidden, cfg.d_obs);

  store.params["text.tok"] =
      init_weight(rng, kInstructionTokens * kVocabSize, dt, 0.1);
  store.params["text.fam"] = init_weight(rng, kNumFamilies, dt, 0.1);

  add_linear(store, rng, "bb.in_text", dt, w);
  add_linear(store, rng, "bb.in_z", dz, w);
  store.params["bb.pos"] =
      init_weight(rng, static_cast<std::size_t>(cfg.horizon_frames() + 1), w, 0.02);
  for (int l = 0; l < cfg.layers; ++l) {
    add_attention_block(store, rng, "bb.l" + std::to_string(l), w,
                        static_cast<std::size_t>(cfg.mlp_hidden));
  }
  add_layer_norm(store, "bb.lnf", w);
  add_linear(store, rng, "bb.head", w, dz);

  const std::size_t aw = static_cast<std::size_t>(cfg.ad_width);
  add_linear(store, rng, "ad.in", dz, aw);
  store.params["ad.pos"] = init_weight(rng, static_cast<std::size_t>(cfg.k), aw, 0.02);
  add_attention_block(store, rng, "ad.blk", aw, 2 * aw);
  add_layer_norm(store, "ad.lnf", aw);
  add_linear(store, rng, "ad.head", aw, 4);

  Tensor log_std(1, 4);
  log_std.d[0] = log_std.d[1] = log_std.d[2] = std::log(0.2 * cfg.a_max_xyz);
  log_std.d[3] = std::log(0.2 * cfg.a_max_yaw);
  store.params["policy.log_std"] = log_std;
}

void freeze_autoencoder(ParameterStore& store) {
  for (const auto& [name, t] : store.params) {
    if (name.rfind("ae.", 0) == 0) store.frozen.insert(name);
  }
}

void apply_grpo_freezing(ParameterStore& store, const ModelConfig& cfg, int depth) {
  std::vector<std::string> chunk_prefixes;
  for (int l = 0; l < cfg.layers; ++l) {
    chunk_prefixes.push_back("bb.l" + std::to_string(l) + ".");
  }
  chunk_prefixes.push_back("text.");
  for (int d = 0; d < depth && d < static_cast<int>(chunk_prefixes.size()); ++d) {
    for (const auto& [name, t] : store.params) {
      if (name.rfind(chunk_prefixes[static_cast<std::size_t>(d)], 0) == 0) {
        store.frozen.insert(name);
      }
    }
  }
}

namespace modelg {

int text_embedding(Tape& tape, const ParameterStore& store, const ModelConfig& cfg,
                   const Instruction& instr, bool trainable) {
  if (static_cast<int>(instr.tokens.size()) != kInstructionTokens) {
    throw VocabError("instruction must carry exactly 9 tokens");
  }
  std::vector<int> ids(instr.tokens.size());
  for (std::size_t p = 0; p < instr.tokens.size(); ++p) {
    const int tok = instr.tokens[p];
    if (tok < 0 || tok >= kVocabSize) throw VocabError("token outside vocabulary");
    ids[p] = static_cast<int>(p) * kVocabSize + tok;
  }
  const int table = tape.parameter(store, "text.tok", trainable);
  const int rows = tape.embed(table, ids);
  const int ones = tape.constant(Tensor(1, ids.size(), 1.0));
  const int summed = tape.matmul(ones, rows);  // [1, d_text]
  const int fam_table = tape.parameter(store, "text.fam", trainable);
  const int fam = tape.embed(fam_table, {static_cast<int>(instr.task_family)});
  (void)cfg;
  return tape.add(summed, fam);
}

int encode_frame(Tape& tape, const ParameterStore& store, const ModelConfig& cfg,
                 int obs_row, bool trainable) {
  if (tape.value(obs_row).cols != static_cast<std::size_t>(cfg.d_obs)) {
    throw ShapeError("encode_frame: observation width mismatch");
  }
  int h = linear(tape, store, "ae.enc.1", obs_row, trainable);
  h = tape.gelu(h);
  return linear(tape, store, "ae.enc.2", h, trainable);
}

int decode_frame(Tape& tape, const ParameterStore& store, const ModelConfig& cfg,
                 int z_row, bool trainable) {
  if (tape.value(z_row).cols != static_cast<std::size_t>(cfg.d_z)) {
    throw ShapeError("decode_frame: latent width mismatch");
  }
  int h = linear(tape, store, "ae.dec.1", z_row, trainable);
  h = tape.gelu(h);
  return linear(tape, store, "ae.dec.2", h, trainable);
}

int backbone_predictions(Tape& tape, const ParameterStore& store,
                         const ModelConfig& cfg, int text_node,
                         const std::vector<int>& frame_nodes, bool trainable) {
  if (frame_nodes.empty()) {
    throw std::invalid_argument("backbone needs at least one latent frame");
  }
  const int text_proj = linear(tape, store, "bb.in_text", text_node, trainable);
  const int zcat = frame_nodes.size() == 1 ? frame_nodes[0]
                                           : tape.concat_rows(frame_nodes);
  if (static_cast<int>(tape.value(zcat).rows) > cfg.horizon_frames()) {
    throw CapacityError("backbone context overflow");
  }
  const int z_proj = linear(tape, store, "bb.in_z", zcat, trainable);
  int x = tape.concat_rows({text_proj, z_proj});
  const std::size_t seq = tape.value(x).rows;
  std::vector<int> pos_idx(seq);
  for (std::size_t i = 0; i < seq; ++i) pos_idx[i] = static_cast<int>(i);
  x = tape.add(x, tape.embed(tape.parameter(store, "bb.pos", trainable), pos_idx));
  const int mask = tape.constant(causal_mask(seq));
  for (int l = 0; l < cfg.layers; ++l) {
    x = attention_block(tape, store, "bb.l" + std::to_string(l), x, cfg.heads, mask,
                        trainable);
  }
  x = tape.layer_norm(x, tape.parameter(store, "bb.lnf.g", trainable),
                      tape.parameter(store, "bb.lnf.b", trainable));
  const int delta = linear(tape, store, "bb.head", x, trainable);
  // Residual prediction: row p outputs f_{p-1} + delta, so a zero head equals
  // frame persistence. The text row (p = 0) has a zero base.
  const int base = tape.concat_rows(
      {tape.constant(Tensor(1, static_cast<std::size_t>(cfg.d_z))), zcat});
  return tape.add(delta, base);
}

int action_decoder(Tape& tape, const ParameterStore& store, const ModelConfig& cfg,
                   int segment_node, bool trainable) {
  const Tensor& seg = tape.value(segment_node);
  if (seg.rows != static_cast<std::size_t>(cfg.k) ||
      seg.cols != static_cast<std::size_t>(cfg.d_z)) {
    throw ShapeError("action_decoder: segment must be K x d_z");
  }
  int x = linear(tape, store, "ad.in", segment_node, trainable);
  std::vector<int> pos_idx(static_cast<std::size_t>(cfg.k));
  for (int i = 0; i < cfg.k; ++i) pos_idx[static_cast<std::size_t>(i)] = i;
  x = tape.add(x, tape.embed(tape.parameter(store, "ad.pos", trainable), pos_idx));
  x = attention_block(tape, store, "ad.blk", x, cfg.ad_heads, -1, trainable);
  x = tape.layer_norm(x, tape.parameter(store, "ad.lnf.g", trainable),
                      tape.parameter(store, "ad.lnf.b", trainable));
  const int raw = linear(tape, store, "ad.head", x, trainable);
  const int squashed = tape.tanh_op(raw);
  return tape.mul(squashed, tape.constant(bounds_row(cfg)));
}

int log_prob_node(Tape& tape, const ParameterStore& store, const ModelConfig& cfg,
                  int mean_node, const Tensor& actions, bool trainable) {
  (void)cfg;
  const int log_std = tape.parameter(store, "policy.log_std", trainable);
  const int value = tape.constant(actions);
  const int nll = tape.gaussian_nll(mean_node, log_std, value);
  return tape.scale(nll, -1.0);
}

SegmentPolicyNodes build_segment_policy(Tape& tape, const ParameterStore& store,
                                        const ModelConfig& cfg,
                                        const Instruction& instr,
                                        const std::vector<Tensor>& context,
                                        bool trainable) {
  if (context.empty()) {
    throw std::invalid_argument("segment policy needs a non-empty context");
  }
  if (static_cast<int>(context.size()) + cfg.k > cfg.horizon_frames() + 1) {
    throw CapacityError("segment policy: context overflow");
  }
  const int text = text_embedding(tape, store, cfg, instr, trainable);
  std::vector<int> frames;
  frames.reserve(context.size() + static_cast<std::size_t>(cfg.k));
  for (const Tensor& c : context) frames.push_back(tape.constant(c));
  SegmentPolicyNodes out;
  for (int k = 0; k < cfg.k; ++k) {
    const int preds = backbone_predictions(tape, store, cfg, text, frames, trainable);
    const std::size_t rows = tape.value(preds).rows;
    const std::size_t cols = tape.value(preds).cols;
    const int next = tape.slice(preds, rows - 1, rows, 0, cols);
    out.predicted_frames.push_back(next);
    frames.push_back(next);
  }
  out.segment = tape.concat_rows(out.predicted_frames);
  out.mean = action_decoder(tape, store, cfg, out.segment, trainable);
  return out;
}

}  // namespace modelg

Tensor encode_text(const ParameterStore& store, const ModelConfig& cfg,
                   const Instruction& instr) {
  Tape tape;
  return tape.value(modelg::text_embedding(tape, store, cfg, instr, false));
}

Tensor encode_frames(const ParameterStore& store, const ModelConfig& cfg,
                     const SimParams& sim, const std::vector<Observation>& frames) {
  if (frames.empty()) throw ShapeError("encode_frames: empty segment");
  Tape tape;
  Tensor input(frames.size(), static_cast<std::size_t>(cfg.d_obs));
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const std::vector<double> norm = normalize_observation(frames[i], sim);
    if (norm.size() != static_cast<std::size_t>(cfg.d_obs)) {
      throw ShapeError("encode_frames: observation width mismatch");
    }
    std::copy(norm.begin(), norm.end(), input.d.begin() + i * input.cols);
  }
  const int obs = tape.constant(std::move(input));
  return tape.value(modelg::encode_frame(tape, store, cfg, obs, false));
}

LatentSegment encode_obs(const ParameterStore& store, const ModelConfig& cfg,
                         const SimParams& sim, const std::vector<Observation>& segment) {
  if (static_cast<int>(segment.size()) != cfg.k) {
    throw ShapeError("encode_obs: segment must have K frames");
  }
  LatentSegment out;
  out.frames = encode_frames(store, cfg, sim, segment);
  out.real = true;
  return out;
}

Tensor decode_obs(const ParameterStore& store, const ModelConfig& cfg,
                  const LatentSegment& segment) {
  if (segment.frames.cols != static_cast<std::size_t>(cfg.d_z)) {
    throw ShapeError("decode_obs: latent width mismatch");
  }
  Tape tape;
  const int z = tape.constant(segment.frames);
  return tape.value(modelg::decode_frame(tape, store, cfg, z, false));
}

LatentSegment predict_next_segment(const ParameterStore& store, const ModelConfig& cfg,
                                   const Instruction& instr,
                                   const std::vector<Tensor>& context) {
  Tape tape;
  const auto nodes = modelg::build_segment_policy(tape, store, cfg, instr, context, false);
  LatentSegment out;
  out.frames = tape.value(nodes.segment);
  out.real = false;
  return out;
}

Tensor decode_actions(const ParameterStore& store, const ModelConfig& cfg,
                      const LatentSegment& z_hat) {
  Tape tape;
  const int z = tape.constant(z_hat.frames);
  return tape.value(modelg::action_decoder(tape, store, cfg, z, false));
}

PolicySample sample_actions(const ParameterStore& store, const ModelConfig& cfg,
                            const Tensor& mean, Rng& rng) {
  const Tensor& log_std = store.params.at("policy.log_std");
  PolicySample out;
  out.mean = mean;
  out.actions = mean;
  for (std::size_t i = 0; i < mean.rows; ++i) {
    for (std::size_t j = 0; j < mean.cols; ++j) {
      out.actions.at(i, j) += std::exp(log_std.d[j]) * rng.normal();
    }
  }
  out.log_prob = action_log_prob(store, cfg, mean, out.actions);
  return out;
}

double action_log_prob(const ParameterStore& store, const ModelConfig& cfg,
                       const Tensor& mean, const Tensor& actions) {
  Tape tape;
  const int m = tape.constant(mean);
  return tape.value(modelg::log_prob_node(tape, store, cfg, m, actions, false)).d[0];
}

double segment_log_prob(const ParameterStore& store, const ModelConfig& cfg,
                        const Instruction& instr, const std::vector<Tensor>& context,
                        const Tensor& actions) {
  Tape tape;
  const auto nodes = modelg::build_segment_policy(tape, store, cfg, instr, context, false);
  return tape.value(modelg::log_prob_node(tape, store, cfg, nodes.mean, actions, false)).d[0];
}

// --- checkpoints -----------------------------------------------------------

namespace {

template <typename T>
void write_pod(std::ofstream& f, const T& v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& f) {
  T v{};
  f.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!f) throw IncompatibleCheckpoint("checkpoint truncated");
  return v;
}

void write_string(std::ofstream& f, const std::string& s) {
  write_pod<std::uint32_t>(f, static_cast<std::uint32_t>(s.size()));
  f.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::ifstream& f) {
  const auto len = read_pod<std::uint32_t>(f);
  std::string s(len, '\0');
  f.read(s.data(), len);
  if (!f) throw IncompatibleCheckpoint("checkpoint truncated");
  return s;
}

}  // namespace

void save_checkpoint(const std::string& path, const ParameterStore& store,
                     std::uint64_t config_hash) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open checkpoint for writing: " + path);
  f.write(kMagic, 4);
  write_pod<std::uint32_t>(f, kCheckpointVersion);
  write_pod<std::uint64_t>(f, config_hash);
  write_pod<std::uint64_t>(f, store.step);
  write_pod<std::uint32_t>(f, static_cast<std::uint32_t>(store.params.size()));
  for (const auto& [name, t] : store.params) {
    write_string(f, name);
    write_pod<std::uint64_t>(f, t.rows);
    write_pod<std::uint64_t>(f, t.cols);
    f.write(reinterpret_cast<const char*>(t.d.data()),
            static_cast<std::streamsize>(t.d.size() * sizeof(double)));
  }
  write_pod<std::uint32_t>(f, static_cast<std::uint32_t>(store.frozen.size()));
  for (const std::string& name : store.frozen) write_string(f, name);
}

ParameterStore load_checkpoint(const std::string& path, std::uint64_t expected_hash,
                               bool force, std::uint64_t* stored_hash) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw MissingArtifact("cannot open checkpoint: " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kMagic, 4) != 0) {
    throw IncompatibleCheckpoint("bad checkpoint magic: " + path);
  }
  const auto version = read_pod<std::uint32_t>(f);
  if (version != kCheckpointVersion) {
    throw IncompatibleCheckpoint("unsupported checkpoint version");
  }
  const auto hash = read_pod<std::uint64_t>(f);
  if (stored_hash != nullptr) *stored_hash = hash;
  if (!force && expected_hash != 0 && hash != expected_hash) {
    throw IncompatibleCheckpoint("checkpoint config hash mismatch (use force to override)");
  }
  ParameterStore store;
  store.step = read_pod<std::uint64_t>(f);
  const auto count = read_pod<std::uint32_t>(f);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = read_string(f);
    const auto rows = read_pod<std::uint64_t>(f);
    const auto cols = read_pod<std::uint64_t>(f);
    Tensor t(rows, cols);
    f.read(reinterpret_cast<char*>(t.d.data()),
           static_cast<std::streamsize>(t.d.size() * sizeof(double)));
    if (!f) throw IncompatibleCheckpoint("checkpoint truncated in tensor " + name);
    store.params[name] = std::move(t);
  }
  const auto frozen_count = read_pod<std::uint32_t>(f);
  for (std::uint32_t i = 0; i < frozen_count; ++i) {
    store.frozen.insert(read_string(f));
  }
  return store;
}

std::string checkpoint_id(std::uint64_t config_hash, std::uint64_t step) {
  return hash_hex(config_hash) + ":" + std::to_string(step);
}

// --- rollouts ---------------------------------------------------------------

const char* rollout_mode_name(RolloutMode m) {
  return m == RolloutMode::ClosedLoop ? "closed_loop" : "open_loop";
}

RolloutMode rollout_mode_from_name(const std::string& name) {
  if (name == "closed_loop") return RolloutMode::ClosedLoop;
  if (name == "open_loop") return RolloutMode::OpenLoop;
  throw std::invalid_argument("unknown rollout mode: " + name);
}

RolloutResult roll_episode(const ParameterStore& store, const ModelConfig& cfg,
                           const SimParams& sim, const Demo& episode,
                           RolloutMode mode, bool sample, Rng* rng,
                           const std::vector<Tensor>* forced_actions) {
  Environment env(episode.spec, sim);
  RolloutResult out;
  out.poses.push_back(episode.spec.start);

  const Observation o0 = env.observe();
  out.context_frames.push_back(encode_frames(store, cfg, sim, {o0}));
  out.context_real.push_back(true);

  for (int j = 1; j <= cfg.n_segments; ++j) {
    Tape tape;
    const auto nodes = modelg::build_segment_policy(
        tape, store, cfg, episode.spec.instruction, out.context_frames, false);
    SegmentTrace seg;
    seg.mean = tape.value(nodes.mean);
    seg.predicted_frames = tape.value(nodes.segment);
    if (forced_actions != nullptr) {
      seg.sampled_actions = forced_actions->at(static_cast<std::size_t>(j - 1));
    } else if (sample) {
      const Tensor& log_std = store.params.at("policy.log_std");
      seg.sampled_actions = seg.mean;
      for (std::size_t i = 0; i < seg.mean.rows; ++i) {
        for (std::size_t c = 0; c < seg.mean.cols; ++c) {
          seg.sampled_actions.at(i, c) += std::exp(log_std.d[c]) * rng->normal();
        }
      }
    } else {
      seg.sampled_actions = seg.mean;
    }
    seg.logp_behavior =
        tape.value(modelg::log_prob_node(tape, store, cfg, nodes.mean,
                                         seg.sampled_actions, false))
            .d[0];

    for (int k = 0; k < cfg.k; ++k) {
      const Action a{seg.sampled_actions.at(static_cast<std::size_t>(k), 0),
                     seg.sampled_actions.at(static_cast<std::size_t>(k), 1),
                     seg.sampled_actions.at(static_cast<std::size_t>(k), 2),
                     seg.sampled_actions.at(static_cast<std::size_t>(k), 3)};
      const auto step = env.step(a);
      seg.observations.push_back(step.obs);
      seg.poses.push_back(step.pose);
      out.poses.push_back(step.pose);
    }

    seg.real_frames = encode_frames(store, cfg, sim, seg.observations);
    double sq = 0.0;
    for (std::size_t i = 0; i < seg.real_frames.size(); ++i) {
      const double dv = seg.predicted_frames.d[i] - seg.real_frames.d[i];
      sq += dv * dv;
    }
    seg.divergence = std::sqrt(sq);

    {
      LatentSegment pred;
      pred.frames = seg.predicted_frames;
      const Tensor decoded = decode_obs(store, cfg, pred);
      double err = 0.0;
      for (int k = 0; k < cfg.k; ++k) {
        const std::vector<double> norm =
            normalize_observation(seg.observations[static_cast<std::size_t>(k)], sim);
        for (std::size_t c = 0; c < norm.size(); ++c) {
          const double dv = decoded.at(static_cast<std::size_t>(k), c) - norm[c];
          err += dv * dv;
        }
      }
      seg.decode_rmse = std::sqrt(err / static_cast<double>(cfg.k * cfg.d_obs));
    }

    const Tensor& next = mode == RolloutMode::ClosedLoop ? seg.real_frames
                                                         : seg.predicted_frames;
    for (int k = 0; k < cfg.k; ++k) {
      Tensor rowt(1, next.cols);
      for (std::size_t c = 0; c < next.cols; ++c) {
        rowt.d[c] = next.at(static_cast<std::size_t>(k), c);
      }
      out.context_frames.push_back(std::move(rowt));
      out.context_real.push_back(mode == RolloutMode::ClosedLoop);
    }
    out.segments.push_back(std::move(seg));
  }

  out.terminal = env.pose();
  out.success = env.succeeded();
  return out;
}

}  // namespace navwam
