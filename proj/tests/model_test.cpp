#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "navwam/errors.hpp"
#include "navwam/model.hpp"
#include "navwam/rng.hpp"

using namespace navwam;

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

struct Fixture {
  RunConfig run;
  SimParams sim;
  ModelConfig cfg;
  ParameterStore store;
  Instruction instr;

  Fixture() {
    sim = SimParams::from_config(run);
    cfg = ModelConfig::from_config(run);
    init_params(store, cfg, 42);
    Primitive p;
    p.family = TaskFamily::Approach;
    p.landmark_id = 1;
    p.magnitude_bucket = 4;
    p.magnitude = magnitude_from_bucket(p.family, 4);
    instr.task_family = p.family;
    instr.primitives = {p};
    instr.tokens = tokens_from_primitives(instr.primitives);
  }

  std::vector<Tensor> context(Rng& rng, int frames) const {
    std::vector<Tensor> ctx;
    for (int i = 0; i < frames; ++i) {
      Tensor t(1, static_cast<std::size_t>(cfg.d_z));
      for (double& v : t.d) v = 0.3 * rng.normal();
      ctx.push_back(std::move(t));
    }
    return ctx;
  }
};

}  // namespace

TEST_CASE("encode_text determinism and vocabulary errors") {
  Fixture fx;
  const Tensor a = encode_text(fx.store, fx.cfg, fx.instr);
  const Tensor b = encode_text(fx.store, fx.cfg, fx.instr);
  CHECK(a.cols == static_cast<std::size_t>(fx.cfg.d_text));
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.d[i] == b.d[i]);

  // zeroed tables give the zero vector
  ParameterStore zeroed = fx.store;
  zeroed.params["text.tok"] = Tensor(zeroed.params["text.tok"].rows,
                                     zeroed.params["text.tok"].cols);
  zeroed.params["text.fam"] = Tensor(zeroed.params["text.fam"].rows,
                                     zeroed.params["text.fam"].cols);
  const Tensor z = encode_text(zeroed, fx.cfg, fx.instr);
  for (double v : z.d) CHECK(v == 0.0);

  Instruction bad = fx.instr;
  bad.tokens[2] = kVocabSize + 5;
  CHECK_THROWS_AS(encode_text(fx.store, fx.cfg, bad), VocabError);
}

TEST_CASE("encode_obs / decode_obs shapes and flags") {
  Fixture fx;
  const Scene scene = generate_scene(5, fx.sim);
  std::vector<Observation> seg;
  for (int k = 0; k < fx.cfg.k; ++k) {
    seg.push_back(render_observation(scene, Pose{0, 0, 2.0 + 0.1 * k, 0}, fx.sim));
  }
  const LatentSegment z = encode_obs(fx.store, fx.cfg, fx.sim, seg);
  CHECK(z.real);
  CHECK(z.frames.rows == static_cast<std::size_t>(fx.cfg.k));
  CHECK(z.frames.cols == static_cast<std::size_t>(fx.cfg.d_z));

  // identical frames encode identically (frame-wise map)
  std::vector<Observation> same(static_cast<std::size_t>(fx.cfg.k), seg[0]);
  const LatentSegment zs = encode_obs(fx.store, fx.cfg, fx.sim, same);
  for (int k = 1; k < fx.cfg.k; ++k) {
    for (std::size_t c = 0; c < zs.frames.cols; ++c) {
      CHECK(zs.frames.at(static_cast<std::size_t>(k), c) == zs.frames.at(0, c));
    }
  }

  // wrong segment length rejected
  seg.pop_back();
  CHECK_THROWS_AS(encode_obs(fx.store, fx.cfg, fx.sim, seg), ShapeError);

  const Tensor recon = decode_obs(fx.store, fx.cfg, z);
  CHECK(recon.rows == static_cast<std::size_t>(fx.cfg.k));
  CHECK(recon.cols == static_cast<std::size_t>(fx.cfg.d_obs));

  // zero latent decodes to the bias pathway output, same for every frame
  LatentSegment zero;
  zero.frames = Tensor(static_cast<std::size_t>(fx.cfg.k),
                       static_cast<std::size_t>(fx.cfg.d_z));
  const Tensor dz = decode_obs(fx.store, fx.cfg, zero);
  for (int k = 1; k < fx.cfg.k; ++k) {
    for (std::size_t c = 0; c < dz.cols; ++c) {
      CHECK(dz.at(static_cast<std::size_t>(k), c) == dz.at(0, c));
    }
  }
}

TEST_CASE("predict_next_segment shape, flag, capacity") {
  Fixture fx;
  Rng rng(3);
  const auto ctx = fx.context(rng, 5);
  const LatentSegment seg = predict_next_segment(fx.store, fx.cfg, fx.instr, ctx);
  CHECK(!seg.real);
  CHECK(seg.frames.rows == static_cast<std::size_t>(fx.cfg.k));
  CHECK(seg.frames.cols == static_cast<std::size_t>(fx.cfg.d_z));

  const auto full = fx.context(rng, fx.cfg.horizon_frames());
  CHECK_THROWS_AS(predict_next_segment(fx.store, fx.cfg, fx.instr, full), CapacityError);
}

TEST_CASE("causal masking: perturbation and gradient probe") {
  Fixture fx;
  Rng rng(9);
  Tensor frames(10, static_cast<std::size_t>(fx.cfg.d_z));
  for (double& v : frames.d) v = 0.25 * rng.normal();

  auto forward = [&](const Tensor& f) {
    Tape tape;
    const int text = modelg::text_embedding(tape, fx.store, fx.cfg, fx.instr, false);
    const int node = tape.constant(f);
    const int preds = modelg::backbone_predictions(tape, fx.store, fx.cfg, text, {node}, false);
    return tape.value(preds);
  };

  const Tensor base = forward(frames);
  // perturbing frame index 6 must leave outputs at positions <= 6 bit-identical
  Tensor perturbed = frames;
  perturbed.at(6, 3) += 0.5;
  const Tensor after = forward(perturbed);
  for (std::size_t row = 0; row <= 6; ++row) {
    for (std::size_t c = 0; c < base.cols; ++c) {
      CHECK(after.at(row, c) == base.at(row, c));
    }
  }
  bool changed = false;
  for (std::size_t row = 7; row < base.rows; ++row) {
    for (std::size_t c = 0; c < base.cols; ++c) {
      if (after.at(row, c) != base.at(row, c)) changed = true;
    }
  }
  CHECK(changed);

  // gradient probe: d(output row i)/d(input row j) = 0 for j > i
  {
    ParameterStore with_input = fx.store;
    with_input.params["probe.frames"] = frames;
    Tape tape;
    const int text = modelg::text_embedding(tape, with_input, fx.cfg, fx.instr, false);
    const int node = tape.parameter(with_input, "probe.frames");
    const int preds =
        modelg::backbone_predictions(tape, with_input, fx.cfg, text, {node}, false);
    // output row 4 predicts frame 4 from frames 0..3
    const int probe = tape.sum(tape.slice(preds, 4, 5, 0, tape.value(preds).cols));
    tape.backward(probe);
    const Tensor g = tape.parameter_gradients(with_input).at("probe.frames");
    for (std::size_t row = 4; row < g.rows; ++row) {
      for (std::size_t c = 0; c < g.cols; ++c) {
        CHECK(g.at(row, c) == 0.0);
      }
    }
    bool nonzero = false;
    for (std::size_t row = 0; row < 4; ++row) {
      for (std::size_t c = 0; c < g.cols; ++c) {
        if (g.at(row, c) != 0.0) nonzero = true;
      }
    }
    CHECK(nonzero);
  }
}

TEST_CASE("decode_actions stays in bounds") {
  Fixture fx;
  Rng rng(13);
  for (int trial = 0; trial < 10; ++trial) {
    LatentSegment z;
    z.frames = Tensor(static_cast<std::size_t>(fx.cfg.k),
                      static_cast<std::size_t>(fx.cfg.d_z));
    for (double& v : z.frames.d) v = 5.0 * rng.normal();
    const Tensor mean = decode_actions(fx.store, fx.cfg, z);
    CHECK(mean.rows == static_cast<std::size_t>(fx.cfg.k));
    CHECK(mean.cols == 4);
    for (std::size_t r = 0; r < mean.rows; ++r) {
      for (std::size_t c = 0; c < 3; ++c) {
        CHECK(std::abs(mean.at(r, c)) <= fx.cfg.a_max_xyz);
      }
      CHECK(std::abs(mean.at(r, 3)) <= fx.cfg.a_max_yaw);
    }
  }
}

TEST_CASE("policy log-prob identities") {
  Fixture fx;
  // density at the mode with log_std = 0: -K*4*0.5*log(2*pi)
  ParameterStore unit = fx.store;
  unit.params["policy.log_std"] = Tensor(1, 4);
  Tensor mean(static_cast<std::size_t>(fx.cfg.k), 4);
  Rng rng(31);
  for (double& v : mean.d) v = 0.2 * rng.normal();
  const double at_mode = action_log_prob(unit, fx.cfg, mean, mean);
  CHECK(at_mode == doctest::Approx(-fx.cfg.k * 4 * 0.5 * kLog2Pi).epsilon(1e-12));

  // any displacement is strictly less probable
  Tensor off = mean;
  off.d[3] += 0.3;
  CHECK(action_log_prob(unit, fx.cfg, mean, off) < at_mode);

  // general mode identity: -sum(log sigma) - K*4*0.5*log(2*pi)
  const Tensor& ls = fx.store.params.at("policy.log_std");
  double expected = -fx.cfg.k * 4 * 0.5 * kLog2Pi;
  for (std::size_t c = 0; c < 4; ++c) expected -= fx.cfg.k * ls.d[c];
  CHECK(action_log_prob(fx.store, fx.cfg, mean, mean) ==
        doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("policy density integrates to one per dimension") {
  // 1-D slice: integrate exp(logp) over +-6 sigma
  ModelConfig tiny;
  tiny.k = 1;
  ParameterStore store;
  store.params["policy.log_std"] = Tensor(1, 4);
  store.params["policy.log_std"].d = {std::log(0.3), std::log(0.5), std::log(0.2),
                                      std::log(0.1)};
  for (std::size_t dim = 0; dim < 4; ++dim) {
    const double sigma = std::exp(store.params["policy.log_std"].d[dim]);
    const double mu = 0.17;
    const int n = 4000;
    const double lo = mu - 6.0 * sigma, hi = mu + 6.0 * sigma;
    const double h = (hi - lo) / n;
    double integral = 0.0;
    for (int i = 0; i <= n; ++i) {
      const double x = lo + h * i;
      const double logp = -0.5 * ((x - mu) / sigma) * ((x - mu) / sigma) -
                          std::log(sigma) - 0.5 * kLog2Pi;
      integral += (i == 0 || i == n ? 0.5 : 1.0) * std::exp(logp);
    }
    integral *= h;
    CHECK(std::abs(integral - 1.0) < 1e-3);
  }
}

TEST_CASE("sample_actions statistics and determinism limit") {
  Fixture fx;
  Tensor mean(static_cast<std::size_t>(fx.cfg.k), 4);
  for (std::size_t i = 0; i < mean.size(); ++i) mean.d[i] = 0.1 * (double)i / mean.size();

  // log_std -> -inf limit: sample equals the mean
  ParameterStore det = fx.store;
  det.params["policy.log_std"] = Tensor(1, 4, -40.0);
  Rng rng(77);
  const PolicySample s = sample_actions(det, fx.cfg, mean, rng);
  for (std::size_t i = 0; i < mean.size(); ++i) {
    CHECK(s.actions.d[i] == doctest::Approx(mean.d[i]).epsilon(1e-12));
  }

  // Monte-Carlo mean within 3 standard errors per dimension
  Rng rng2(101);
  const int n = 100000;
  std::array<double, 4> acc{0, 0, 0, 0};
  for (int i = 0; i < n; ++i) {
    const PolicySample ps = sample_actions(fx.store, fx.cfg, mean, rng2);
    for (std::size_t c = 0; c < 4; ++c) acc[c] += ps.actions.at(0, c);
  }
  const Tensor& ls = fx.store.params.at("policy.log_std");
  for (std::size_t c = 0; c < 4; ++c) {
    const double sigma = std::exp(ls.d[c]);
    const double se = sigma / std::sqrt(static_cast<double>(n));
    CHECK(std::abs(acc[c] / n - mean.at(0, c)) < 3.0 * se);
  }
}

TEST_CASE("checkpoint round-trip is bit-exact; mismatches are rejected") {
  Fixture fx;
  const auto tmp = std::filesystem::temp_directory_path() / "navwam_ck_test.ckpt";
  fx.store.step = 1234;
  freeze_autoencoder(fx.store);
  save_checkpoint(tmp.string(), fx.store, 0xfeed);
  const ParameterStore loaded = load_checkpoint(tmp.string(), 0xfeed);
  CHECK(loaded.step == 1234);
  CHECK(loaded.frozen == fx.store.frozen);
  REQUIRE(loaded.params.size() == fx.store.params.size());
  for (const auto& [name, t] : fx.store.params) {
    const Tensor& lt = loaded.params.at(name);
    REQUIRE(lt.same_shape(t));
    for (std::size_t i = 0; i < t.size(); ++i) CHECK(lt.d[i] == t.d[i]);
  }
  CHECK_THROWS_AS(load_checkpoint(tmp.string(), 0xbeef), IncompatibleCheckpoint);
  CHECK_NOTHROW(load_checkpoint(tmp.string(), 0xbeef, true));
  std::filesystem::remove(tmp);
  CHECK_THROWS_AS(load_checkpoint(tmp.string(), 0xfeed), MissingArtifact);
}

TEST_CASE("fresh init with the same seed evaluates identically to a checkpoint") {
  Fixture fx;
  const Demo episode = generate_episode(TaskFamily::Retreat, 900, Difficulty::Easy, fx.sim);
  const auto tmp = std::filesystem::temp_directory_path() / "navwam_ck_eval.ckpt";
  save_checkpoint(tmp.string(), fx.store, 0x1);
  const ParameterStore loaded = load_checkpoint(tmp.string(), 0x1);
  const RolloutResult a =
      roll_episode(fx.store, fx.cfg, fx.sim, episode, RolloutMode::ClosedLoop, false, nullptr);
  const RolloutResult b =
      roll_episode(loaded, fx.cfg, fx.sim, episode, RolloutMode::ClosedLoop, false, nullptr);
  REQUIRE(a.poses.size() == b.poses.size());
  for (std::size_t i = 0; i < a.poses.size(); ++i) {
    CHECK(a.poses[i].x == b.poses[i].x);
    CHECK(a.poses[i].psi == b.poses[i].psi);
  }
  std::filesystem::remove(tmp);
}

TEST_CASE("rollout context flags per mode") {
  Fixture fx;
  const Demo episode = generate_episode(TaskFamily::Approach, 901, Difficulty::Easy, fx.sim);
  const RolloutResult closed =
      roll_episode(fx.store, fx.cfg, fx.sim, episode, RolloutMode::ClosedLoop, false, nullptr);
  const RolloutResult open =
      roll_episode(fx.store, fx.cfg, fx.sim, episode, RolloutMode::OpenLoop, false, nullptr);
  REQUIRE(closed.context_real.size() ==
          static_cast<std::size_t>(1 + fx.cfg.k * fx.cfg.n_segments));
  for (std::size_t i = 0; i < closed.context_real.size(); ++i) {
    CHECK(closed.context_real[i]);
  }
  CHECK(open.context_real[0]);
  for (std::size_t i = 1; i < open.context_real.size(); ++i) {
    CHECK(!open.context_real[i]);
  }
  // first segment has identical context in both modes
  CHECK(closed.segments[0].divergence == open.segments[0].divergence);
}
