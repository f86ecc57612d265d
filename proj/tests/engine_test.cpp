#include <gtest/gtest.h>

#include <vector>

#include "stabkit/engine.hpp"
#include "support/test_util.hpp"

namespace {

using stabkit::Engine;
using stabkit::EngineConfig;
using stabkit::Frame;
using stabkit::Homography;
using stabkit::NetworkConfig;
using stabkit::NetworkParams;
using stabkit::Rng;

NetworkConfig small_config() {
  NetworkConfig cfg;
  cfg.input_width = 64;
  cfg.input_height = 36;
  return cfg;
}

NetworkParams identity_net() {
  Rng rng(99);
  return stabkit::make_network(small_config(), rng);
}

// A network whose output depends on the history channels (random head
// weights) and always displaces the frame (fixed head bias), so both
// causality and cropping have something to bite on.
NetworkParams history_sensitive_net() {
  NetworkParams p = identity_net();
  Rng rng(7);
  for (double& v : p.fc_w) v = rng.uniform(-0.02, 0.02);
  p.fc_b = {0.0, 0.0, 0.08, 0.0, 0.0, 0.04, 0.0, 0.0};
  return p;
}

std::vector<Frame> random_frames(int n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Frame> out;
  for (int i = 0; i < n; ++i) out.push_back(testutil::smooth_frame(64, 36, rng));
  return out;
}

void expect_frame_bitwise(const Frame& a, const Frame& b) {
  ASSERT_EQ(a.width, b.width);
  ASSERT_EQ(a.height, b.height);
  for (std::size_t i = 0; i < a.size(); ++i) {
    ASSERT_EQ(a.data[i], b.data[i]) << "pixel " << i;
    ASSERT_EQ(a.mask[i], b.mask[i]) << "mask " << i;
  }
}

TEST(EngineConfigCheck, RejectsBadOffsetLists) {
  const NetworkConfig net = small_config();
  EngineConfig c;
  c.offsets = {-29, -23, -17, -11};  // one short of 5 history channels
  EXPECT_THROW(stabkit::validate_engine_config(c, net), stabkit::ConfigError);
  c.offsets = {-29, -23, -17, -11, 0};
  EXPECT_THROW(stabkit::validate_engine_config(c, net), stabkit::ConfigError);
  c.offsets = {-29, -23, -23, -11, -5};
  EXPECT_THROW(stabkit::validate_engine_config(c, net), stabkit::ConfigError);
  c.offsets = {-29, -23, -17, -11, -5};
  c.bootstrap_count = 10;
  EXPECT_THROW(stabkit::validate_engine_config(c, net), stabkit::ConfigError);
  c.bootstrap_count = 30;
  EXPECT_NO_THROW(stabkit::validate_engine_config(c, net));
  c.offsets = stabkit::training_offsets();
  EXPECT_NO_THROW(stabkit::validate_engine_config(c, net));
}

TEST(EngineStep, IdentityModelIsAnExactNoOp) {
  Engine engine(identity_net());
  const std::vector<Frame> frames = random_frames(40, 1);
  for (const Frame& f : frames) {
    const Engine::StepResult r = engine.step(f);
    for (int k = 0; k < 8; ++k)
      ASSERT_EQ(r.transform[k], Homography::identity()[k]);
    expect_frame_bitwise(r.stabilized, f);
  }
}

TEST(EngineStep, BootstrapDuplicatesTheFirstFrame) {
  Engine engine(identity_net());
  const std::vector<Frame> frames = random_frames(3, 2);
  engine.step(frames[0]);
  for (int off : engine.config().offsets)
    expect_frame_bitwise(engine.history_at(off), frames[0]);
  engine.step(frames[1]);
  engine.step(frames[2]);
  // After 3 steps the next step still reaches pre-clip history everywhere
  // except the shallow end.
  expect_frame_bitwise(engine.history_at(-29), frames[0]);
}

TEST(EngineStep, HistoryBufferHoldsExactlyTheOffsetFrames) {
  Engine engine(identity_net());
  const std::vector<Frame> frames = random_frames(40, 3);
  for (const Frame& f : frames) engine.step(f);
  // Identity model: stabilized history == raw inputs. The next step (index
  // 40) must see input[40 + off] in each slot.
  for (int off : engine.config().offsets)
    expect_frame_bitwise(engine.history_at(off), frames[40 + off]);
}

TEST(EngineStep, RejectsMismatchedDims) {
  Engine engine(identity_net());
  Rng rng(4);
  const Frame wrong = testutil::smooth_frame(32, 18, rng);
  EXPECT_THROW(engine.step(wrong), stabkit::ConfigError);
}

TEST(EngineStep, CausalityPrefixReplay) {
  const NetworkParams net = history_sensitive_net();
  const std::vector<Frame> frames = random_frames(14, 5);

  Engine full(net);
  std::vector<Frame> full_out;
  std::vector<Homography> full_tf;
  for (const Frame& f : frames) {
    Engine::StepResult r = full.step(f);
    full_out.push_back(std::move(r.stabilized));
    full_tf.push_back(r.transform);
  }

  Engine prefix(net);
  for (int t = 0; t < 8; ++t) {
    const Engine::StepResult r = prefix.step(frames[t]);
    for (int k = 0; k < 8; ++k) ASSERT_EQ(r.transform[k], full_tf[t][k]);
    expect_frame_bitwise(r.stabilized, full_out[t]);
  }
}

TEST(EngineStep, OutputActuallyDependsOnHistory) {
  const NetworkParams net = history_sensitive_net();
  const std::vector<Frame> a = random_frames(10, 6);
  std::vector<Frame> b = a;
  Rng rng(7);
  b[4] = testutil::smooth_frame(64, 36, rng);  // inside step 9's history cone

  Engine ea(net), eb(net);
  Homography last_a, last_b;
  for (int t = 0; t < 10; ++t) {
    last_a = ea.step(a[t]).transform;
    last_b = eb.step(b[t]).transform;
  }
  // Step 9 reads the stabilized frame 4 at offset -5, so its prediction
  // must move when frame 4 changes even though input frame 9 is identical.
  double diff = 0.0;
  for (int k = 0; k < 8; ++k) diff += std::abs(last_a[k] - last_b[k]);
  EXPECT_GT(diff, 0.0);
}

TEST(StabilizeClip, IdentityModelFinalMode) {
  const std::vector<Frame> frames = random_frames(12, 8);
  const stabkit::StabilizeResult res =
      stabkit::stabilize_clip(frames, identity_net());
  ASSERT_EQ(res.frames.size(), frames.size());
  ASSERT_EQ(res.transforms.size(), frames.size());
  for (std::size_t t = 0; t < frames.size(); ++t)
    expect_frame_bitwise(res.frames[t], frames[t]);
  EXPECT_EQ(res.crop.x0, 0);
  EXPECT_EQ(res.crop.y0, 0);
  EXPECT_EQ(res.crop.width, 64);
  EXPECT_EQ(res.crop.height, 36);
  EXPECT_GE(res.seconds, 0.0);
}

TEST(StabilizeClip, SingleFrameClip) {
  const std::vector<Frame> frames = random_frames(1, 9);
  const stabkit::StabilizeResult res =
      stabkit::stabilize_clip(frames, identity_net());
  ASSERT_EQ(res.frames.size(), 1u);
  expect_frame_bitwise(res.frames[0], frames[0]);
}

TEST(StabilizeClip, FinalCropCoversOnlyValidPixels) {
  const std::vector<Frame> frames = random_frames(12, 10);
  const stabkit::StabilizeResult res =
      stabkit::stabilize_clip(frames, history_sensitive_net());
  // The planted translation bias leaves invalid borders, so the crop must
  // shrink, and inside it every frame must be valid.
  EXPECT_LT(res.crop.width, 64);
  for (const Frame& f : res.frames) {
    const Frame cropped = stabkit::apply_crop(f, res.crop);
    for (std::uint8_t m : cropped.mask) ASSERT_EQ(m, 1);
  }
}

TEST(StabilizeClip, RunningModeKeepsDimsAndShrinks) {
  const std::vector<Frame> frames = random_frames(12, 11);
  EngineConfig cfg;
  cfg.crop = stabkit::CropMode::kRunning;
  const stabkit::StabilizeResult res =
      stabkit::stabilize_clip(frames, history_sensitive_net(), cfg);
  for (const Frame& f : res.frames) {
    ASSERT_EQ(f.width, 64);
    ASSERT_EQ(f.height, 36);
  }
  EXPECT_LT(res.crop.width, 64);
}

TEST(StabilizeClip, DeterministicRuns) {
  const std::vector<Frame> frames = random_frames(10, 12);
  const NetworkParams net = history_sensitive_net();
  const stabkit::StabilizeResult a = stabkit::stabilize_clip(frames, net);
  const stabkit::StabilizeResult b = stabkit::stabilize_clip(frames, net);
  for (std::size_t t = 0; t < frames.size(); ++t) {
    for (int k = 0; k < 8; ++k)
      ASSERT_EQ(a.transforms[t][k], b.transforms[t][k]);
    expect_frame_bitwise(a.frames[t], b.frames[t]);
  }
}

}  // namespace
