#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "stabkit/datagen.hpp"
#include "stabkit/dataset.hpp"
#include "stabkit/losses.hpp"
#include "support/test_util.hpp"

namespace {

using stabkit::Clip;
using stabkit::ClipParams;
using stabkit::Frame;
using stabkit::Homography;
using stabkit::Rng;
using stabkit::Vec2;

ClipParams small_params() {
  ClipParams p;
  p.frames = 60;
  p.width = 64;
  p.height = 36;
  return p;
}

// Masked mean squared error over pixels valid in both frames.
double masked_mse(const Frame& a, const Frame& b) {
  EXPECT_EQ(a.width, b.width);
  EXPECT_EQ(a.height, b.height);
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!a.mask[i] || !b.mask[i]) continue;
    const double d = a.data[i] - b.data[i];
    sum += d * d;
    ++n;
  }
  EXPECT_GT(n, a.size() / 2);
  return sum / static_cast<double>(n);
}

void expect_frames_equal(const Frame& a, const Frame& b) {
  ASSERT_EQ(a.width, b.width);
  ASSERT_EQ(a.height, b.height);
  for (std::size_t i = 0; i < a.size(); ++i) {
    ASSERT_DOUBLE_EQ(a.data[i], b.data[i]) << "pixel " << i;
    ASSERT_EQ(a.mask[i], b.mask[i]) << "mask " << i;
  }
}

void expect_h_equal(const Homography& a, const Homography& b) {
  for (int k = 0; k < 8; ++k) ASSERT_DOUBLE_EQ(a[k], b[k]) << "param " << k;
}

// One-sided power spectrum of a real signal via the direct transform.
std::vector<double> power_spectrum(const std::vector<double>& x) {
  const int n = static_cast<int>(x.size());
  std::vector<double> power(n / 2 + 1, 0.0);
  for (int k = 0; k <= n / 2; ++k) {
    double re = 0.0, im = 0.0;
    for (int t = 0; t < n; ++t) {
      const double ang = -2.0 * M_PI * k * t / n;
      re += x[t] * std::cos(ang);
      im += x[t] * std::sin(ang);
    }
    power[k] = re * re + im * im;
  }
  return power;
}

double band_energy_ratio(const std::vector<double>& signal, double f_lo,
                         double f_hi) {
  const std::vector<double> power = power_spectrum(signal);
  const int n = static_cast<int>(signal.size());
  double total = 0.0, band = 0.0;
  for (int k = 0; k < static_cast<int>(power.size()); ++k) {
    total += power[k];
    const double f = static_cast<double>(k) / n;
    if (f >= f_lo - 1e-12 && f <= f_hi + 1e-12) band += power[k];
  }
  EXPECT_GT(total, 0.0);
  return band / total;
}

TEST(Scene, DeterministicAndInRange) {
  stabkit::SceneParams sp;
  Rng r1(3), r2(3);
  const Frame a = stabkit::make_scene(sp, r1);
  const Frame b = stabkit::make_scene(sp, r2);
  ASSERT_EQ(a.width, sp.width);
  ASSERT_EQ(a.height, sp.height);
  expect_frames_equal(a, b);
  for (double v : a.data) {
    ASSERT_GE(v, 0.02);
    ASSERT_LE(v, 0.98);
  }
}

TEST(Scene, FootprintViewIsCornerRichInEveryQuadrant) {
  stabkit::SceneParams sp;
  sp.height = 144;  // the clip generator matches scene aspect to the frame
  Rng rng(5);
  const Frame scene = stabkit::make_scene(sp, rng);
  Homography cam = Homography::identity();
  cam.h[0] = 0.5;
  cam.h[4] = 0.5;
  const Frame view = stabkit::render_view(scene, cam, 96, 54);
  const std::vector<Vec2> corners = stabkit::detect_corners(view);
  int quadrant[4] = {0, 0, 0, 0};
  for (const Vec2& c : corners)
    ++quadrant[(c.x >= 0.0 ? 1 : 0) + (c.y >= 0.0 ? 2 : 0)];
  for (int q = 0; q < 4; ++q)
    EXPECT_GE(quadrant[q], 10) << "quadrant " << q << " of "
                               << corners.size() << " corners";
}

TEST(Spline, InterpolatesKnotsExactly) {
  Rng rng(17);
  std::vector<double> knots(6);
  for (double& k : knots) k = rng.uniform(-1.0, 1.0);
  const int spacing = 5;
  const std::vector<double> out =
      stabkit::natural_spline(knots, spacing, spacing * 5 + 1);
  for (std::size_t i = 0; i < knots.size(); ++i)
    EXPECT_NEAR(out[i * spacing], knots[i], 1e-12);
}

TEST(Spline, CollinearKnotsGiveTheLine) {
  std::vector<double> knots;
  for (int i = 0; i < 5; ++i) knots.push_back(0.3 + 0.7 * i);
  const std::vector<double> out = stabkit::natural_spline(knots, 4.0, 17);
  for (int t = 0; t < 17; ++t)
    EXPECT_NEAR(out[t], 0.3 + 0.7 * t / 4.0, 1e-12) << "sample " << t;
}

TEST(Spline, ThreeKnotClosedForm) {
  // Knots {0, 1, 0} at spacing 2. Natural ends give M0 = M2 = 0 and the
  // single interior equation (2s/3) M1 = (y2 - 2 y1 + y0) / s, so
  // M1 = -3/4. Evaluating the first cubic piece at its midpoint:
  //   p(1) = M1 * 1 / (6 s) + y0 / 2 + (y1 - M1 s^2 / 6) / 2 = 11/16.
  const std::vector<double> out =
      stabkit::natural_spline({0.0, 1.0, 0.0}, 2.0, 5);
  const std::vector<double> expected = {0.0, 0.6875, 1.0, 0.6875, 0.0};
  for (int t = 0; t < 5; ++t) EXPECT_NEAR(out[t], expected[t], 1e-12);
}

TEST(Spline, RejectsBadArguments) {
  EXPECT_THROW(stabkit::natural_spline({1.0}, 1.0, 2), stabkit::ConfigError);
  EXPECT_THROW(stabkit::natural_spline({1.0, 2.0}, 0.0, 2),
               stabkit::ConfigError);
  EXPECT_THROW(stabkit::natural_spline({1.0, 2.0}, 1.0, 5),
               stabkit::ConfigError);
}

TEST(Jitter, SpectrumSitsInsideTheShakeBand) {
  ClipParams p;  // defaults: 120 frames
  Rng rng(11);
  const Clip clip = stabkit::make_clip(p, rng);

  // Recover the shake applied on top of the intended path: J = A^-1 B.
  std::vector<double> jtx, jty, jrot;
  for (std::size_t t = 0; t < clip.steady_cams.size(); ++t) {
    const Homography j = stabkit::compose(stabkit::invert(clip.steady_cams[t]),
                                          clip.unsteady_cams[t]);
    jtx.push_back(j[2]);
    jty.push_back(j[5]);
    jrot.push_back(std::atan2(j[3], j[0]));
  }
  EXPECT_GT(*std::max_element(jtx.begin(), jtx.end()), 1e-3);
  for (const std::vector<double>* sig : {&jtx, &jty, &jrot})
    EXPECT_GE(band_energy_ratio(*sig, p.jitter_freq_lo, p.jitter_freq_hi),
              0.99);
}

TEST(Clip, RendersFullyValidAcrossSeeds) {
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    Rng rng(seed);
    const Clip clip = stabkit::make_clip(small_params(), rng);
    ASSERT_EQ(clip.steady.size(), 60u);
    ASSERT_EQ(clip.unsteady.size(), 60u);
    ASSERT_EQ(clip.gt.size(), 60u);
    ASSERT_EQ(clip.matches.size(), 60u);
    ASSERT_EQ(clip.flow.size(), 60u);
    for (const std::vector<Frame>* seq : {&clip.steady, &clip.unsteady})
      for (const Frame& f : *seq)
        for (std::uint8_t m : f.mask) ASSERT_EQ(m, 1);
    // flow[0] is the zero placeholder.
    for (double v : clip.flow[0].dx) ASSERT_EQ(v, 0.0);
    for (double v : clip.flow[0].dy) ASSERT_EQ(v, 0.0);
    // The shake must leave a visible difference for training to matter.
    EXPECT_GT(masked_mse(clip.steady[30], clip.unsteady[30]), 1e-5);
  }
}

TEST(Clip, OversizedMotionIsShrunkUntilItFits) {
  ClipParams p = small_params();
  p.pose_translation_amp = 0.9;
  p.jitter_translation_amp = 0.4;
  Rng rng(4);
  const Clip clip = stabkit::make_clip(p, rng);  // must not throw
  for (const std::vector<Frame>* seq : {&clip.steady, &clip.unsteady})
    for (const Frame& f : *seq)
      for (std::uint8_t m : f.mask) ASSERT_EQ(m, 1);
}

TEST(Clip, PlantedMatchesFollowTheReturnTransform) {
  Rng rng(7);
  const Clip clip = stabkit::make_clip(small_params(), rng);
  for (std::size_t t = 0; t < clip.matches.size(); ++t) {
    ASSERT_EQ(clip.matches[t].size(), 32u);
    for (const stabkit::Match& m : clip.matches[t]) {
      ASSERT_LE(std::abs(m.src.x), 0.75);
      ASSERT_LE(std::abs(m.src.y), 0.75);
      const Vec2 mapped = stabkit::apply(clip.gt[t], m.src);
      ASSERT_DOUBLE_EQ(mapped.x, m.dst.x);
      ASSERT_DOUBLE_EQ(mapped.y, m.dst.y);
    }
  }
}

TEST(Clip, ReturnTransformAlignsUnsteadyToSteady) {
  Rng rng(8);
  const Clip clip = stabkit::make_clip(small_params(), rng);
  for (int t : {5, 30, 59}) {
    const Frame aligned = stabkit::warp_frame(clip.unsteady[t], clip.gt[t]);
    const double mse_aligned = masked_mse(aligned, clip.steady[t]);
    const double mse_raw = masked_mse(clip.unsteady[t], clip.steady[t]);
    EXPECT_LT(mse_aligned, 1e-3) << "t=" << t;
    EXPECT_GT(mse_raw, 3.0 * mse_aligned) << "t=" << t;
  }
}

TEST(Clip, LossesVanishAtTheReturnTransform) {
  Rng rng(9);
  const Clip clip = stabkit::make_clip(small_params(), rng);
  for (int t : {31, 45}) {
    EXPECT_LT(stabkit::pixel_loss(clip.steady[t], clip.unsteady[t],
                                  clip.gt[t]),
              1e-3);
    // dst was generated as apply(gt, src), so the residual is exactly zero.
    EXPECT_LT(stabkit::feature_loss(clip.matches[t], clip.gt[t]), 1e-28);
  }
}

TEST(Clip, FlowIsConsistentWithTheSteadyFrames) {
  Rng rng(10);
  const Clip clip = stabkit::make_clip(small_params(), rng);
  for (int t : {1, 30, 59}) {
    const Frame moved =
        stabkit::warp_with_flow(clip.steady[t - 1], clip.flow[t]);
    EXPECT_LT(masked_mse(moved, clip.steady[t]), 1e-3) << "t=" << t;
  }
}

TEST(Clip, SameSeedSameClip) {
  Rng r1(12), r2(12);
  const Clip a = stabkit::make_clip(small_params(), r1);
  const Clip b = stabkit::make_clip(small_params(), r2);
  for (std::size_t t = 0; t < a.steady.size(); ++t) {
    expect_frames_equal(a.steady[t], b.steady[t]);
    expect_frames_equal(a.unsteady[t], b.unsteady[t]);
    expect_h_equal(a.gt[t], b.gt[t]);
    for (std::size_t i = 0; i < a.matches[t].size(); ++i) {
      ASSERT_DOUBLE_EQ(a.matches[t][i].src.x, b.matches[t][i].src.x);
      ASSERT_DOUBLE_EQ(a.matches[t][i].dst.y, b.matches[t][i].dst.y);
    }
    for (std::size_t i = 0; i < a.flow[t].size(); ++i) {
      ASSERT_DOUBLE_EQ(a.flow[t].dx[i], b.flow[t].dx[i]);
      ASSERT_DOUBLE_EQ(a.flow[t].dy[i], b.flow[t].dy[i]);
    }
  }
}

TEST(Augment, HorizontalFlipIsAnInvolution) {
  Rng rng(13);
  const Clip a = stabkit::make_clip(small_params(), rng);
  const Clip b = stabkit::flip_horizontal(stabkit::flip_horizontal(a));
  for (std::size_t t = 0; t < a.steady.size(); ++t) {
    expect_frames_equal(a.steady[t], b.steady[t]);
    expect_frames_equal(a.unsteady[t], b.unsteady[t]);
    expect_h_equal(a.steady_cams[t], b.steady_cams[t]);
    expect_h_equal(a.unsteady_cams[t], b.unsteady_cams[t]);
    expect_h_equal(a.gt[t], b.gt[t]);
    for (std::size_t i = 0; i < a.matches[t].size(); ++i) {
      ASSERT_DOUBLE_EQ(a.matches[t][i].src.x, b.matches[t][i].src.x);
      ASSERT_DOUBLE_EQ(a.matches[t][i].src.y, b.matches[t][i].src.y);
      ASSERT_DOUBLE_EQ(a.matches[t][i].dst.x, b.matches[t][i].dst.x);
      ASSERT_DOUBLE_EQ(a.matches[t][i].dst.y, b.matches[t][i].dst.y);
    }
    for (std::size_t i = 0; i < a.flow[t].size(); ++i) {
      ASSERT_DOUBLE_EQ(a.flow[t].dx[i], b.flow[t].dx[i]);
      ASSERT_DOUBLE_EQ(a.flow[t].dy[i], b.flow[t].dy[i]);
      ASSERT_EQ(a.flow[t].mask[i], b.flow[t].mask[i]);
    }
  }
}

TEST(Augment, FlippedClipIsInternallyConsistent) {
  Rng rng(14);
  const Clip flipped = stabkit::flip_horizontal(
      stabkit::make_clip(small_params(), rng));
  // The conjugated return transform must still map flipped sources onto
  // flipped destinations...
  for (int t : {0, 25, 59})
    for (const stabkit::Match& m : flipped.matches[t]) {
      const Vec2 mapped = stabkit::apply(flipped.gt[t], m.src);
      ASSERT_NEAR(mapped.x, m.dst.x, 1e-15);
      ASSERT_NEAR(mapped.y, m.dst.y, 1e-15);
    }
  // ...and still align the mirrored frames.
  for (int t : {25, 59}) {
    const Frame aligned =
        stabkit::warp_frame(flipped.unsteady[t], flipped.gt[t]);
    EXPECT_LT(masked_mse(aligned, flipped.steady[t]), 1e-3);
    const Frame moved =
        stabkit::warp_with_flow(flipped.steady[t - 1], flipped.flow[t]);
    EXPECT_LT(masked_mse(moved, flipped.steady[t]), 1e-3);
  }
}

TEST(Augment, TimeReversalIsAnInvolution) {
  Rng rng(15);
  const Clip a = stabkit::make_clip(small_params(), rng);
  const Clip b = stabkit::reverse_time(stabkit::reverse_time(a));
  for (std::size_t t = 0; t < a.steady.size(); ++t) {
    expect_frames_equal(a.steady[t], b.steady[t]);
    expect_h_equal(a.steady_cams[t], b.steady_cams[t]);
    expect_h_equal(a.gt[t], b.gt[t]);
    for (std::size_t i = 0; i < a.flow[t].size(); ++i) {
      ASSERT_DOUBLE_EQ(a.flow[t].dx[i], b.flow[t].dx[i]);
      ASSERT_DOUBLE_EQ(a.flow[t].dy[i], b.flow[t].dy[i]);
    }
  }
}

TEST(Augment, ReversedClipHasConsistentFlow) {
  Rng rng(16);
  const Clip rev = stabkit::reverse_time(stabkit::make_clip(small_params(),
                                                            rng));
  for (int t : {1, 30}) {
    const Frame moved = stabkit::warp_with_flow(rev.steady[t - 1],
                                                rev.flow[t]);
    EXPECT_LT(masked_mse(moved, rev.steady[t]), 1e-3);
  }
}

TEST(Augment, FamilyIsOriginalFlipReverseAndBoth) {
  Rng rng(17);
  const Clip clip = stabkit::make_clip(small_params(), rng);
  const std::vector<Clip> family = stabkit::augment(clip);
  ASSERT_EQ(family.size(), 4u);
  const Clip flipped = stabkit::flip_horizontal(clip);
  const Clip reversed = stabkit::reverse_time(clip);
  const Clip both = stabkit::reverse_time(flipped);
  const Clip* expected[4] = {&clip, &flipped, &reversed, &both};
  for (int v = 0; v < 4; ++v) {
    ASSERT_EQ(family[v].steady.size(), clip.steady.size()) << "v=" << v;
    for (std::size_t t = 0; t < clip.steady.size(); ++t) {
      expect_frames_equal(family[v].steady[t], expected[v]->steady[t]);
      expect_frames_equal(family[v].unsteady[t], expected[v]->unsteady[t]);
      expect_h_equal(family[v].gt[t], expected[v]->gt[t]);
      for (std::size_t i = 0; i < clip.flow[t].size(); ++i) {
        ASSERT_DOUBLE_EQ(family[v].flow[t].dx[i], expected[v]->flow[t].dx[i]);
        ASSERT_DOUBLE_EQ(family[v].flow[t].dy[i], expected[v]->flow[t].dy[i]);
      }
    }
  }
}

TEST(TrainingSample, RejectsOutOfRangeIndices) {
  Rng rng(20);
  const Clip clip = stabkit::make_clip(small_params(), rng);
  const stabkit::PerturbationRange range =
      stabkit::PerturbationRange::defaults();
  Rng srng(1);
  EXPECT_THROW(stabkit::make_training_sample(clip, 29, range, srng),
               stabkit::ConfigError);
  EXPECT_THROW(stabkit::make_training_sample(clip, 60, range, srng),
               stabkit::ConfigError);
}

TEST(TrainingSample, LayoutAndPointers) {
  Rng rng(21);
  const Clip clip = stabkit::make_clip(small_params(), rng);
  const stabkit::PerturbationRange range =
      stabkit::PerturbationRange::defaults();
  Rng srng(2);
  const stabkit::TrainingSample s =
      stabkit::make_training_sample(clip, 40, range, srng);
  const std::size_t wh = static_cast<std::size_t>(clip.width) * clip.height;
  ASSERT_EQ(s.input_t.size(), wh * 6);
  ASSERT_EQ(s.input_tm1.size(), wh * 6);
  // The last channel is the raw frame to stabilize.
  for (std::size_t i = 0; i < wh; ++i) {
    ASSERT_DOUBLE_EQ(s.input_t[i * 6 + 5], clip.unsteady[40].data[i]);
    ASSERT_DOUBLE_EQ(s.input_tm1[i * 6 + 5], clip.unsteady[39].data[i]);
  }
  EXPECT_EQ(s.unsteady_t, &clip.unsteady[40]);
  EXPECT_EQ(s.unsteady_tm1, &clip.unsteady[39]);
  EXPECT_EQ(s.steady_t, &clip.steady[40]);
  EXPECT_EQ(s.matches_t, &clip.matches[40]);
  EXPECT_EQ(s.flow, &clip.flow[40]);
  EXPECT_EQ(s.t, 40);
}

TEST(TrainingSample, HistoryClampsAtTheClipStart) {
  Rng rng(22);
  const Clip clip = stabkit::make_clip(small_params(), rng);
  // A degenerate perturbation range pins every history warp to the identity,
  // exposing which frames were selected.
  stabkit::PerturbationRange frozen;
  frozen.lo = {1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0};
  frozen.hi = frozen.lo;
  Rng srng(3);
  const stabkit::TrainingSample s =
      stabkit::make_training_sample(clip, 30, frozen, srng);
  const std::size_t wh = static_cast<std::size_t>(clip.width) * clip.height;
  const int expect_t[5] = {0, 6, 12, 18, 24};     // base 30 + offsets, clamped
  const int expect_tm1[5] = {0, 5, 11, 17, 23};   // base 29 + offsets, clamped
  for (int c = 0; c < 5; ++c)
    for (std::size_t i = 0; i < wh; i += 17) {
      ASSERT_DOUBLE_EQ(s.input_t[i * 6 + c],
                       clip.steady[expect_t[c]].data[i]);
      ASSERT_DOUBLE_EQ(s.input_tm1[i * 6 + c],
                       clip.steady[expect_tm1[c]].data[i]);
    }
}

TEST(TrainingSample, PerturbationActuallyDisturbsHistory) {
  Rng rng(23);
  const Clip clip = stabkit::make_clip(small_params(), rng);
  const stabkit::PerturbationRange range =
      stabkit::PerturbationRange::defaults();
  Rng srng(4);
  const stabkit::TrainingSample s =
      stabkit::make_training_sample(clip, 40, range, srng);
  const std::size_t wh = static_cast<std::size_t>(clip.width) * clip.height;
  double diff = 0.0;
  for (std::size_t i = 0; i < wh; ++i)
    diff += std::abs(s.input_t[i * 6 + 4] - clip.steady[34].data[i]);
  EXPECT_GT(diff / static_cast<double>(wh), 1e-3);
}

TEST(TrainingSample, DeterministicGivenSeed) {
  Rng rng(24);
  const Clip clip = stabkit::make_clip(small_params(), rng);
  const stabkit::PerturbationRange range =
      stabkit::PerturbationRange::defaults();
  Rng r1(5), r2(5);
  const stabkit::TrainingSample a =
      stabkit::make_training_sample(clip, 45, range, r1);
  const stabkit::TrainingSample b =
      stabkit::make_training_sample(clip, 45, range, r2);
  ASSERT_EQ(a.input_t.size(), b.input_t.size());
  for (std::size_t i = 0; i < a.input_t.size(); ++i) {
    ASSERT_DOUBLE_EQ(a.input_t[i], b.input_t[i]);
    ASSERT_DOUBLE_EQ(a.input_tm1[i], b.input_tm1[i]);
  }
}

ClipParams tiny_params() {
  ClipParams p;
  p.frames = 40;
  p.width = 48;
  p.height = 28;
  return p;
}

TEST(Dataset, ClipRoundTripPreservesEverything) {
  Rng rng(30);
  const Clip clip = stabkit::make_clip(tiny_params(), rng);
  const std::string dir = testutil::scratch_dir("clip_roundtrip");
  stabkit::save_clip(dir, clip);
  const Clip loaded = stabkit::load_clip(dir);

  ASSERT_EQ(loaded.width, clip.width);
  ASSERT_EQ(loaded.height, clip.height);
  ASSERT_DOUBLE_EQ(loaded.fps, clip.fps);
  ASSERT_EQ(loaded.steady.size(), clip.steady.size());
  for (std::size_t t = 0; t < clip.steady.size(); ++t) {
    // Frames pass through 8-bit storage; everything else is exact.
    for (std::size_t i = 0; i < clip.steady[t].size(); ++i) {
      ASSERT_NEAR(loaded.steady[t].data[i], clip.steady[t].data[i], 1.0 / 255);
      ASSERT_NEAR(loaded.unsteady[t].data[i], clip.unsteady[t].data[i],
                  1.0 / 255);
      ASSERT_EQ(loaded.steady[t].mask[i], clip.steady[t].mask[i]);
    }
    expect_h_equal(loaded.steady_cams[t], clip.steady_cams[t]);
    expect_h_equal(loaded.unsteady_cams[t], clip.unsteady_cams[t]);
    expect_h_equal(loaded.gt[t], clip.gt[t]);
    ASSERT_EQ(loaded.matches[t].size(), clip.matches[t].size());
    for (std::size_t i = 0; i < clip.matches[t].size(); ++i) {
      ASSERT_DOUBLE_EQ(loaded.matches[t][i].src.x, clip.matches[t][i].src.x);
      ASSERT_DOUBLE_EQ(loaded.matches[t][i].src.y, clip.matches[t][i].src.y);
      ASSERT_DOUBLE_EQ(loaded.matches[t][i].dst.x, clip.matches[t][i].dst.x);
      ASSERT_DOUBLE_EQ(loaded.matches[t][i].dst.y, clip.matches[t][i].dst.y);
      ASSERT_DOUBLE_EQ(loaded.matches[t][i].score, clip.matches[t][i].score);
    }
    ASSERT_EQ(loaded.flow[t].width, clip.flow[t].width);
    for (std::size_t i = 0; i < clip.flow[t].size(); ++i) {
      ASSERT_DOUBLE_EQ(loaded.flow[t].dx[i], clip.flow[t].dx[i]);
      ASSERT_DOUBLE_EQ(loaded.flow[t].dy[i], clip.flow[t].dy[i]);
      ASSERT_EQ(loaded.flow[t].mask[i], clip.flow[t].mask[i]);
    }
  }
}

std::vector<char> read_bytes(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  return std::vector<char>(std::istreambuf_iterator<char>(is), {});
}

TEST(Dataset, SavingTwiceProducesIdenticalBytes) {
  Rng rng(31);
  const Clip clip = stabkit::make_clip(tiny_params(), rng);
  const std::string da = testutil::scratch_dir("clip_bytes_a");
  const std::string db = testutil::scratch_dir("clip_bytes_b");
  stabkit::save_clip(da, clip);
  stabkit::save_clip(db, clip);

  std::vector<std::string> rel;
  for (const auto& e : std::filesystem::recursive_directory_iterator(da))
    if (e.is_regular_file())
      rel.push_back(std::filesystem::relative(e.path(), da).string());
  std::sort(rel.begin(), rel.end());
  ASSERT_GT(rel.size(), 10u);
  for (const std::string& r : rel)
    ASSERT_EQ(read_bytes(std::filesystem::path(da) / r),
              read_bytes(std::filesystem::path(db) / r))
        << r << " differs between identical saves";
}

TEST(Dataset, DatasetRoundTripAndErrors) {
  Rng r1(32), r2(33);
  std::vector<Clip> clips;
  clips.push_back(stabkit::make_clip(tiny_params(), r1));
  clips.push_back(stabkit::make_clip(tiny_params(), r2));
  const std::string dir = testutil::scratch_dir("dataset_roundtrip");
  stabkit::save_dataset(dir, clips, 99);

  const std::vector<Clip> loaded = stabkit::load_dataset(dir);
  ASSERT_EQ(loaded.size(), 2u);
  for (const Clip& c : loaded) {
    ASSERT_EQ(c.width, 48);
    ASSERT_EQ(c.steady.size(), 40u);
  }
  expect_h_equal(loaded[1].gt[7], clips[1].gt[7]);

  EXPECT_THROW(stabkit::load_dataset(dir + "_missing"), stabkit::IoError);
  EXPECT_THROW(stabkit::load_clip(dir), stabkit::IoError);
}

}  // namespace
