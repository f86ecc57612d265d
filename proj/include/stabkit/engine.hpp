#pragma once

#include <chrono>
#include <utility>
#include <vector>

#include "stabkit/common.hpp"
#include "stabkit/image.hpp"
#include "stabkit/network.hpp"

namespace stabkit {

// Online stabilization: each incoming frame is warped by a transform
// predicted from the frame itself plus a buffer of previously *stabilized*
// frames, so the engine drives itself. Exactly one frame out per frame in.

enum class CropMode { kNone, kRunning, kFinal };

struct EngineConfig {
  // History sampling positions relative to the current frame. The default
  // follows the inference protocol; kTrainingOffsets matches the training
  // history spacing one frame deeper.
  std::vector<int> offsets = {-29, -23, -17, -11, -5};
  int bootstrap_count = 30;  // duplicates of the first frame standing in
                             // for history before the clip starts
  CropMode crop = CropMode::kFinal;
};

inline std::vector<int> training_offsets() {
  return std::vector<int>(kHistoryOffsets.begin(), kHistoryOffsets.end());
}

inline void validate_engine_config(const EngineConfig& c,
                                   const NetworkConfig& n) {
  if (c.offsets.empty()) throw ConfigError("engine: no history offsets");
  if (static_cast<int>(c.offsets.size()) + 1 != n.input_channels)
    throw ConfigError(
        "engine: history offsets + current frame must match the network's "
        "input channels");
  for (std::size_t i = 0; i < c.offsets.size(); ++i) {
    if (c.offsets[i] >= 0)
      throw ConfigError("engine: history offsets must be negative");
    if (i > 0 && c.offsets[i] <= c.offsets[i - 1])
      throw ConfigError("engine: history offsets must be strictly increasing");
  }
  if (c.bootstrap_count < -c.offsets.front())
    throw ConfigError("engine: bootstrap count shorter than the history span");
}

class Engine {
 public:
  Engine(NetworkParams params, EngineConfig cfg = {})
      : params_(std::move(params)), cfg_(std::move(cfg)) {
    validate_engine_config(cfg_, params_.config);
    capacity_ = -cfg_.offsets.front();
    ring_.resize(capacity_);
  }

  struct StepResult {
    Frame stabilized;
    Homography transform;
  };

  const EngineConfig& config() const { return cfg_; }
  const NetworkParams& params() const { return params_; }
  long frames_processed() const { return t_; }

  // The stabilized frame from `offset` steps back, as the next step will see
  // it. Only valid after at least one step.
  const Frame& history_at(int offset) const {
    if (t_ == 0) throw ConfigError("engine: no frames processed yet");
    const long idx = t_ + offset;
    return idx < 0 ? bootstrap_ : ring_[idx % capacity_];
  }

  StepResult step(const Frame& input) {
    if (input.width != params_.config.input_width ||
        input.height != params_.config.input_height)
      throw ConfigError("engine: frame dims do not match the model");
    if (t_ == 0) bootstrap_ = input;

    std::vector<const Frame*> channels;
    channels.reserve(cfg_.offsets.size() + 1);
    for (int off : cfg_.offsets) {
      const long idx = t_ + off;
      channels.push_back(idx < 0 ? &bootstrap_ : &ring_[idx % capacity_]);
    }
    channels.push_back(&input);

    const Homography f = forward(params_, stack_channels(channels));
    Frame out = warp_frame(input, f);
    ring_[t_ % capacity_] = out;
    ++t_;
    return {std::move(out), f};
  }

 private:
  NetworkParams params_;
  EngineConfig cfg_;
  int capacity_ = 0;
  std::vector<Frame> ring_;
  Frame bootstrap_;
  long t_ = 0;
};

struct StabilizeResult {
  std::vector<Frame> frames;  // emitted frames (cropped only in running mode)
  std::vector<Homography> transforms;
  CropRect crop;       // final/running intersection; full frame in none mode
  double seconds = 0;  // pure engine time across all steps, for throughput
};

// Whole-clip convenience wrapper. In final mode the returned frames are
// uncropped and `crop` is the rectangle valid in every frame, for the caller
// to apply. In running mode each frame is cropped to the intersection known
// so far and resized back to the input dims, as a live viewer would show it.
inline StabilizeResult stabilize_clip(const std::vector<Frame>& input,
                                      const NetworkParams& params,
                                      const EngineConfig& cfg = {}) {
  if (input.empty()) throw ConfigError("stabilize_clip: no frames");
  Engine engine(params, cfg);
  StabilizeResult res;
  res.frames.reserve(input.size());
  res.transforms.reserve(input.size());

  std::vector<std::uint8_t> all_valid;
  const int w = input[0].width, h = input[0].height;
  for (std::size_t i = 0; i < input.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Engine::StepResult sr = engine.step(input[i]);
    res.seconds += std::chrono::duration<double>(
                       std::chrono::steady_clock::now() - t0)
                       .count();
    res.transforms.push_back(sr.transform);

    if (cfg.crop == CropMode::kRunning) {
      if (all_valid.empty()) all_valid = sr.stabilized.mask;
      else
        for (std::size_t k = 0; k < all_valid.size(); ++k)
          all_valid[k] = all_valid[k] & sr.stabilized.mask[k];
      Frame probe(w, h);
      probe.mask = all_valid;
      res.crop = valid_crop({&probe});
      if (res.crop.width == w && res.crop.height == h) {
        res.frames.push_back(std::move(sr.stabilized));
      } else {
        res.frames.push_back(
            resize(apply_crop(sr.stabilized, res.crop), w, h));
      }
    } else {
      res.frames.push_back(std::move(sr.stabilized));
    }
  }

  if (cfg.crop == CropMode::kFinal) {
    std::vector<const Frame*> ptrs;
    for (const Frame& f : res.frames) ptrs.push_back(&f);
    res.crop = valid_crop(ptrs);
  } else if (cfg.crop == CropMode::kNone) {
    res.crop = {0, 0, w, h};
  }
  return res;
}

}  // namespace stabkit
