#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "stabkit/binio.hpp"
#include "stabkit/common.hpp"
#include "stabkit/geometry.hpp"
#include "stabkit/image.hpp"
#include "stabkit/rng.hpp"

namespace stabkit {

// Regression network: a stack of 3x3 stride-2 convolutions (each followed by
// ReLU), global average pooling, and one linear head producing an 8-vector
// added to the identity transform. Activations are stored height-major with
// interleaved channels (HWC).
struct NetworkConfig {
  int input_width = 64;
  int input_height = 36;
  int input_channels = 6;
  std::vector<int> conv_channels = {8, 16, 32, 64, 128};
  int output_dim = 8;

  bool operator==(const NetworkConfig&) const = default;
};

struct ConvLayer {
  int in_c = 0;
  int out_c = 0;
  std::vector<double> w;  // [out_c][3][3][in_c]
  std::vector<double> b;  // [out_c]
};

struct NetworkParams {
  NetworkConfig config;
  std::vector<ConvLayer> conv;
  std::vector<double> fc_w;  // [output_dim][last_conv_channels]
  std::vector<double> fc_b;  // [output_dim]
  std::uint64_t iteration = 0;
};

// Gradient buffers shaped exactly like the parameters.
struct NetworkGradients {
  std::vector<ConvLayer> conv;
  std::vector<double> fc_w;
  std::vector<double> fc_b;
};

// Applies f(std::vector<double>&) to every parameter block in a fixed
// order: conv0.w, conv0.b, conv1.w, ..., fc.w, fc.b. The same order is used
// for flat optimizer state and for checkpoint blobs.
template <typename P, typename F>
void visit_param_blocks(P& p, F&& f) {
  for (auto& layer : p.conv) {
    f(layer.w);
    f(layer.b);
  }
  f(p.fc_w);
  f(p.fc_b);
}

template <typename P>
std::size_t param_count(const P& p) {
  std::size_t n = 0;
  visit_param_blocks(const_cast<P&>(p),
                     [&n](const std::vector<double>& blk) { n += blk.size(); });
  return n;
}

namespace detail {

inline int conv_out_extent(int in) { return (in + 1) / 2; }

inline void validate_config(const NetworkConfig& cfg) {
  if (cfg.input_width < 2 || cfg.input_height < 2)
    throw ConfigError("network: input dims too small");
  if (cfg.input_channels < 1) throw ConfigError("network: need >= 1 channel");
  if (cfg.conv_channels.empty())
    throw ConfigError("network: need >= 1 conv layer");
  if (cfg.output_dim != 8)
    throw ConfigError("network: output dim must be 8");
  int w = cfg.input_width, h = cfg.input_height;
  for (std::size_t l = 0; l < cfg.conv_channels.size(); ++l) {
    if (cfg.conv_channels[l] < 1)
      throw ConfigError("network: conv channels must be positive");
    w = conv_out_extent(w);
    h = conv_out_extent(h);
    if (w < 1 || h < 1) throw ConfigError("network: too many conv layers");
  }
}

}  // namespace detail

// Fresh parameters: conv weights are He-initialized, conv biases zero, and
// the linear head is all zeros so an untrained network outputs the identity
// transform exactly.
inline NetworkParams make_network(const NetworkConfig& cfg, Rng& rng) {
  detail::validate_config(cfg);
  NetworkParams p;
  p.config = cfg;
  int in_c = cfg.input_channels;
  for (int out_c : cfg.conv_channels) {
    ConvLayer layer;
    layer.in_c = in_c;
    layer.out_c = out_c;
    layer.w.resize(static_cast<std::size_t>(out_c) * 9 * in_c);
    layer.b.assign(out_c, 0.0);
    const double stddev = std::sqrt(2.0 / (9.0 * in_c));
    for (double& v : layer.w) v = rng.normal() * stddev;
    p.conv.push_back(std::move(layer));
    in_c = out_c;
  }
  p.fc_w.assign(static_cast<std::size_t>(cfg.output_dim) * in_c, 0.0);
  p.fc_b.assign(cfg.output_dim, 0.0);
  return p;
}

inline NetworkGradients make_gradients(const NetworkConfig& cfg) {
  detail::validate_config(cfg);
  NetworkGradients g;
  int in_c = cfg.input_channels;
  for (int out_c : cfg.conv_channels) {
    ConvLayer layer;
    layer.in_c = in_c;
    layer.out_c = out_c;
    layer.w.assign(static_cast<std::size_t>(out_c) * 9 * in_c, 0.0);
    layer.b.assign(out_c, 0.0);
    g.conv.push_back(std::move(layer));
    in_c = out_c;
  }
  g.fc_w.assign(static_cast<std::size_t>(8) * in_c, 0.0);
  g.fc_b.assign(8, 0.0);
  return g;
}

inline void zero_gradients(NetworkGradients& g) {
  visit_param_blocks(g, [](std::vector<double>& blk) {
    std::fill(blk.begin(), blk.end(), 0.0);
  });
}

// Everything the backward pass needs, plus the pre-activation values whose
// signs determine the active linear region of the network.
struct ForwardCache {
  std::vector<std::vector<double>> activations;  // [L+1]: layer inputs, HWC
  std::vector<std::vector<double>> preacts;      // [L]: conv outputs pre-ReLU
  std::vector<int> widths;                       // [L+1] spatial dims of
  std::vector<int> heights;                      //       each activation
  std::vector<double> gap;                       // pooled features
  std::array<double, 8> delta{};                 // head output
};

// History channels are drawn this many frames before the current one
// (oldest first); the sixth channel is the current frame itself.
inline constexpr std::array<int, 5> kHistoryOffsets = {-30, -24, -18, -12, -6};

// Interleaves equal-sized frames into one HWC buffer, channel c taken from
// frames[c].
inline std::vector<double> stack_channels(
    const std::vector<const Frame*>& frames) {
  if (frames.empty()) throw ConfigError("stack_channels: no frames");
  const int w = frames[0]->width, h = frames[0]->height;
  const int c = static_cast<int>(frames.size());
  for (const Frame* f : frames)
    if (f->width != w || f->height != h)
      throw ConfigError("stack_channels: frame dims differ");
  std::vector<double> out(static_cast<std::size_t>(w) * h * c);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t base = (static_cast<std::size_t>(y) * w + x) * c;
      for (int k = 0; k < c; ++k) out[base + k] = frames[k]->at(x, y);
    }
  return out;
}

// Runs the network on one stacked input; returns the predicted transform
// (identity plus the head's delta). Pass a cache to enable backward().
inline Homography forward(const NetworkParams& p,
                          const std::vector<double>& input,
                          ForwardCache* cache = nullptr) {
  const NetworkConfig& cfg = p.config;
  const std::size_t expect = static_cast<std::size_t>(cfg.input_width) *
                             cfg.input_height * cfg.input_channels;
  if (input.size() != expect)
    throw ConfigError("forward: input size does not match network config");

  ForwardCache local;
  ForwardCache& c = cache ? *cache : local;
  c.activations.clear();
  c.preacts.clear();
  c.widths.clear();
  c.heights.clear();

  c.activations.push_back(input);
  c.widths.push_back(cfg.input_width);
  c.heights.push_back(cfg.input_height);

  for (const ConvLayer& layer : p.conv) {
    const std::vector<double>& a = c.activations.back();
    const int wi = c.widths.back(), hi = c.heights.back();
    const int wo = detail::conv_out_extent(wi);
    const int ho = detail::conv_out_extent(hi);
    const int ci = layer.in_c, co = layer.out_c;

    // Transpose the weights tap-major with contiguous output channels so the
    // hot loop is a fused multiply-add over a contiguous span.
    std::vector<double> wt(static_cast<std::size_t>(9) * ci * co);
    for (int oc = 0; oc < co; ++oc)
      for (int tap = 0; tap < 9; ++tap)
        for (int ic = 0; ic < ci; ++ic)
          wt[(static_cast<std::size_t>(tap) * ci + ic) * co + oc] =
              layer.w[(static_cast<std::size_t>(oc) * 9 + tap) * ci + ic];

    std::vector<double> pre(static_cast<std::size_t>(wo) * ho * co);
    std::vector<double> post(pre.size());
    for (int oy = 0; oy < ho; ++oy) {
      double* out_row = &pre[static_cast<std::size_t>(oy) * wo * co];
      for (int ox = 0; ox < wo; ++ox)
        for (int oc = 0; oc < co; ++oc) out_row[ox * co + oc] = layer.b[oc];
      for (int ky = 0; ky < 3; ++ky) {
        const int iy = 2 * oy - 1 + ky;
        if (iy < 0 || iy >= hi) continue;
        const double* in_row = &a[static_cast<std::size_t>(iy) * wi * ci];
        for (int kx = 0; kx < 3; ++kx) {
          // ix = 2*ox - 1 + kx must stay inside [0, wi).
          const int ox_lo = kx == 0 ? 1 : 0;
          const int ox_hi = std::min(wo - 1, (wi - kx) / 2);
          const double* wt_tap =
              &wt[static_cast<std::size_t>(ky * 3 + kx) * ci * co];
          for (int ox = ox_lo; ox <= ox_hi; ++ox) {
            const double* in_px =
                in_row + static_cast<std::size_t>(2 * ox - 1 + kx) * ci;
            double* out_px = out_row + static_cast<std::size_t>(ox) * co;
            for (int ic = 0; ic < ci; ++ic) {
              const double v = in_px[ic];
              const double* w_ic = wt_tap + static_cast<std::size_t>(ic) * co;
              for (int oc = 0; oc < co; ++oc) out_px[oc] += w_ic[oc] * v;
            }
          }
        }
      }
    }
    for (std::size_t i = 0; i < pre.size(); ++i)
      post[i] = pre[i] > 0.0 ? pre[i] : 0.0;
    c.preacts.push_back(std::move(pre));
    c.activations.push_back(std::move(post));
    c.widths.push_back(wo);
    c.heights.push_back(ho);
  }

  // Global average pool over the last activation.
  const std::vector<double>& last = c.activations.back();
  const int lw = c.widths.back(), lh = c.heights.back();
  const int lc = p.conv.back().out_c;
  c.gap.assign(lc, 0.0);
  for (int y = 0; y < lh; ++y)
    for (int x = 0; x < lw; ++x) {
      const double* px = &last[(static_cast<std::size_t>(y) * lw + x) * lc];
      for (int k = 0; k < lc; ++k) c.gap[k] += px[k];
    }
  const double inv_n = 1.0 / (static_cast<double>(lw) * lh);
  for (double& v : c.gap) v *= inv_n;

  for (int k = 0; k < 8; ++k) {
    double acc = p.fc_b[k];
    const double* row = &p.fc_w[static_cast<std::size_t>(k) * lc];
    for (int j = 0; j < lc; ++j) acc += row[j] * c.gap[j];
    c.delta[k] = acc;
  }

  Homography out = Homography::identity();
  for (int k = 0; k < 8; ++k) out.h[k] += c.delta[k];
  return out;
}

// Accumulates parameter gradients given dL/d(delta) for the forward pass
// recorded in the cache. Since the predicted transform is identity + delta,
// dL/d(delta) equals dL/d(transform entries).
inline void backward(const NetworkParams& p, const ForwardCache& cache,
                     const std::array<double, 8>& ddelta,
                     NetworkGradients& grads) {
  if (cache.preacts.size() != p.conv.size() || cache.gap.empty())
    throw ConfigError("backward: cache does not match a completed forward");
  const int lc = p.conv.back().out_c;
  const int lw = cache.widths.back(), lh = cache.heights.back();

  // Head.
  std::vector<double> dgap(lc, 0.0);
  for (int k = 0; k < 8; ++k) {
    grads.fc_b[k] += ddelta[k];
    const double* row = &p.fc_w[static_cast<std::size_t>(k) * lc];
    double* grow = &grads.fc_w[static_cast<std::size_t>(k) * lc];
    for (int j = 0; j < lc; ++j) {
      grow[j] += ddelta[k] * cache.gap[j];
      dgap[j] += ddelta[k] * row[j];
    }
  }

  // Pooling spreads the gradient uniformly.
  std::vector<double> dact(static_cast<std::size_t>(lw) * lh * lc);
  const double inv_n = 1.0 / (static_cast<double>(lw) * lh);
  for (int y = 0; y < lh; ++y)
    for (int x = 0; x < lw; ++x) {
      double* px = &dact[(static_cast<std::size_t>(y) * lw + x) * lc];
      for (int k = 0; k < lc; ++k) px[k] = dgap[k] * inv_n;
    }

  // Conv layers, last to first.
  for (int l = static_cast<int>(p.conv.size()) - 1; l >= 0; --l) {
    const ConvLayer& layer = p.conv[l];
    ConvLayer& glayer = grads.conv[l];
    const std::vector<double>& a = cache.activations[l];
    const std::vector<double>& pre = cache.preacts[l];
    const int wi = cache.widths[l], hi = cache.heights[l];
    const int wo = cache.widths[l + 1], ho = cache.heights[l + 1];
    const int ci = layer.in_c, co = layer.out_c;

    std::vector<double> din(static_cast<std::size_t>(wi) * hi * ci, 0.0);
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox) {
        const std::size_t opix = (static_cast<std::size_t>(oy) * wo + ox) * co;
        for (int oc = 0; oc < co; ++oc) {
          double dz = dact[opix + oc];
          if (pre[opix + oc] <= 0.0 || dz == 0.0) continue;
          glayer.b[oc] += dz;
          const double* wk = &layer.w[static_cast<std::size_t>(oc) * 9 * ci];
          double* gwk = &glayer.w[static_cast<std::size_t>(oc) * 9 * ci];
          for (int ky = 0; ky < 3; ++ky) {
            const int iy = 2 * oy - 1 + ky;
            if (iy < 0 || iy >= hi) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const int ix = 2 * ox - 1 + kx;
              if (ix < 0 || ix >= wi) continue;
              const std::size_t ipix =
                  (static_cast<std::size_t>(iy) * wi + ix) * ci;
              const std::size_t koff = static_cast<std::size_t>(ky * 3 + kx) * ci;
              for (int ic = 0; ic < ci; ++ic) {
                gwk[koff + ic] += dz * a[ipix + ic];
                din[ipix + ic] += dz * wk[koff + ic];
              }
            }
          }
        }
      }
    dact = std::move(din);
  }
}

// ---------------------------------------------------------------------------
// Checkpoints. Binary layout, all integers little-endian:
//   "STBKCKPT" magic, u32 version, u64 json-length, config JSON,
//   u64 iteration, u64 blob count, then per blob: u64 name length, name,
//   u64 value count, values as little-endian IEEE doubles, u64 FNV-1a
//   checksum of the value bytes. A trailing u8 flags optional optimizer
//   state (step + first/second moment blobs in parameter-block order).
// ---------------------------------------------------------------------------

struct AdamState {
  std::uint64_t step = 0;
  std::vector<double> m;
  std::vector<double> v;
};

struct Checkpoint {
  NetworkParams params;
  std::optional<AdamState> adam;
};

namespace detail {

constexpr char kCkptMagic[8] = {'S', 'T', 'B', 'K', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCkptVersion = 1;

inline void put_blob(std::ostream& os, const std::string& name,
                     const std::vector<double>& values) {
  put_u64(os, name.size());
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  put_u64(os, values.size());
  std::vector<unsigned char> bytes(values.size() * 8);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::uint64_t bits = std::bit_cast<std::uint64_t>(values[i]);
    for (int k = 0; k < 8; ++k)
      bytes[i * 8 + k] = static_cast<unsigned char>(bits >> (8 * k));
  }
  os.write(reinterpret_cast<const char*>(bytes.data()),
           static_cast<std::streamsize>(bytes.size()));
  put_u64(os, fnv1a(bytes.data(), bytes.size()));
}

inline void get_blob(std::istream& is, const std::string& expect_name,
                     std::size_t expect_count, std::vector<double>& out) {
  const std::uint64_t name_len = get_u64(is);
  if (name_len > 256) throw IoError("checkpoint: implausible blob name");
  std::string name(name_len, '\0');
  if (!is.read(name.data(), static_cast<std::streamsize>(name_len)))
    throw IoError("checkpoint: truncated file");
  if (name != expect_name)
    throw IoError("checkpoint: expected blob '" + expect_name + "', found '" +
                  name + "'");
  const std::uint64_t count = get_u64(is);
  if (count != expect_count)
    throw IoError("checkpoint: blob '" + expect_name + "' has " +
                  std::to_string(count) + " values, expected " +
                  std::to_string(expect_count));
  std::vector<unsigned char> bytes(count * 8);
  if (!is.read(reinterpret_cast<char*>(bytes.data()),
               static_cast<std::streamsize>(bytes.size())))
    throw IoError("checkpoint: truncated blob '" + expect_name + "'");
  const std::uint64_t check = get_u64(is);
  if (check != fnv1a(bytes.data(), bytes.size()))
    throw IoError("checkpoint: blob '" + expect_name + "' checksum mismatch");
  out.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint64_t bits = 0;
    for (int k = 0; k < 8; ++k)
      bits |= static_cast<std::uint64_t>(bytes[i * 8 + k]) << (8 * k);
    out[i] = std::bit_cast<double>(bits);
  }
}

inline std::vector<std::string> blob_names(const NetworkConfig& cfg) {
  std::vector<std::string> names;
  for (std::size_t l = 0; l < cfg.conv_channels.size(); ++l) {
    names.push_back("conv" + std::to_string(l) + ".w");
    names.push_back("conv" + std::to_string(l) + ".b");
  }
  names.push_back("fc.w");
  names.push_back("fc.b");
  return names;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const NetworkParams& p,
                            const AdamState* adam = nullptr) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("checkpoint: cannot open '" + path + "' for writing");
  os.write(detail::kCkptMagic, 8);
  detail::put_u32(os, detail::kCkptVersion);

  nlohmann::json j;
  j["input_width"] = p.config.input_width;
  j["input_height"] = p.config.input_height;
  j["input_channels"] = p.config.input_channels;
  j["conv_channels"] = p.config.conv_channels;
  j["output_dim"] = p.config.output_dim;
  const std::string cfg = j.dump();
  detail::put_u64(os, cfg.size());
  os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));

  detail::put_u64(os, p.iteration);

  const std::vector<std::string> names = detail::blob_names(p.config);
  detail::put_u64(os, names.size());
  std::size_t bi = 0;
  visit_param_blocks(const_cast<NetworkParams&>(p),
                     [&](const std::vector<double>& blk) {
                       detail::put_blob(os, names[bi++], blk);
                     });

  if (adam) {
    os.put(1);
    detail::put_u64(os, adam->step);
    detail::put_blob(os, "adam.m", adam->m);
    detail::put_blob(os, "adam.v", adam->v);
  } else {
    os.put(0);
  }
  if (!os) throw IoError("checkpoint: write to '" + path + "' failed");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("checkpoint: cannot open '" + path + "'");
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, detail::kCkptMagic, 8) != 0)
    throw IoError("checkpoint: bad magic in '" + path + "'");
  const std::uint32_t version = detail::get_u32(is);
  if (version != detail::kCkptVersion)
    throw IoError("checkpoint: unsupported version " + std::to_string(version));

  const std::uint64_t json_len = detail::get_u64(is);
  if (json_len > (1u << 20)) throw IoError("checkpoint: implausible header");
  std::string cfg_text(json_len, '\0');
  if (!is.read(cfg_text.data(), static_cast<std::streamsize>(json_len)))
    throw IoError("checkpoint: truncated file");

  NetworkConfig cfg;
  try {
    const nlohmann::json j = nlohmann::json::parse(cfg_text);
    cfg.input_width = j.at("input_width").get<int>();
    cfg.input_height = j.at("input_height").get<int>();
    cfg.input_channels = j.at("input_channels").get<int>();
    cfg.conv_channels = j.at("conv_channels").get<std::vector<int>>();
    cfg.output_dim = j.at("output_dim").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("checkpoint: bad config JSON: ") + e.what());
  }
  try {
    detail::validate_config(cfg);
  } catch (const ConfigError& e) {
    throw IoError(std::string("checkpoint: invalid config: ") + e.what());
  }

  Checkpoint ck;
  // Sizes the blocks from the stored config; get_blob then enforces them.
  Rng dummy(0);
  ck.params = make_network(cfg, dummy);
  ck.params.iteration = detail::get_u64(is);

  const std::uint64_t n_blobs = detail::get_u64(is);
  const std::vector<std::string> names = detail::blob_names(cfg);
  if (n_blobs != names.size())
    throw IoError("checkpoint: expected " + std::to_string(names.size()) +
                  " blobs, found " + std::to_string(n_blobs));
  std::size_t bi = 0;
  visit_param_blocks(ck.params, [&](std::vector<double>& blk) {
    std::vector<double> loaded;
    detail::get_blob(is, names[bi], blk.size(), loaded);
    blk = std::move(loaded);
    ++bi;
  });

  const int flag = is.get();
  if (flag == std::istream::traits_type::eof())
    throw IoError("checkpoint: truncated file");
  if (flag == 1) {
    AdamState adam;
    adam.step = detail::get_u64(is);
    const std::size_t n = param_count(ck.params);
    detail::get_blob(is, "adam.m", n, adam.m);
    detail::get_blob(is, "adam.v", n, adam.v);
    ck.adam = std::move(adam);
  } else if (flag != 0) {
    throw IoError("checkpoint: bad optimizer flag");
  }
  return ck;
}

}  // namespace stabkit
