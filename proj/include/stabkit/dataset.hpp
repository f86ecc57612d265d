#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "stabkit/binio.hpp"
#include "stabkit/common.hpp"
#include "stabkit/datagen.hpp"
#include "stabkit/pgm.hpp"

namespace stabkit {

// On-disk clip layout:
//   <clip>/steady/, <clip>/unsteady/   PGM sequences (see pgm.hpp)
//   <clip>/ground_truth.json           camera paths, return transforms,
//                                      correspondences
//   <clip>/flow/flow_%06d.bin          scene flow t-1 -> t for t >= 1
// A dataset directory holds clip_%06d subdirectories plus manifest.json.

namespace detail {

inline std::string flow_file_name(int t) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "flow_%06d.bin", t);
  return buf;
}

inline void write_flow(const std::string& path, const FlowField& flow) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  put_u32(os, static_cast<std::uint32_t>(flow.width));
  put_u32(os, static_cast<std::uint32_t>(flow.height));
  put_f64_array(os, flow.dx);
  put_f64_array(os, flow.dy);
  os.write(reinterpret_cast<const char*>(flow.mask.data()),
           static_cast<std::streamsize>(flow.mask.size()));
  if (!os) throw IoError("write to '" + path + "' failed");
}

inline FlowField read_flow(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open flow file '" + path + "'");
  const int w = static_cast<int>(get_u32(is));
  const int h = static_cast<int>(get_u32(is));
  if (w <= 0 || h <= 0 || w > 1 << 16 || h > 1 << 16)
    throw IoError("flow file '" + path + "' has implausible dims");
  FlowField flow(w, h);
  get_f64_array(is, flow.size(), flow.dx);
  get_f64_array(is, flow.size(), flow.dy);
  if (!is.read(reinterpret_cast<char*>(flow.mask.data()),
               static_cast<std::streamsize>(flow.mask.size())))
    throw IoError("flow file '" + path + "' truncated");
  return flow;
}

inline nlohmann::json homography_to_json(const Homography& g) {
  return nlohmann::json(g.h);
}

inline Homography homography_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 8)
    throw IoError("transform JSON entry must be an array of 8 numbers");
  Homography g;
  for (int k = 0; k < 8; ++k) g.h[k] = j[k].get<double>();
  return g;
}

}  // namespace detail

inline void save_clip(const std::string& dir, const Clip& clip) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir + "/flow", ec);
  if (ec) throw IoError("cannot create clip directory '" + dir + "'");

  write_sequence(dir + "/steady", clip.steady, clip.fps);
  write_sequence(dir + "/unsteady", clip.unsteady, clip.fps);

  nlohmann::json j;
  j["fps"] = clip.fps;
  j["width"] = clip.width;
  j["height"] = clip.height;
  j["steady_cams"] = nlohmann::json::array();
  j["unsteady_cams"] = nlohmann::json::array();
  j["gt"] = nlohmann::json::array();
  j["matches"] = nlohmann::json::array();
  for (std::size_t t = 0; t < clip.steady.size(); ++t) {
    j["steady_cams"].push_back(detail::homography_to_json(clip.steady_cams[t]));
    j["unsteady_cams"].push_back(
        detail::homography_to_json(clip.unsteady_cams[t]));
    j["gt"].push_back(detail::homography_to_json(clip.gt[t]));
    nlohmann::json frame_matches = nlohmann::json::array();
    for (const Match& m : clip.matches[t])
      frame_matches.push_back({m.src.x, m.src.y, m.dst.x, m.dst.y, m.score});
    j["matches"].push_back(std::move(frame_matches));
  }
  std::ofstream os(dir + "/ground_truth.json", std::ios::trunc);
  if (!os) throw IoError("cannot write '" + dir + "/ground_truth.json'");
  os << j.dump(1) << "\n";

  for (std::size_t t = 1; t < clip.flow.size(); ++t)
    detail::write_flow(dir + "/flow/" + detail::flow_file_name(static_cast<int>(t)),
                       clip.flow[t]);
}

inline Clip load_clip(const std::string& dir) {
  Clip clip;
  const Sequence steady = load_sequence(dir + "/steady");
  const Sequence unsteady = load_sequence(dir + "/unsteady");
  if (steady.frames.size() != unsteady.frames.size())
    throw IoError("clip '" + dir + "': steady/unsteady frame counts differ");
  if (steady.frames.empty()) throw IoError("clip '" + dir + "' is empty");
  clip.steady = steady.frames;
  clip.unsteady = unsteady.frames;
  clip.fps = steady.fps;
  clip.width = clip.steady[0].width;
  clip.height = clip.steady[0].height;

  std::ifstream is(dir + "/ground_truth.json");
  if (!is) throw IoError("cannot open '" + dir + "/ground_truth.json'");
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("clip '" + dir + "': bad ground_truth.json: " + e.what());
  }
  const std::size_t n = clip.steady.size();
  try {
    if (j.at("steady_cams").size() != n || j.at("unsteady_cams").size() != n ||
        j.at("gt").size() != n || j.at("matches").size() != n)
      throw IoError("clip '" + dir +
                    "': ground truth length does not match frame count");
    for (std::size_t t = 0; t < n; ++t) {
      clip.steady_cams.push_back(
          detail::homography_from_json(j["steady_cams"][t]));
      clip.unsteady_cams.push_back(
          detail::homography_from_json(j["unsteady_cams"][t]));
      clip.gt.push_back(detail::homography_from_json(j["gt"][t]));
      CorrespondenceSet set;
      for (const nlohmann::json& m : j["matches"][t]) {
        if (!m.is_array() || m.size() != 5)
          throw IoError("clip '" + dir + "': bad match entry");
        set.push_back({{m[0].get<double>(), m[1].get<double>()},
                       {m[2].get<double>(), m[3].get<double>()},
                       m[4].get<double>()});
      }
      clip.matches.push_back(std::move(set));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError("clip '" + dir + "': bad ground_truth.json: " + e.what());
  }

  clip.flow.push_back(FlowField(clip.width, clip.height));
  for (std::size_t t = 1; t < n; ++t) {
    const FlowField f = detail::read_flow(
        dir + "/flow/" + detail::flow_file_name(static_cast<int>(t)));
    if (f.width != clip.width || f.height != clip.height)
      throw IoError("clip '" + dir + "': flow dims do not match frames");
    clip.flow.push_back(f);
  }
  return clip;
}

inline std::string clip_dir_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "clip_%06d", index);
  return buf;
}

inline void save_dataset(const std::string& dir,
                         const std::vector<Clip>& clips,
                         std::uint64_t seed) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create dataset directory '" + dir + "'");
  if (clips.empty()) throw ConfigError("save_dataset: no clips");

  nlohmann::json j;
  j["clips"] = clips.size();
  j["width"] = clips[0].width;
  j["height"] = clips[0].height;
  j["fps"] = clips[0].fps;
  j["seed"] = seed;
  std::ofstream os(dir + "/manifest.json", std::ios::trunc);
  if (!os) throw IoError("cannot write '" + dir + "/manifest.json'");
  os << j.dump(1) << "\n";

  for (std::size_t i = 0; i < clips.size(); ++i)
    save_clip(dir + "/" + clip_dir_name(static_cast<int>(i)), clips[i]);
}

inline std::vector<Clip> load_dataset(const std::string& dir) {
  std::ifstream is(dir + "/manifest.json");
  if (!is) throw IoError("cannot open '" + dir + "/manifest.json'");
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("dataset '" + dir + "': bad manifest.json: " + e.what());
  }
  std::size_t count = 0;
  try {
    count = j.at("clips").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError("dataset '" + dir + "': bad manifest.json: " + e.what());
  }
  if (count == 0) throw IoError("dataset '" + dir + "' lists no clips");

  std::vector<Clip> clips;
  for (std::size_t i = 0; i < count; ++i)
    clips.push_back(load_clip(dir + "/" + clip_dir_name(static_cast<int>(i))));
  return clips;
}

}  // namespace stabkit
