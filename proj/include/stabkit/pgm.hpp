#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "stabkit/common.hpp"
#include "stabkit/image.hpp"

namespace stabkit {

// Binary PGM (P5), 8-bit. Intensities quantize as round(v * 255).
inline void write_pgm_stream(std::ostream& os, const Frame& f) {
  os << "P5\n" << f.width << " " << f.height << "\n255\n";
  std::vector<std::uint8_t> buf(f.size());
  for (std::size_t i = 0; i < f.size(); ++i) {
    const double v = std::clamp(f.data[i], 0.0, 1.0);
    buf[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  os.write(reinterpret_cast<const char*>(buf.data()),
           static_cast<std::streamsize>(buf.size()));
}

inline void write_pgm(const std::string& path, const Frame& f) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("write_pgm: cannot open " + path);
  write_pgm_stream(os, f);
  if (!os) throw IoError("write_pgm: short write to " + path);
}

namespace detail {

// Reads one whitespace-delimited token, skipping '#' comments.
inline int pgm_next_int(std::istream& is, const std::string& path) {
  int c = is.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = is.get();
    } else if (std::isspace(c)) {
      c = is.get();
    } else {
      break;
    }
  }
  if (c == EOF || !std::isdigit(c))
    throw IoError("read_pgm: malformed header in " + path);
  int v = 0;
  while (c != EOF && std::isdigit(c)) {
    v = v * 10 + (c - '0');
    c = is.get();
  }
  return v;
}

}  // namespace detail

inline Frame read_pgm_stream(std::istream& is, const std::string& path) {
  char magic[2] = {0, 0};
  is.read(magic, 2);
  if (!is || magic[0] != 'P' || magic[1] != '5')
    throw IoError("read_pgm: not a binary PGM: " + path);
  const int w = detail::pgm_next_int(is, path);
  const int h = detail::pgm_next_int(is, path);
  const int maxval = detail::pgm_next_int(is, path);
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255)
    throw IoError("read_pgm: unsupported header in " + path);
  // Exactly one whitespace byte separates the header from the raster.
  Frame f(w, h);
  std::vector<std::uint8_t> buf(f.size());
  is.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(buf.size()));
  if (is.gcount() != static_cast<std::streamsize>(buf.size()))
    throw IoError("read_pgm: truncated raster in " + path);
  const double scale = 1.0 / maxval;
  for (std::size_t i = 0; i < f.size(); ++i) f.data[i] = buf[i] * scale;
  return f;
}

inline Frame read_pgm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("read_pgm: cannot open " + path);
  return read_pgm_stream(is, path);
}

inline std::string frame_file_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%06d.pgm", index);
  return buf;
}

// A sequence is a directory of zero-padded frames plus sequence.json with
// fps, dims, and frame count.
inline void write_sequence(const std::string& dir,
                           const std::vector<Frame>& frames, double fps) {
  if (frames.empty()) throw ConfigError("write_sequence: no frames");
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < frames.size(); ++i)
    write_pgm(dir + "/" + frame_file_name(static_cast<int>(i)), frames[i]);
  nlohmann::json j;
  j["fps"] = fps;
  j["width"] = frames[0].width;
  j["height"] = frames[0].height;
  j["frames"] = frames.size();
  std::ofstream os(dir + "/sequence.json");
  if (!os) throw IoError("write_sequence: cannot write manifest in " + dir);
  os << j.dump(2) << "\n";
}

struct Sequence {
  std::vector<Frame> frames;
  double fps = 30.0;
};

inline Sequence load_sequence(const std::string& dir) {
  std::ifstream is(dir + "/sequence.json");
  if (!is) throw IoError("load_sequence: missing manifest in " + dir);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("load_sequence: bad manifest in " + dir + ": " + e.what());
  }
  Sequence seq;
  seq.fps = j.value("fps", 30.0);
  const std::size_t n = j.at("frames").get<std::size_t>();
  seq.frames.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Frame f = read_pgm(dir + "/" + frame_file_name(static_cast<int>(i)));
    if (f.width != j.at("width").get<int>() ||
        f.height != j.at("height").get<int>())
      throw IoError("load_sequence: frame dims disagree with manifest");
    seq.frames.push_back(std::move(f));
  }
  return seq;
}

}  // namespace stabkit
