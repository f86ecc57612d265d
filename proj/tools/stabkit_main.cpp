// stabkit command-line tool: synthetic data generation, training,
// stabilization, and evaluation. Every command is deterministic for a given
// seed; wall-clock numbers live only in the run manifests.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "stabkit/dataset.hpp"
#include "stabkit/engine.hpp"
#include "stabkit/metrics.hpp"
#include "stabkit/pgm.hpp"
#include "stabkit/trainer.hpp"

namespace {

constexpr const char* kVersion = "0.1.0";

using nlohmann::json;
using stabkit::Clip;
using stabkit::Frame;
using stabkit::Homography;

double now_seconds() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

// The tool is sequential; the env var exists so scripted callers can pin a
// worker budget uniformly across tools. Anything below one worker is a
// configuration mistake worth failing loudly on.
void check_threads_env() {
  const char* env = std::getenv("STABKIT_THREADS");
  if (!env || !*env) return;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v < 1)
    throw stabkit::ConfigError(
        "STABKIT_THREADS must be a positive integer, got '" +
        std::string(env) + "'");
}

void write_run_manifest(const std::string& dir, const std::string& command,
                        const json& parameters, double seconds) {
  json m;
  m["command"] = command;
  m["version"] = kVersion;
  m["parameters"] = parameters;
  m["wall_clock_seconds"] = seconds;
  std::filesystem::create_directories(dir);
  const std::string path =
      (std::filesystem::path(dir) / "run_manifest.json").string();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw stabkit::IoError("cannot write " + path);
  os << m.dump(1) << "\n";
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

struct GenDataArgs {
  std::string out;
  int clips = 16;
  int frames = 120;
  std::string dims = "96x54";
  double fps = 30.0;
  double jitter_amp = 1.0;
  std::uint64_t seed = 1;
};

std::pair<int, int> parse_dims(const std::string& dims) {
  const std::size_t x = dims.find('x');
  if (x == std::string::npos || x == 0 || x + 1 >= dims.size())
    throw stabkit::ConfigError("--dims must look like 96x54, got '" + dims +
                               "'");
  try {
    return {std::stoi(dims.substr(0, x)), std::stoi(dims.substr(x + 1))};
  } catch (const std::exception&) {
    throw stabkit::ConfigError("--dims must look like 96x54, got '" + dims +
                               "'");
  }
}

int cmd_gen_data(const GenDataArgs& a) {
  const double t0 = now_seconds();
  const auto [w, h] = parse_dims(a.dims);
  stabkit::ClipParams p;
  p.frames = a.frames;
  p.width = w;
  p.height = h;
  p.fps = a.fps;
  p.jitter_translation_amp *= a.jitter_amp;
  p.jitter_rotation_amp *= a.jitter_amp;

  std::vector<Clip> clips;
  clips.reserve(static_cast<std::size_t>(a.clips));
  for (int i = 0; i < a.clips; ++i) {
    stabkit::Rng rng =
        stabkit::Rng(a.seed).split(0xDA7A0000ull + static_cast<std::uint64_t>(i));
    clips.push_back(stabkit::make_clip(p, rng));
  }
  stabkit::save_dataset(a.out, clips, a.seed);

  json params = {{"out", a.out},     {"clips", a.clips},
                 {"frames", a.frames}, {"dims", a.dims},
                 {"fps", a.fps},     {"jitter_amp", a.jitter_amp},
                 {"seed", a.seed}};
  write_run_manifest(a.out, "gen-data", params, now_seconds() - t0);
  std::cout << "wrote " << a.clips << " clips (" << a.frames << " frames, "
            << w << "x" << h << ") to " << a.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::string out;
  std::string log;
  std::string resume;
  stabkit::TrainerConfig cfg;
};

int cmd_train(TrainArgs& a) {
  const double t0 = now_seconds();
  a.cfg.checkpoint_path = a.out;
  a.cfg.log_path = a.log.empty() ? a.out + ".csv" : a.log;

  const std::vector<Clip> clips = stabkit::load_dataset(a.data);

  stabkit::Checkpoint resume_ckpt;
  const stabkit::Checkpoint* resume = nullptr;
  if (!a.resume.empty()) {
    resume_ckpt = stabkit::load_checkpoint(a.resume);
    resume = &resume_ckpt;
  }

  const stabkit::TrainResult res = stabkit::train(clips, a.cfg, resume);

  json params = {{"data", a.data},
                 {"out", a.out},
                 {"log", a.cfg.log_path},
                 {"resume", a.resume},
                 {"batch", a.cfg.batch_size},
                 {"lr", a.cfg.learning_rate},
                 {"decay_factor", a.cfg.lr_decay_factor},
                 {"decay_every", a.cfg.lr_decay_interval},
                 {"max_iter", a.cfg.max_iterations},
                 {"clip_norm", a.cfg.gradient_clip_norm},
                 {"alpha", a.cfg.weights.alpha},
                 {"lambda", a.cfg.weights.lambda},
                 {"checkpoint_every", a.cfg.checkpoint_interval},
                 {"seed", a.cfg.seed}};
  json extra = {{"iterations", res.iterations},
                {"gradient_clip_events", res.clip_events}};
  if (!res.history.empty()) {
    extra["first_total_loss"] = res.history.front().total;
    extra["final_total_loss"] = res.history.back().total;
  }
  params["result"] = extra;
  write_run_manifest(
      std::filesystem::path(a.out).parent_path().string().empty()
          ? "."
          : std::filesystem::path(a.out).parent_path().string(),
      "train", params, now_seconds() - t0);

  std::cout << "trained " << res.iterations << " iterations";
  if (!res.history.empty())
    std::cout << ", total loss " << res.history.front().total << " -> "
              << res.history.back().total;
  std::cout << "\ncheckpoint: " << a.out << "\nlog: " << a.cfg.log_path
            << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// stabilize
// ---------------------------------------------------------------------------

struct StabilizeArgs {
  std::string ckpt;
  std::string in;
  std::string out;
  std::string crop = "final";
  std::string offsets = "inference";
  bool stream = false;
  bool crop_given = false;
};

stabkit::CropMode parse_crop(const std::string& s) {
  if (s == "none") return stabkit::CropMode::kNone;
  if (s == "running") return stabkit::CropMode::kRunning;
  if (s == "final") return stabkit::CropMode::kFinal;
  throw stabkit::ConfigError("--crop must be final, running, or none");
}

stabkit::EngineConfig engine_config(const StabilizeArgs& a,
                                    stabkit::CropMode crop) {
  stabkit::EngineConfig ecfg;
  if (a.offsets == "training") {
    ecfg.offsets = stabkit::training_offsets();
    ecfg.bootstrap_count = -ecfg.offsets.front();
  } else if (a.offsets != "inference") {
    throw stabkit::ConfigError("--offsets must be inference or training");
  }
  ecfg.crop = crop;
  return ecfg;
}

json transforms_json(const std::vector<Homography>& transforms,
                     const stabkit::CropRect& crop) {
  json j;
  j["crop"] = {{"x0", crop.x0},
               {"y0", crop.y0},
               {"width", crop.width},
               {"height", crop.height}};
  json arr = json::array();
  for (const Homography& t : transforms)
    arr.push_back(stabkit::detail::homography_to_json(t));
  j["transforms"] = arr;
  return j;
}

int cmd_stabilize_stream(const StabilizeArgs& a) {
  // Final crop needs the whole clip, so a live stream defaults to no crop.
  const stabkit::CropMode crop =
      a.crop_given ? parse_crop(a.crop) : stabkit::CropMode::kNone;
  if (crop == stabkit::CropMode::kFinal)
    throw stabkit::ConfigError(
        "--stream cannot use --crop final; use running or none");

  const stabkit::Checkpoint ckpt = stabkit::load_checkpoint(a.ckpt);
  stabkit::Engine engine(ckpt.params, engine_config(a, crop));

  std::vector<std::uint8_t> all_valid;
  while (std::cin.peek() != EOF) {
    const Frame in = stabkit::read_pgm_stream(std::cin, "<stdin>");
    stabkit::Engine::StepResult sr = engine.step(in);
    if (crop == stabkit::CropMode::kRunning) {
      if (all_valid.empty())
        all_valid = sr.stabilized.mask;
      else
        for (std::size_t k = 0; k < all_valid.size(); ++k)
          all_valid[k] = all_valid[k] & sr.stabilized.mask[k];
      Frame probe(in.width, in.height);
      probe.mask = all_valid;
      const stabkit::CropRect rect = stabkit::valid_crop({&probe});
      if (rect.width != in.width || rect.height != in.height)
        sr.stabilized = stabkit::resize(
            stabkit::apply_crop(sr.stabilized, rect), in.width, in.height);
    }
    stabkit::write_pgm_stream(std::cout, sr.stabilized);
    std::cout.flush();  // emit frame k before touching input k+1
  }
  return 0;
}

int cmd_stabilize(const StabilizeArgs& a) {
  if (a.stream) return cmd_stabilize_stream(a);
  if (a.in.empty() || a.out.empty())
    throw stabkit::ConfigError("stabilize needs --in and --out (or --stream)");

  const double t0 = now_seconds();
  const stabkit::CropMode crop = parse_crop(a.crop);
  const stabkit::Checkpoint ckpt = stabkit::load_checkpoint(a.ckpt);
  const stabkit::Sequence seq = stabkit::load_sequence(a.in);

  const stabkit::StabilizeResult res =
      stabkit::stabilize_clip(seq.frames, ckpt.params, engine_config(a, crop));

  std::vector<Frame> out_frames;
  out_frames.reserve(res.frames.size());
  if (crop == stabkit::CropMode::kFinal &&
      (res.crop.width != seq.frames[0].width ||
       res.crop.height != seq.frames[0].height)) {
    for (const Frame& f : res.frames)
      out_frames.push_back(stabkit::apply_crop(f, res.crop));
  } else {
    out_frames = res.frames;
  }
  stabkit::write_sequence(a.out, out_frames, seq.fps);

  const std::string tpath =
      (std::filesystem::path(a.out) / "transforms.json").string();
  std::ofstream os(tpath, std::ios::binary | std::ios::trunc);
  if (!os) throw stabkit::IoError("cannot write " + tpath);
  os << transforms_json(res.transforms, res.crop).dump(1) << "\n";
  os.close();

  const double n = static_cast<double>(seq.frames.size());
  json params = {{"ckpt", a.ckpt},       {"in", a.in},
                 {"out", a.out},         {"crop", a.crop},
                 {"offsets", a.offsets}, {"frames", seq.frames.size()}};
  params["timing"] = {{"engine_seconds", res.seconds},
                      {"mean_ms_per_frame", 1e3 * res.seconds / n},
                      {"frames_per_second", n / res.seconds}};
  write_run_manifest(a.out, "stabilize", params, now_seconds() - t0);

  std::cout << "stabilized " << seq.frames.size() << " frames to " << a.out
            << " (" << n / res.seconds << " fps engine-side), crop ["
            << res.crop.x0 << "," << res.crop.y0 << " " << res.crop.width
            << "x" << res.crop.height << "]\n";
  return 0;
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

struct EvaluateArgs {
  std::string input;
  std::string output;
  std::string gt_transforms;
  std::string json_path;
  std::string csv_path;
};

std::vector<Homography> load_gt_transforms(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw stabkit::IoError("cannot read " + path);
  json j;
  try {
    is >> j;
  } catch (const std::exception& e) {
    throw stabkit::IoError("cannot parse " + path + ": " + e.what());
  }
  const json& arr = j.is_object() ? j.at("transforms") : j;
  if (!arr.is_array())
    throw stabkit::IoError(path + " holds no transform array");
  std::vector<Homography> maps;
  for (const json& t : arr) maps.push_back(stabkit::detail::homography_from_json(t));
  return maps;
}

int cmd_evaluate(const EvaluateArgs& a) {
  const double t0 = now_seconds();
  const stabkit::Sequence input = stabkit::load_sequence(a.input);
  const stabkit::Sequence output = stabkit::load_sequence(a.output);

  std::vector<Homography> gt;
  const std::vector<Homography>* gt_ptr = nullptr;
  if (!a.gt_transforms.empty()) {
    gt = load_gt_transforms(a.gt_transforms);
    if (gt.size() != output.frames.size())
      throw stabkit::ConfigError(
          "--gt-transforms count does not match the output frame count");
    gt_ptr = &gt;
  }

  const stabkit::MetricReport rep =
      stabkit::report(input.frames, output.frames, {}, gt_ptr);

  char line[160];
  std::printf("%-16s %10s %10s\n", "metric", "input", "output");
  std::snprintf(line, sizeof(line), "%-16s %10.6f %10.6f", "cropping ratio",
                1.0, rep.cropping_ratio);
  std::printf("%s\n", line);
  std::snprintf(line, sizeof(line), "%-16s %10.6f %10.6f", "distortion", 1.0,
                rep.distortion);
  std::printf("%s\n", line);
  std::snprintf(line, sizeof(line), "%-16s %10.6f %10.6f", "stability",
                rep.stability_input, rep.stability);
  std::printf("%s\n", line);

  if (!a.json_path.empty()) {
    json j;
    j["cropping_ratio"] = rep.cropping_ratio;
    j["distortion"] = rep.distortion;
    j["stability"] = rep.stability;
    j["stability_input"] = rep.stability_input;
    j["frames"] = output.frames.size();
    int ok = 0;
    for (std::uint8_t v : rep.pair_ok) ok += v ? 1 : 0;
    j["pairs_ok"] = ok;
    std::ofstream os(a.json_path, std::ios::binary | std::ios::trunc);
    if (!os) throw stabkit::IoError("cannot write " + a.json_path);
    os << j.dump(1) << "\n";
    os.close();
    const std::string dir =
        std::filesystem::path(a.json_path).parent_path().string();
    json params = {{"input", a.input},
                   {"output", a.output},
                   {"gt_transforms", a.gt_transforms},
                   {"json", a.json_path},
                   {"csv", a.csv_path}};
    write_run_manifest(dir.empty() ? "." : dir, "evaluate", params,
                       now_seconds() - t0);
  }

  if (!a.csv_path.empty()) {
    std::ofstream os(a.csv_path, std::ios::binary | std::ios::trunc);
    if (!os) throw stabkit::IoError("cannot write " + a.csv_path);
    os << "frame,scale,anisotropy,ok\n";
    for (std::size_t t = 0; t < rep.scale_series.size(); ++t) {
      char row[128];
      std::snprintf(row, sizeof(row), "%zu,%.17g,%.17g,%d\n", t,
                    rep.scale_series[t], rep.anisotropy_series[t],
                    rep.pair_ok[t] ? 1 : 0);
      os << row;
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"stabkit: learned online video stabilization"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  GenDataArgs gd;
  CLI::App* gen = app.add_subcommand(
      "gen-data", "Generate a synthetic steady/unsteady clip dataset");
  gen->add_option("--out", gd.out, "Output dataset directory")->required();
  gen->add_option("--clips", gd.clips, "Number of clips")->capture_default_str();
  gen->add_option("--frames", gd.frames, "Frames per clip")->capture_default_str();
  gen->add_option("--dims", gd.dims, "Frame size as WxH")->capture_default_str();
  gen->add_option("--fps", gd.fps, "Nominal frame rate")->capture_default_str();
  gen->add_option("--jitter-amp", gd.jitter_amp,
                  "Shake amplitude scale (0 disables shake)")->capture_default_str();
  gen->add_option("--seed", gd.seed, "Master seed")->capture_default_str();

  TrainArgs tr;
  CLI::App* train = app.add_subcommand("train", "Train a stabilizer");
  train->add_option("--data", tr.data, "Dataset directory")->required();
  train->add_option("--out", tr.out, "Checkpoint output path")->required();
  train->add_option("--log", tr.log, "CSV log path (default: <out>.csv)");
  train->add_option("--resume", tr.resume, "Checkpoint to resume from");
  train->add_option("--batch", tr.cfg.batch_size, "Batch size")->capture_default_str();
  train->add_option("--lr", tr.cfg.learning_rate, "Initial learning rate")->capture_default_str();
  train->add_option("--decay-factor", tr.cfg.lr_decay_factor,
                    "Learning-rate decay factor")->capture_default_str();
  train->add_option("--decay-every", tr.cfg.lr_decay_interval,
                    "Iterations between decays")->capture_default_str();
  train->add_option("--max-iter", tr.cfg.max_iterations, "Total iterations")->capture_default_str();
  train->add_option("--clip-norm", tr.cfg.gradient_clip_norm,
                    "Global gradient-norm cap (<=0 disables)")->capture_default_str();
  train->add_option("--alpha", tr.cfg.weights.alpha,
                    "Feature-term weight")->capture_default_str();
  train->add_option("--lambda", tr.cfg.weights.lambda,
                    "Temporal-term weight")->capture_default_str();
  train->add_option("--checkpoint-every", tr.cfg.checkpoint_interval,
                    "Iterations between checkpoint saves")->capture_default_str();
  train->add_option("--seed", tr.cfg.seed, "Master seed")->capture_default_str();

  StabilizeArgs st;
  CLI::App* stab = app.add_subcommand("stabilize", "Stabilize a sequence");
  stab->add_option("--ckpt", st.ckpt, "Checkpoint path")->required();
  stab->add_option("--in", st.in, "Input sequence directory");
  stab->add_option("--out", st.out, "Output sequence directory");
  CLI::Option* crop_opt = stab->add_option(
      "--crop", st.crop, "Border handling: final, running, or none")->capture_default_str();
  stab->add_option("--offsets", st.offsets,
                   "History spacing: inference or training")->capture_default_str();
  stab->add_flag("--stream", st.stream,
                 "Read PGMs from stdin, write PGMs to stdout");

  EvaluateArgs ev;
  CLI::App* eval = app.add_subcommand(
      "evaluate", "Score a stabilized sequence against its input");
  eval->add_option("--input", ev.input, "Original sequence directory")
      ->required();
  eval->add_option("--output", ev.output, "Stabilized sequence directory")
      ->required();
  eval->add_option("--gt-transforms", ev.gt_transforms,
                   "transforms.json to bypass alignment estimation");
  eval->add_option("--json", ev.json_path, "Write the report as JSON here");
  eval->add_option("--csv", ev.csv_path, "Write per-frame series as CSV here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    check_threads_env();
    st.crop_given = crop_opt->count() > 0;
    if (gen->parsed()) return cmd_gen_data(gd);
    if (train->parsed()) return cmd_train(tr);
    if (stab->parsed()) return cmd_stabilize(st);
    if (eval->parsed()) return cmd_evaluate(ev);
  } catch (const stabkit::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const stabkit::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const stabkit::NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
