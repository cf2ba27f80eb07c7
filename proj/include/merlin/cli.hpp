// Copyright (c) 2026 The merlin-despeckle Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "merlin/despeckle.hpp"
#include "merlin/error.hpp"
#include "merlin/eval.hpp"
#include "merlin/raster_io.hpp"
#include "merlin/rng.hpp"
#include "merlin/speckle_sim.hpp"
#include "merlin/spectrum_prep.hpp"
#include "merlin/stats.hpp"
#include "merlin/train.hpp"
#include "merlin/transfer_json.hpp"

namespace merlin::cli {

inline constexpr const char* kVersion = "1.0.0";

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

inline constexpr std::uint64_t kSimulateStream = 0x53494d;  // "SIM"

inline std::string version_string() {
  std::ostringstream os;
  os << "merlin " << kVersion << "\n"
     << "formats: " << io::kSlcMagic << " " << io::kReflectivityMagic << " " << io::kTensorMagic << " "
     << train::kCheckpointMagic << "\n"
     << "compiler: " << __VERSION__ << "\n";
  return os.str();
}

/// Exit status for a library error: runtime failures (I/O, divergence, singular
/// systems) map to 2, everything attributable to inputs or configuration to 1.
inline int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::io:
    case ErrorCode::diverged:
    case ErrorCode::singular:
    case ErrorCode::backward_before_forward:
      return kExitRuntime;
    default:
      return kExitValidation;
  }
}

struct Common {
  std::uint64_t seed = 0;
  bool seed_given = false;
  int threads = 1;
  bool deterministic = false;

  int worker_threads() const { return deterministic ? 1 : std::max(1, threads); }
};

inline sim::TransferFunctionSpec transfer_arg(const std::string& value) {
  if (value.empty() || value == "identity") return sim::TransferFunctionSpec::identity();
  return sim::load_transfer_spec(value);
}

inline ReflectivityImage load_ground_truth(const std::filesystem::path& path, double peak) {
  if (path.extension() == ".png") return io::ingest_grayscale(path, peak);
  return io::load_reflectivity(path);
}

inline void write_json(const nlohmann::json& j, const std::string& path, std::ostream& out) {
  const std::string text = j.dump(2) + "\n";
  if (path.empty()) {
    out << text;
  } else {
    io::write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  }
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  try {
    return nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::config, "cannot parse '" + path.string() + "': " + e.what());
  }
}

/// SLC containers named by `data`: the file itself, or every *.slc in the directory (sorted).
inline std::vector<std::filesystem::path> slc_inputs(const std::filesystem::path& data) {
  std::vector<std::filesystem::path> files;
  if (std::filesystem::is_directory(data)) {
    for (const auto& e : std::filesystem::directory_iterator(data)) {
      if (e.is_regular_file() && e.path().extension() == ".slc") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
  } else {
    files.push_back(data);
  }
  require(!files.empty(), ErrorCode::invalid_argument, "no .slc files in '" + data.string() + "'");
  return files;
}

inline std::optional<eval::Region> parse_region(const std::string& text) {
  eval::Region r;
  char c1 = 0, c2 = 0, c3 = 0;
  std::istringstream is(text);
  if (!(is >> r.x >> c1 >> r.y >> c2 >> r.width >> c3 >> r.height) || c1 != ',' || c2 != ',' || c3 != ',') {
    return std::nullopt;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Subcommands

struct SimulateArgs {
  std::string gt, h = "identity", out, ref_out, png;
  double peak = 255.0;
};

inline int cmd_simulate(const SimulateArgs& a, const Common& c, std::ostream& out) {
  const auto truth = load_ground_truth(a.gt, a.peak);
  const auto spec = transfer_arg(a.h);
  RngStream rng(c.seed, kSimulateStream);
  const auto z = sim::simulate_slc(truth, spec, rng);
  io::save_slc(z, a.out);
  if (!a.ref_out.empty()) io::save_reflectivity(sim::effective_reflectivity(truth, spec), a.ref_out);
  if (!a.png.empty()) io::export_png(sim::intensity_of(z), io::PngMode::amplitude_quantile, a.png);
  out << nlohmann::json{{"out", a.out}, {"width", z.width()}, {"height", z.height()}, {"seed", c.seed}}.dump()
      << "\n";
  return kExitOk;
}

struct PrepArgs {
  std::string in, out, report;
  double threshold = prep::kBandThreshold;
  bool no_mask = false;
  bool decimate = false;
};

inline int cmd_prep(const PrepArgs& a, std::ostream& out) {
  const auto img = io::load_slc(a.in);
  validate(img);
  auto rc = prep::recenter_patch(img);
  double fraction = 1.0;
  ComplexImage result = rc.patch;
  if (!a.no_mask) {
    auto masked = prep::symmetric_mask(rc.patch, a.threshold);
    fraction = masked.kept_fraction;
    result = std::move(masked.patch);
  }
  if (a.decimate) result = prep::decimate2(result);
  io::save_slc(result, a.out);
  write_json({{"delta_az", rc.delta_azimuth}, {"delta_rg", rc.delta_range}, {"mask_fraction", fraction}}, a.report,
             out);
  return kExitOk;
}

struct TrainArgs {
  std::string config, data, out, log;
};

inline int cmd_train(const TrainArgs& a, const Common& c, std::ostream& out) {
  auto cfg = train::train_config_from_json(read_json(a.config));
  if (c.seed_given) cfg.seed = c.seed;
  std::vector<ComplexImage> images;
  for (const auto& f : slc_inputs(a.data)) images.push_back(io::load_slc(f));
  std::ofstream log_file;
  train::TrainOptions opts;
  opts.checkpoint_path = a.out;
  opts.threads = c.worker_threads();
  if (!a.log.empty()) {
    log_file.open(a.log, std::ios::trunc);
    if (!log_file) throw Error(ErrorCode::io, "cannot open log '" + a.log + "'");
    opts.log = &log_file;
  }
  const auto ckpt = train::train(images, cfg, opts);
  if (ckpt.epoch == 0) train::save_checkpoint(ckpt, a.out);
  out << nlohmann::json{{"checkpoint", a.out},
                        {"epochs", ckpt.epoch},
                        {"steps", ckpt.step},
                        {"final_loss", ckpt.loss_history.empty() ? nlohmann::json(nullptr)
                                                                 : nlohmann::json(ckpt.loss_history.back())}}
             .dump()
      << "\n";
  return kExitOk;
}

struct DespeckleArgs {
  std::string ckpt, in, out, png, fusion = "linear";
  std::size_t tile = infer::kDefaultTile;
  std::size_t margin = infer::kDefaultMargin;
  bool recenter = false;
};

inline int cmd_despeckle(const DespeckleArgs& a, const Common& c, std::ostream& out) {
  const auto ckpt = train::load_checkpoint(a.ckpt);
  const auto img = io::load_slc(a.in);
  infer::TileOptions opt;
  opt.tile = a.tile;
  opt.margin = a.margin;
  opt.recenter = a.recenter;
  opt.fusion = a.fusion == "log" ? infer::Fusion::log : infer::Fusion::linear;
  const auto est = infer::despeckle_image(ckpt, img, opt, c.worker_threads());
  io::save_reflectivity(est, a.out);
  if (!a.png.empty()) io::export_png(est.values, io::PngMode::amplitude_quantile, a.png);
  out << nlohmann::json{{"out", a.out}, {"width", est.width()}, {"height", est.height()}}.dump() << "\n";
  return kExitOk;
}

struct EvalArgs {
  std::string ref, est, noisy, h = "identity", ratio_png, out, ckpt;
  std::vector<std::string> regions;
  std::size_t draws = 100000;
  int instances = eval::kNoisyInstances;
  double peak = 0.0;
};

inline int cmd_eval(const EvalArgs& a, const Common& c, std::ostream& out) {
  const auto spec = transfer_arg(a.h);
  auto ref = io::load_reflectivity(a.ref);
  const ReflectivityImage truth = ref;
  if (!ref.convolved) ref = sim::effective_reflectivity(ref, spec);
  const double peak = a.peak > 0 ? a.peak : eval::amplitude_peak(ref);

  nlohmann::json report;
  report["peak"] = peak;
  report["sigma_kind"] = "population";
  if (!a.ckpt.empty()) {
    require(!truth.convolved, ErrorCode::invalid_argument, "multi-instance protocol needs an unconvolved --ref");
    const auto ckpt = train::load_checkpoint(a.ckpt);
    const int threads = c.worker_threads();
    const auto res = eval::psnr_protocol(
        truth, spec, [&](const ComplexImage& z) { return infer::despeckle_image(ckpt, z, {}, threads); },
        a.instances, c.seed);
    report["instances"] = a.instances;
    report["psnr_db"] = res.despeckled.mean;
    report["psnr_sigma"] = res.despeckled.sigma;
    report["noisy_psnr_db"] = res.noisy.mean;
    report["noisy_psnr_sigma"] = res.noisy.sigma;
  }

  std::optional<ReflectivityImage> est;
  if (!a.est.empty()) {
    est = io::load_reflectivity(a.est);
    if (a.ckpt.empty()) {
      report["instances"] = 1;
      report["psnr_db"] = eval::psnr_amplitude(ref, *est, peak);
      report["psnr_sigma"] = 0.0;
    }
    nlohmann::json enl_regions = nlohmann::json::array();
    for (const auto& text : a.regions) {
      const auto r = parse_region(text);
      require(r.has_value(), ErrorCode::invalid_argument, "region must be x,y,w,h: '" + text + "'");
      const auto values = eval::extract(est->values, *r);
      enl_regions.push_back({{"x", r->x},
                             {"y", r->y},
                             {"width", r->width},
                             {"height", r->height},
                             {"enl", eval::enl<float>(values)}});
    }
    report["enl_regions"] = enl_regions;
  }
  if (!a.noisy.empty()) {
    const auto z = io::load_slc(a.noisy);
    const auto intensity = sim::intensity_of(z);
    if (a.ckpt.empty()) report["noisy_psnr_db"] = eval::psnr_amplitude(ref, {intensity, true}, peak);
    if (est) {
      const auto ratio = eval::residual_ratio(intensity, *est);
      report["residual_stats"] = {{"mean", stats::mean<float>(ratio.data)},
                                  {"std", std::sqrt(stats::variance<float>(ratio.data))},
                                  {"enl", eval::enl<float>(ratio.data)}};
      if (!a.ratio_png.empty()) io::export_png(ratio, io::PngMode::log, a.ratio_png);
    }
  }
  const auto analytic = eval::check_transfer_independence(spec);
  const auto empirical = eval::empirical_independence(spec, a.draws, c.seed);
  report["independence"] = {
      {"analytic", eval::to_string(analytic.verdict)},
      {"empirical", empirical.statistic},
      {"empirical_verdict", eval::to_string(empirical.statistic < eval::kEmpiricalThreshold
                                                ? eval::Verdict::independent
                                                : eval::Verdict::dependent)}};
  write_json(report, a.out, out);
  return kExitOk;
}

struct CheckHArgs {
  std::string spec, out;
  double tol = eval::kAnalyticTolerance;
  std::size_t draws = 100000;
};

inline int cmd_check_h(const CheckHArgs& a, const Common& c, std::ostream& out) {
  const auto spec = transfer_arg(a.spec);
  const auto analytic = eval::check_transfer_independence(spec, a.tol);
  const auto empirical = eval::empirical_independence(spec, a.draws, c.seed);
  const auto emp_verdict =
      empirical.statistic < eval::kEmpiricalThreshold ? eval::Verdict::independent : eval::Verdict::dependent;
  write_json({{"verdict", eval::to_string(analytic.verdict)},
              {"gain_asymmetry", analytic.report.gain_asymmetry},
              {"phase_spread", analytic.report.phase_spread},
              {"tolerance", a.tol},
              {"empirical", {{"statistic", empirical.statistic},
                             {"draws", a.draws},
                             {"threshold", eval::kEmpiricalThreshold},
                             {"verdict", eval::to_string(emp_verdict)}}}},
             a.out, out);
  return kExitOk;
}

// ---------------------------------------------------------------------------

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Self-supervised SAR despeckling from the real/imaginary split of SLC images", "merlin"};
  // "-h" is left free: several subcommands take an "--h" transfer-function option.
  app.set_help_flag("--help", "Print this help message and exit");
  app.set_version_flag("--version", version_string());
  app.require_subcommand(1);
  app.fallthrough();

  Common common;
  app.add_option("--seed", common.seed, "Seed for every random stream")
      ->each([&](const std::string&) { common.seed_given = true; });
  app.add_option("--threads", common.threads, "Worker thread cap")->check(CLI::PositiveNumber);
  app.add_flag("--deterministic", common.deterministic, "Single-threaded, bit-stable numerics");

  SimulateArgs sa;
  auto* simulate = app.add_subcommand("simulate", "Simulate an SLC image from a ground-truth reflectivity");
  simulate->set_help_flag("--help", "Print this help message and exit");
  simulate->add_option("--gt", sa.gt, "Ground truth: 8-bit grayscale PNG or RFL1 container")->required();
  simulate->add_option("--h", sa.h, "Transfer function: 'identity' or a JSON spec file");
  simulate->add_option("--peak", sa.peak, "Amplitude assigned to gray level 255");
  simulate->add_option("--out", sa.out, "Output SLC1 container")->required();
  simulate->add_option("--ref-out", sa.ref_out, "Also write the effective reflectivity (RFL1)");
  simulate->add_option("--png", sa.png, "Intensity preview PNG");

  PrepArgs pa;
  auto* prep_cmd = app.add_subcommand("prep", "Re-center the spectrum and apply the symmetric mask");
  prep_cmd->set_help_flag("--help", "Print this help message and exit");
  prep_cmd->add_option("--in", pa.in, "Input SLC1 container (square, even side)")->required();
  prep_cmd->add_option("--out", pa.out, "Output SLC1 container")->required();
  prep_cmd->add_option("--report", pa.report, "JSON report path (default: stdout)");
  prep_cmd->add_option("--threshold", pa.threshold, "Band detection threshold relative to the peak");
  prep_cmd->add_flag("--no-mask", pa.no_mask, "Only re-center");
  prep_cmd->add_flag("--decimate", pa.decimate, "Keep every second sample on each axis");

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train a despeckling network on SLC images");
  train_cmd->set_help_flag("--help", "Print this help message and exit");
  train_cmd->add_option("--config", ta.config, "Training configuration (JSON)")->required();
  train_cmd->add_option("--data", ta.data, "SLC1 file or directory of .slc files")->required();
  train_cmd->add_option("--out", ta.out, "Checkpoint path (MRLN)")->required();
  train_cmd->add_option("--log", ta.log, "Line-delimited JSON training log");

  DespeckleArgs da;
  auto* despeckle = app.add_subcommand("despeckle", "Despeckle an SLC image with a checkpoint");
  despeckle->set_help_flag("--help", "Print this help message and exit");
  despeckle->add_option("--ckpt", da.ckpt, "Checkpoint (MRLN)")->required();
  despeckle->add_option("--in", da.in, "Input SLC1 container")->required();
  despeckle->add_option("--out", da.out, "Output RFL1 container")->required();
  despeckle->add_option("--tile", da.tile, "Tile side");
  despeckle->add_option("--margin", da.margin, "Tile margin cropped after inference");
  despeckle->add_option("--fusion", da.fusion, "Fusion of the two estimates")
      ->check(CLI::IsMember({"linear", "log"}));
  despeckle->add_flag("--recenter", da.recenter, "Re-center each tile's spectrum first");
  despeckle->add_option("--png", da.png, "Preview PNG");

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "Score an estimate and report diagnostics");
  eval_cmd->set_help_flag("--help", "Print this help message and exit");
  eval_cmd->add_option("--ref", ea.ref, "Reference reflectivity (RFL1)")->required();
  eval_cmd->add_option("--est", ea.est, "Estimated reflectivity (RFL1)");
  eval_cmd->add_option("--noisy", ea.noisy, "Noisy SLC1 the estimate came from");
  eval_cmd->add_option("--h", ea.h, "Transfer function: 'identity' or a JSON spec file");
  eval_cmd->add_option("--region", ea.regions, "ENL region x,y,w,h (repeatable)");
  eval_cmd->add_option("--ratio-png", ea.ratio_png, "Residual ratio PNG");
  eval_cmd->add_option("--out", ea.out, "JSON report path (default: stdout)");
  eval_cmd->add_option("--draws", ea.draws, "Monte-Carlo draws for the empirical independence check");
  eval_cmd->add_option("--ckpt", ea.ckpt, "Run the multi-instance PSNR protocol with this checkpoint");
  eval_cmd->add_option("--instances", ea.instances, "Noisy instances for the protocol")->check(CLI::PositiveNumber);
  eval_cmd->add_option("--peak", ea.peak, "PSNR peak (default: max reference amplitude)");

  CheckHArgs ha;
  auto* check_h = app.add_subcommand("check-h", "Check whether H keeps real and imaginary parts independent");
  check_h->set_help_flag("--help", "Print this help message and exit");
  check_h->add_option("--spec", ha.spec, "Transfer function: 'identity' or a JSON spec file")->required();
  check_h->add_option("--tol", ha.tol, "Analytic tolerance");
  check_h->add_option("--draws", ha.draws, "Monte-Carlo draws");
  check_h->add_option("--out", ha.out, "JSON report path (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (simulate->parsed()) return cmd_simulate(sa, common, out);
    if (prep_cmd->parsed()) return cmd_prep(pa, out);
    if (train_cmd->parsed()) return cmd_train(ta, common, out);
    if (despeckle->parsed()) return cmd_despeckle(da, common, out);
    if (eval_cmd->parsed()) return cmd_eval(ea, common, out);
    if (check_h->parsed()) return cmd_check_h(ha, common, out);
  } catch (const Error& e) {
    err << "error [" << to_string(e.code()) << "]: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  err << app.help();
  return kExitValidation;
}

}  // namespace merlin::cli
