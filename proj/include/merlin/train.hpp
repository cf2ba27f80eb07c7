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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "merlin/autodiff.hpp"
#include "merlin/error.hpp"
#include "merlin/image.hpp"
#include "merlin/losses.hpp"
#include "merlin/optim.hpp"
#include "merlin/raster_io.hpp"
#include "merlin/rng.hpp"
#include "merlin/spectrum_prep.hpp"
#include "merlin/unet.hpp"

namespace merlin::train {

inline constexpr int kConfigSchemaVersion = 1;
inline constexpr std::string_view kCheckpointMagic = "MRLN";

struct LrStage {
  int start_epoch = 0;
  double lr = 1e-3;
  friend bool operator==(const LrStage&, const LrStage&) = default;
};

struct TrainConfig {
  int patch_size = 64;
  int batch_size = 12;
  int epochs = 30;
  std::vector<LrStage> lr_schedule{{0, 1e-3}, {6, 1e-4}, {20, 1e-5}};
  double grad_norm_clip = 1.0;
  int stride = 32;
  std::uint64_t seed = 0;
  /// Stop after this many optimizer steps; 0 means run all epochs.
  std::int64_t max_steps = 0;
  /// Re-center each training patch's spectrum before splitting it into parts.
  bool recenter = false;
  net::UNetConfig unet;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

inline void validate(const TrainConfig& cfg) {
  net::validate(cfg.unet);
  require(cfg.patch_size >= 2, ErrorCode::config, "patch_size must be >= 2");
  require(cfg.patch_size % (1 << cfg.unet.levels) == 0, ErrorCode::config,
          "patch_size must be divisible by 2^levels");
  require(cfg.batch_size >= 1, ErrorCode::config, "batch_size must be >= 1");
  require(cfg.epochs >= 0, ErrorCode::config, "epochs must be >= 0");
  require(cfg.stride >= 1, ErrorCode::config, "stride must be >= 1");
  require(cfg.max_steps >= 0, ErrorCode::config, "max_steps must be >= 0");
  require(std::isfinite(cfg.grad_norm_clip) && cfg.grad_norm_clip > 0.0, ErrorCode::config,
          "grad_norm_clip must be > 0");
  require(!cfg.lr_schedule.empty() && cfg.lr_schedule.front().start_epoch == 0, ErrorCode::config,
          "lr_schedule must start at epoch 0");
  for (std::size_t i = 0; i < cfg.lr_schedule.size(); ++i) {
    require(std::isfinite(cfg.lr_schedule[i].lr) && cfg.lr_schedule[i].lr > 0.0, ErrorCode::config,
            "learning rates must be > 0");
    if (i > 0) {
      require(cfg.lr_schedule[i].start_epoch > cfg.lr_schedule[i - 1].start_epoch, ErrorCode::config,
              "lr_schedule epochs must be strictly increasing");
    }
  }
}

inline double lr_at(const TrainConfig& cfg, int epoch) {
  double lr = cfg.lr_schedule.front().lr;
  for (const auto& s : cfg.lr_schedule) {
    if (s.start_epoch <= epoch) lr = s.lr;
  }
  return lr;
}

inline nlohmann::json to_json(const TrainConfig& cfg) {
  nlohmann::json sched = nlohmann::json::array();
  for (const auto& s : cfg.lr_schedule) sched.push_back({s.start_epoch, s.lr});
  return {{"schema_version", kConfigSchemaVersion},
          {"patch_size", cfg.patch_size},
          {"batch_size", cfg.batch_size},
          {"epochs", cfg.epochs},
          {"lr_schedule", sched},
          {"grad_norm_clip", cfg.grad_norm_clip},
          {"stride", cfg.stride},
          {"seed", cfg.seed},
          {"max_steps", cfg.max_steps},
          {"recenter", cfg.recenter},
          {"unet", net::to_json(cfg.unet)}};
}

/// Unknown keys and a wrong schema version are errors. Missing keys keep their defaults.
inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  require(j.is_object(), ErrorCode::config, "train config must be a JSON object");
  TrainConfig cfg;
  try {
    require(j.contains("schema_version"), ErrorCode::config, "train config needs schema_version");
    for (const auto& [key, value] : j.items()) {
      if (key == "schema_version") {
        require(value.get<int>() == kConfigSchemaVersion, ErrorCode::config,
                "unsupported schema_version " + value.dump());
      } else if (key == "patch_size") {
        cfg.patch_size = value.get<int>();
      } else if (key == "batch_size") {
        cfg.batch_size = value.get<int>();
      } else if (key == "epochs") {
        cfg.epochs = value.get<int>();
      } else if (key == "lr_schedule") {
        cfg.lr_schedule.clear();
        for (const auto& stage : value) {
          require(stage.is_array() && stage.size() == 2, ErrorCode::config,
                  "lr_schedule entries are [start_epoch, lr]");
          cfg.lr_schedule.push_back({stage[0].get<int>(), stage[1].get<double>()});
        }
      } else if (key == "grad_norm_clip") {
        cfg.grad_norm_clip = value.get<double>();
      } else if (key == "stride") {
        cfg.stride = value.get<int>();
      } else if (key == "seed") {
        cfg.seed = value.get<std::uint64_t>();
      } else if (key == "max_steps") {
        cfg.max_steps = value.get<std::int64_t>();
      } else if (key == "recenter") {
        cfg.recenter = value.get<bool>();
      } else if (key == "unet") {
        cfg.unet = net::unet_config_from_json(value);
      } else {
        throw Error(ErrorCode::config, "unknown train config key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::config, std::string("train config: ") + e.what());
  }
  validate(cfg);
  return cfg;
}

/// FNV-1a (64-bit) of the canonical JSON text.
inline std::uint64_t config_hash(const nlohmann::json& j) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : j.dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Patches

struct PatchOrigin {
  std::size_t image = 0;
  std::size_t x = 0;
  std::size_t y = 0;
};

/// Top-left corners of a regular tiling: (⌊(side − patch)/stride⌋ + 1) positions per axis.
inline std::vector<PatchOrigin> tile_origins(std::size_t width, std::size_t height, std::size_t patch,
                                             std::size_t stride, std::size_t image = 0) {
  require(width >= patch && height >= patch, ErrorCode::invalid_argument,
          "image " + std::to_string(width) + "x" + std::to_string(height) + " smaller than patch " +
              std::to_string(patch));
  std::vector<PatchOrigin> out;
  for (std::size_t y = 0; y + patch <= height; y += stride) {
    for (std::size_t x = 0; x + patch <= width; x += stride) out.push_back({image, x, y});
  }
  return out;
}

/// Log-domain pair for one scene: `first`/`second` are the two independent network
/// inputs (log ã² and log b̃², or log I and log I′).
struct ScenePair {
  FloatGrid first;
  FloatGrid second;
  ComplexImage source;  // MERLIN scenes only; used for per-patch re-centering
};

inline FloatGrid log_of(const FloatGrid& q) {
  FloatGrid out(q.width, q.height);
  for (std::size_t i = 0; i < q.size(); ++i) {
    out.data[i] = static_cast<float>(std::log(std::max(static_cast<double>(q.data[i]), prep::kLogFloor)));
  }
  return out;
}

inline FloatGrid squared(const FloatGrid& part) {
  FloatGrid out(part.width, part.height);
  for (std::size_t i = 0; i < part.size(); ++i) out.data[i] = part.data[i] * part.data[i];
  return out;
}

inline ScenePair merlin_scene(const ComplexImage& img) {
  validate(img);
  return {log_of(squared(img.re)), log_of(squared(img.im)), img};
}

inline FloatGrid intensity(const ComplexImage& z) {
  FloatGrid out(z.width(), z.height());
  for (std::size_t i = 0; i < z.size(); ++i) out.data[i] = z.re.data[i] * z.re.data[i] + z.im.data[i] * z.im.data[i];
  return out;
}

inline ScenePair supervised_scene(const ComplexImage& first, const ComplexImage& second) {
  validate(first);
  validate(second);
  require(first.re.same_shape(second.re), ErrorCode::dimension_mismatch, "realizations differ in size");
  return {log_of(intensity(first)), log_of(intensity(second)), {}};
}

inline constexpr double kNormLowQuantile = 0.01;
inline constexpr double kNormHighQuantile = 0.999;

/// (m, M) = 1st and 99.9th percentiles of the pooled log values of the network inputs.
inline prep::Normalization compute_normalization(const std::vector<ScenePair>& scenes) {
  std::vector<double> pool;
  for (const auto& s : scenes) {
    pool.insert(pool.end(), s.first.data.begin(), s.first.data.end());
    pool.insert(pool.end(), s.second.data.begin(), s.second.data.end());
  }
  require(!pool.empty(), ErrorCode::invalid_argument, "empty training corpus");
  prep::Normalization n{io::quantile(pool, kNormLowQuantile), io::quantile(pool, kNormHighQuantile)};
  if (!(n.hi > n.lo)) n.hi = n.lo + 1.0;
  return n;
}

struct TrainingPair {
  prep::LogImage input;
  prep::LogImage target;
  bool swapped = false;
};

inline prep::LogImage normalized_crop(const FloatGrid& logs, const PatchOrigin& o, std::size_t patch,
                                      const prep::Normalization& norm) {
  prep::LogImage out{FloatGrid(patch, patch), norm};
  const double inv = 1.0 / (norm.hi - norm.lo);
  for (std::size_t y = 0; y < patch; ++y) {
    for (std::size_t x = 0; x < patch; ++x) {
      out.values(x, y) = static_cast<float>((logs(o.x + x, o.y + y) - norm.lo) * inv);
    }
  }
  return out;
}

namespace detail {

inline constexpr std::uint64_t kInitStream = 0x494e4954;     // "INIT"
inline constexpr std::uint64_t kEpochStream = 0x45504f43;    // "EPOC"

/// One epoch's patch order with swap flags, drawn from the epoch's stream.
inline std::vector<std::pair<PatchOrigin, bool>> epoch_plan(const std::vector<PatchOrigin>& origins,
                                                            std::uint64_t seed, int epoch) {
  RngStream rng = RngStream(seed, kEpochStream).split(static_cast<std::uint64_t>(epoch));
  std::vector<PatchOrigin> order = origins;
  shuffle(order, rng);
  std::vector<std::pair<PatchOrigin, bool>> plan;
  plan.reserve(order.size());
  for (const auto& o : order) plan.emplace_back(o, rng.bernoulli(0.5));
  return plan;
}

}  // namespace detail

/// Tiled, shuffled, randomly swapped patches of one MERLIN scene for a given epoch seed.
inline std::vector<TrainingPair> sample_patches(const ComplexImage& img, const TrainConfig& cfg,
                                                const prep::Normalization& norm, std::uint64_t epoch_seed) {
  const auto scene = merlin_scene(img);
  const auto patch = static_cast<std::size_t>(cfg.patch_size);
  const auto origins = tile_origins(img.width(), img.height(), patch, static_cast<std::size_t>(cfg.stride));
  std::vector<TrainingPair> out;
  for (const auto& [o, swap] : detail::epoch_plan(origins, epoch_seed, 0)) {
    const FloatGrid& in = swap ? scene.second : scene.first;
    const FloatGrid& tg = swap ? scene.first : scene.second;
    out.push_back({normalized_crop(in, o, patch, norm), normalized_crop(tg, o, patch, norm), swap});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint: "MRLN", u32 header length, UTF-8 JSON header, TNS1 tensor payload.

struct Checkpoint {
  std::string mode = "merlin";  // "merlin" or "supervised"
  net::UNetConfig unet;
  nlohmann::json train_config = nlohmann::json::object();
  std::uint64_t config_hash = 0;
  prep::Normalization norm;
  io::TensorContainer parameters;
  io::TensorContainer optimizer;  // adam.m.<name>, adam.v.<name>
  std::int64_t adam_t = 0;
  int epoch = 0;  // completed epochs
  std::int64_t step = 0;
  std::vector<double> loss_history;  // per-epoch mean loss
  std::vector<double> lr_history;    // per-epoch learning rate
  double best_loss = std::numeric_limits<double>::infinity();

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

inline io::TensorContainer export_parameters(const net::UNet& net) {
  io::TensorContainer tc;
  for (ad::NodeId id : net.graph.parameter_ids()) {
    const auto& t = net.graph.param(id);
    tc.add(net.graph.node(id).name,
           {static_cast<std::uint32_t>(t.shape.n), static_cast<std::uint32_t>(t.shape.c),
            static_cast<std::uint32_t>(t.shape.h), static_cast<std::uint32_t>(t.shape.w)},
           t.data);
  }
  return tc;
}

/// Builds the network described by the checkpoint and loads its weights.
inline net::UNet instantiate(const Checkpoint& ckpt) {
  net::UNet net = net::build_unet(ckpt.unet);
  const auto& ids = net.graph.parameter_ids();
  require(ckpt.parameters.entries().size() == ids.size(), ErrorCode::config,
          "checkpoint parameter count does not match its network config");
  for (ad::NodeId id : ids) {
    auto& t = net.graph.param(id);
    const auto* e = ckpt.parameters.find(net.graph.node(id).name);
    require(e != nullptr, ErrorCode::config, "checkpoint lacks parameter '" + net.graph.node(id).name + "'");
    const std::vector<std::uint32_t> dims{static_cast<std::uint32_t>(t.shape.n), static_cast<std::uint32_t>(t.shape.c),
                                          static_cast<std::uint32_t>(t.shape.h), static_cast<std::uint32_t>(t.shape.w)};
    require(e->dims == dims, ErrorCode::config, "checkpoint parameter '" + e->name + "' has wrong dims");
    t.data = e->data;
  }
  return net;
}

inline nlohmann::json checkpoint_header(const Checkpoint& c) {
  std::ostringstream hash;
  hash << std::hex << c.config_hash;
  return {{"format", std::string(kCheckpointMagic)},
          {"version", 1},
          {"mode", c.mode},
          {"unet", net::to_json(c.unet)},
          {"train_config", c.train_config},
          {"config_hash", hash.str()},
          {"normalization", {{"lo", c.norm.lo}, {"hi", c.norm.hi}}},
          {"adam_t", c.adam_t},
          {"epoch", c.epoch},
          {"step", c.step},
          {"loss_history", c.loss_history},
          {"lr_history", c.lr_history},
          {"best_loss", std::isfinite(c.best_loss) ? nlohmann::json(c.best_loss) : nlohmann::json(nullptr)}};
}

inline std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c) {
  io::ByteWriter w;
  w.magic(kCheckpointMagic);
  const std::string header = checkpoint_header(c).dump();
  w.u32(static_cast<std::uint32_t>(header.size()));
  w.text(header);
  io::TensorContainer payload = c.parameters;
  for (const auto& e : c.optimizer.entries()) payload.add(e.name, e.dims, e.data);
  io::encode_tensors(payload, w);
  return w.take();
}

inline Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes);
  r.expect_magic(kCheckpointMagic);
  const std::uint32_t len = r.u32();
  const std::string text = r.text(len);
  Checkpoint c;
  try {
    const auto h = nlohmann::json::parse(text);
    require(h.at("version").get<int>() == 1, ErrorCode::config, "unsupported checkpoint version");
    c.mode = h.at("mode").get<std::string>();
    c.unet = net::unet_config_from_json(h.at("unet"));
    c.train_config = h.at("train_config");
    c.config_hash = std::stoull(h.at("config_hash").get<std::string>(), nullptr, 16);
    c.norm = {h.at("normalization").at("lo").get<double>(), h.at("normalization").at("hi").get<double>()};
    c.adam_t = h.at("adam_t").get<std::int64_t>();
    c.epoch = h.at("epoch").get<int>();
    c.step = h.at("step").get<std::int64_t>();
    c.loss_history = h.at("loss_history").get<std::vector<double>>();
    c.lr_history = h.at("lr_history").get<std::vector<double>>();
    c.best_loss = h.at("best_loss").is_null() ? std::numeric_limits<double>::infinity()
                                              : h.at("best_loss").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::config, std::string("checkpoint header: ") + e.what());
  }
  const auto payload = io::decode_tensors(r);
  for (const auto& e : payload.entries()) {
    if (e.name.starts_with("adam.")) {
      c.optimizer.add(e.name, e.dims, e.data);
    } else {
      c.parameters.add(e.name, e.dims, e.data);
    }
  }
  return c;
}

inline void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  io::write_file(path, encode_checkpoint(c));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(io::read_file(path));
}

/// `<stem>.best<ext>` next to the last-epoch checkpoint.
inline std::filesystem::path best_checkpoint_path(const std::filesystem::path& last) {
  auto p = last;
  p.replace_filename(last.stem().string() + ".best" + last.extension().string());
  return p;
}

// ---------------------------------------------------------------------------
// Training loop

struct TrainOptions {
  /// When set, the checkpoint is written here after every epoch, and the
  /// best-loss epoch is kept at best_checkpoint_path().
  std::filesystem::path checkpoint_path;
  /// Line-delimited JSON {epoch, step, lr, loss}, one line per optimizer step.
  std::ostream* log = nullptr;
  int threads = 1;
  std::function<void(const Checkpoint&)> on_epoch;
};

namespace detail {

/// Log parts of the re-centered complex patch at `o`.
inline ScenePair recentered_patch(const ComplexImage& src, const PatchOrigin& o, std::size_t patch) {
  ComplexImage z(patch, patch);
  for (std::size_t y = 0; y < patch; ++y) {
    for (std::size_t x = 0; x < patch; ++x) {
      z.re(x, y) = src.re(o.x + x, o.y + y);
      z.im(x, y) = src.im(o.x + x, o.y + y);
    }
  }
  const auto rc = prep::recenter_patch(z).patch;
  return {log_of(squared(rc.re)), log_of(squared(rc.im)), {}};
}

inline void fill_batch(const std::vector<ScenePair>& scenes, const std::vector<std::pair<PatchOrigin, bool>>& plan,
                       std::size_t begin, std::size_t count, std::size_t patch, const prep::Normalization& norm,
                       bool recenter, ad::Tensor<float>& x, ad::Tensor<float>& t) {
  const ad::Shape s{static_cast<int>(count), 1, static_cast<int>(patch), static_cast<int>(patch)};
  x = ad::Tensor<float>(s);
  t = ad::Tensor<float>(s);
  const std::size_t plane = patch * patch;
  for (std::size_t b = 0; b < count; ++b) {
    const auto& [o, swap] = plan[begin + b];
    const auto& scene = scenes[o.image];
    prep::LogImage in, tg;
    if (recenter && scene.source.size() > 0) {
      const auto local = recentered_patch(scene.source, o, patch);
      const PatchOrigin zero{};
      in = normalized_crop(swap ? local.second : local.first, zero, patch, norm);
      tg = normalized_crop(swap ? local.first : local.second, zero, patch, norm);
    } else {
      in = normalized_crop(swap ? scene.second : scene.first, o, patch, norm);
      tg = normalized_crop(swap ? scene.first : scene.second, o, patch, norm);
    }
    std::copy(in.values.data.begin(), in.values.data.end(), x.data.begin() + static_cast<long>(b * plane));
    std::copy(tg.values.data.begin(), tg.values.data.end(), t.data.begin() + static_cast<long>(b * plane));
  }
}

inline std::string batch_stats(const ad::Tensor<float>& x) {
  double lo = INFINITY, hi = -INFINITY, sum = 0.0;
  std::size_t bad = 0;
  for (float v : x.data) {
    if (!std::isfinite(v)) {
      ++bad;
      continue;
    }
    lo = std::min<double>(lo, v);
    hi = std::max<double>(hi, v);
    sum += v;
  }
  std::ostringstream os;
  os << "min=" << lo << " max=" << hi << " mean=" << sum / static_cast<double>(x.size()) << " non_finite=" << bad;
  return os.str();
}

inline void store_optimizer(Checkpoint& c, const net::UNet& net, const ad::AdamState<float>& st) {
  c.optimizer = io::TensorContainer{};
  c.adam_t = st.t;
  if (st.m.empty()) return;
  const auto& ids = net.graph.parameter_ids();
  for (std::size_t k = 0; k < ids.size(); ++k) {
    const std::string& name = net.graph.node(ids[k]).name;
    const auto n = static_cast<std::uint32_t>(st.m[k].size());
    c.optimizer.add("adam.m." + name, {n}, st.m[k]);
    c.optimizer.add("adam.v." + name, {n}, st.v[k]);
  }
}

inline Checkpoint run_training(const std::vector<ScenePair>& scenes, const std::string& mode,
                               const TrainConfig& cfg, const TrainOptions& opts) {
  validate(cfg);
  require(!scenes.empty(), ErrorCode::invalid_argument, "training needs at least one scene");
  const auto patch = static_cast<std::size_t>(cfg.patch_size);
  std::vector<PatchOrigin> origins;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const auto o = tile_origins(scenes[i].first.width, scenes[i].first.height, patch,
                                static_cast<std::size_t>(cfg.stride), i);
    origins.insert(origins.end(), o.begin(), o.end());
  }

  Checkpoint ckpt;
  ckpt.mode = mode;
  ckpt.unet = cfg.unet;
  ckpt.train_config = to_json(cfg);
  ckpt.config_hash = config_hash(ckpt.train_config);
  ckpt.norm = compute_normalization(scenes);

  net::UNet net = net::build_unet(cfg.unet);
  net::initialize(net, RngStream(cfg.seed, kInitStream));
  net.graph.set_threads(opts.threads);
  const auto lossn = mode == "merlin" ? loss::attach_merlin_loss(net.graph, net.output, ckpt.norm)
                                      : loss::attach_supervised_loss(net.graph, net.output, ckpt.norm);
  ckpt.parameters = export_parameters(net);

  ad::AdamState<float> adam;
  const auto params = ad::parameter_views(net.graph);
  const auto grads = ad::gradient_views(net.graph);
  const std::vector<std::span<const float>> cgrads(grads.begin(), grads.end());
  ad::Tensor<float> x, t;
  bool stop = false;
  for (int epoch = 0; epoch < cfg.epochs && !stop; ++epoch) {
    const double lr = lr_at(cfg, epoch);
    const auto plan = epoch_plan(origins, cfg.seed, epoch);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < plan.size(); begin += static_cast<std::size_t>(cfg.batch_size)) {
      if (cfg.max_steps > 0 && ckpt.step >= cfg.max_steps) {
        stop = true;
        break;
      }
      const std::size_t count = std::min(plan.size() - begin, static_cast<std::size_t>(cfg.batch_size));
      fill_batch(scenes, plan, begin, count, patch, ckpt.norm, cfg.recenter, x, t);
      const float loss = net.graph.forward({{"x", x}, {loss::kTargetInput, t}}, lossn.loss).data[0];
      if (!std::isfinite(loss)) {
        throw Error(ErrorCode::diverged, "non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                             std::to_string(batches) + " (input " + batch_stats(x) + "; output " +
                                             batch_stats(net.graph.value(net.output)) + ")");
      }
      net.graph.backward(lossn.loss);
      ad::clip_global_norm(grads, cfg.grad_norm_clip);
      ad::adam_step(params, cgrads, adam, lr);
      ++ckpt.step;
      ++batches;
      loss_sum += loss;
      if (opts.log != nullptr) {
        *opts.log << nlohmann::json{{"epoch", epoch}, {"step", ckpt.step}, {"lr", lr}, {"loss", loss}}.dump() << '\n';
      }
    }
    if (batches == 0) break;
    const double mean_loss = loss_sum / static_cast<double>(batches);
    ckpt.epoch = epoch + 1;
    ckpt.loss_history.push_back(mean_loss);
    ckpt.lr_history.push_back(lr);
    ckpt.parameters = export_parameters(net);
    store_optimizer(ckpt, net, adam);
    const bool best = mean_loss < ckpt.best_loss;
    if (best) ckpt.best_loss = mean_loss;
    if (!opts.checkpoint_path.empty()) {
      save_checkpoint(ckpt, opts.checkpoint_path);
      if (best) save_checkpoint(ckpt, best_checkpoint_path(opts.checkpoint_path));
    }
    if (opts.on_epoch) opts.on_epoch(ckpt);
  }
  return ckpt;
}

}  // namespace detail

/// Self-supervised training: each patch maps log ã² to a target log b̃² (or the reverse).
inline Checkpoint train(const std::vector<ComplexImage>& images, const TrainConfig& cfg,
                        const TrainOptions& opts = {}) {
  std::vector<ScenePair> scenes;
  for (const auto& img : images) scenes.push_back(merlin_scene(img));
  return detail::run_training(scenes, "merlin", cfg, opts);
}

/// Supervised comparison arm: log intensity of one realization to log intensity of another.
inline Checkpoint train_supervised_baseline(const std::vector<std::pair<ComplexImage, ComplexImage>>& pairs,
                                            const TrainConfig& cfg, const TrainOptions& opts = {}) {
  std::vector<ScenePair> scenes;
  for (const auto& [a, b] : pairs) scenes.push_back(supervised_scene(a, b));
  return detail::run_training(scenes, "supervised", cfg, opts);
}

}  // namespace merlin::train
