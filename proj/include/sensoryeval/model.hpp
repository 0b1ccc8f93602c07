#pragma once

// Acceptability-index regressor: a convolutional backbone with a small
// fully-connected head, trained in two phases (frozen backbone, then full
// fine-tune) against mean absolute error.

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <memory>
#include <numeric>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "sensoryeval/dataset.hpp"
#include "sensoryeval/error.hpp"
#include "sensoryeval/hedonic.hpp"
#include "sensoryeval/image.hpp"
#include "sensoryeval/image_io.hpp"
#include "sensoryeval/imageproc.hpp"
#include "sensoryeval/losses.hpp"
#include "sensoryeval/nn/architectures.hpp"
#include "sensoryeval/nn/container.hpp"
#include "sensoryeval/nn/layers.hpp"
#include "sensoryeval/nn/optim.hpp"

namespace sensoryeval::model {

using nn::BackboneId;

struct HeadLayer {
  enum class Kind { kGlobalAvgPool, kDense, kRelu, kDropout };
  Kind kind = Kind::kDense;
  int units = 0;      // dense only
  double rate = 0.0;  // dropout only

  friend bool operator==(const HeadLayer&, const HeadLayer&) = default;
};

/// Average pooling, 256 rectified units, dropout 0.5, one linear output.
inline std::vector<HeadLayer> default_head() {
  using K = HeadLayer::Kind;
  return {{K::kGlobalAvgPool}, {K::kDense, 256}, {K::kRelu}, {K::kDropout, 0, 0.5}, {K::kDense, 1}};
}

/// Text form, e.g. "gap,dense:256,relu,dropout:0.5,dense:1".
inline std::string format_head(const std::vector<HeadLayer>& head) {
  std::string out;
  for (const auto& l : head) {
    if (!out.empty()) out += ',';
    switch (l.kind) {
      case HeadLayer::Kind::kGlobalAvgPool: out += "gap"; break;
      case HeadLayer::Kind::kDense: out += fmt::format("dense:{}", l.units); break;
      case HeadLayer::Kind::kRelu: out += "relu"; break;
      case HeadLayer::Kind::kDropout: out += fmt::format("dropout:{}", l.rate); break;
    }
  }
  return out;
}

inline std::vector<HeadLayer> parse_head(const std::string& text) {
  std::vector<HeadLayer> head;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    const auto colon = tok.find(':');
    const std::string name = tok.substr(0, colon);
    const std::string arg = colon == std::string::npos ? "" : tok.substr(colon + 1);
    try {
      if (name == "gap") {
        head.push_back({HeadLayer::Kind::kGlobalAvgPool});
      } else if (name == "dense") {
        head.push_back({HeadLayer::Kind::kDense, std::stoi(arg)});
      } else if (name == "relu") {
        head.push_back({HeadLayer::Kind::kRelu});
      } else if (name == "dropout") {
        head.push_back({HeadLayer::Kind::kDropout, 0, std::stod(arg)});
      } else {
        throw ValidationError("unknown head layer: " + tok);
      }
    } catch (const std::logic_error& e) {
      if (dynamic_cast<const ValidationError*>(&e)) throw;
      throw ValidationError("bad head layer argument: " + tok);
    }
  }
  return head;
}

inline void validate_head(const std::vector<HeadLayer>& head) {
  using K = HeadLayer::Kind;
  if (head.empty() || head.front().kind != K::kGlobalAvgPool) {
    throw ValidationError("head must start with global average pooling");
  }
  if (head.back().kind != K::kDense || head.back().units != 1) {
    throw ValidationError("head must end in a single linear output unit");
  }
  if (std::none_of(head.begin(), head.end(), [](const HeadLayer& l) { return l.kind == K::kDropout; })) {
    throw ValidationError("head must contain at least one dropout layer");
  }
  for (std::size_t i = 0; i < head.size(); ++i) {
    if (i > 0 && head[i].kind == K::kGlobalAvgPool) throw ValidationError("pooling must come first");
    if (head[i].kind == K::kDense && head[i].units <= 0) throw ValidationError("dense units must be > 0");
    if (head[i].kind == K::kDropout && !(head[i].rate >= 0.0 && head[i].rate < 1.0)) {
      throw ValidationError("dropout rate must be in [0, 1)");
    }
  }
}

struct RegressorSpec {
  BackboneId backbone = BackboneId::kVgg16;
  std::vector<HeadLayer> head = default_head();
  int input_size = 224;
  /// Divides every backbone channel count; 1 is the full-width network.
  int width_divisor = 1;
  /// Seeds head initialization.
  std::uint64_t seed = 0;
  std::filesystem::path backbone_weights;
};

/// Only the CPU is supported; TRAIN_DEVICE may be unset or "cpu".
inline std::string resolve_device() {
  const char* env = std::getenv("TRAIN_DEVICE");
  std::string dev = env == nullptr ? "cpu" : env;
  std::transform(dev.begin(), dev.end(), dev.begin(), [](unsigned char c) { return std::tolower(c); });
  if (dev.empty()) dev = "cpu";
  if (dev != "cpu") throw ValidationError("unsupported TRAIN_DEVICE '" + dev + "' (only cpu)");
  return dev;
}

/// Writes seeded He-initialized backbone weights in the container format.
inline void save_backbone_weights(const std::filesystem::path& path, BackboneId id,
                                  int width_divisor, std::uint64_t seed) {
  nn::Backbone bb = nn::build_backbone(id, width_divisor, seed);
  std::vector<nn::Parameter*> params;
  bb.net->collect(params);
  const std::vector<const nn::Parameter*> cparams(params.begin(), params.end());
  nlohmann::json meta{{"kind", "backbone"},
                      {"backbone_id", std::string(nn::backbone_name(id))},
                      {"width_divisor", width_divisor},
                      {"init_seed", seed}};
  nn::write_container(path, meta, cparams);
}

enum class Scope { kHeadOnly, kAll };
enum class Phase { kFeatureExtractor, kFineTune };

inline constexpr std::array<float, 3> kImageMean = {0.485f, 0.456f, 0.406f};
inline constexpr std::array<float, 3> kImageStd = {0.229f, 0.224f, 0.225f};

class Regressor {
 public:
  /// Builds the network and loads backbone weights from spec.backbone_weights.
  static Regressor build(const RegressorSpec& spec) {
    if (spec.backbone_weights.empty() || !std::filesystem::exists(spec.backbone_weights)) {
      throw IoError("backbone weights not found: '" + spec.backbone_weights.string() +
                    "' (create one with `sensoryeval init-backbone`)");
    }
    const nn::Container c = nn::read_container(spec.backbone_weights);
    const auto meta_id = c.meta.value("backbone_id", std::string());
    if (meta_id != nn::backbone_name(spec.backbone) ||
        c.meta.value("width_divisor", 0) != spec.width_divisor) {
      throw IoError(fmt::format("backbone weights are for {} /{}, spec wants {} /{}", meta_id,
                                c.meta.value("width_divisor", 0), nn::backbone_name(spec.backbone),
                                spec.width_divisor));
    }
    Regressor r(spec);
    nn::load_into(c, r.backbone_params());
    r.set_trainable(Scope::kHeadOnly);
    return r;
  }

  /// Restores a full checkpoint written by save().
  static Regressor load(const std::filesystem::path& path) {
    const nn::Container c = nn::read_container(path);
    if (c.meta.value("kind", std::string()) != "regressor") {
      throw IoError("not a regressor checkpoint: " + path.string());
    }
    RegressorSpec spec;
    try {
      const auto id = nn::parse_backbone(c.meta.at("backbone_id").get<std::string>());
      if (!id) throw IoError("unknown backbone in checkpoint");
      spec.backbone = *id;
      spec.head = parse_head(c.meta.at("head").get<std::string>());
      spec.input_size = c.meta.at("input_size").get<int>();
      spec.width_divisor = c.meta.at("width_divisor").get<int>();
      spec.seed = c.meta.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
      throw IoError(std::string("corrupt checkpoint header: ") + e.what());
    }
    Regressor r(spec);
    nn::load_into(c, r.all_params());
    r.set_trainable(c.meta.value("scope", std::string("head_only")) == "all" ? Scope::kAll
                                                                            : Scope::kHeadOnly);
    r.history_digest_ = c.meta.value("history_digest", std::string());
    return r;
  }

  void save(const std::filesystem::path& path, const std::string& history_digest = "") const {
    std::vector<nn::Parameter*> params = const_cast<Regressor*>(this)->all_params();
    const std::vector<const nn::Parameter*> cparams(params.begin(), params.end());
    nlohmann::json meta{{"kind", "regressor"},
                        {"backbone_id", std::string(nn::backbone_name(spec_.backbone))},
                        {"width_divisor", spec_.width_divisor},
                        {"input_size", spec_.input_size},
                        {"head", format_head(spec_.head)},
                        {"seed", spec_.seed},
                        {"scope", scope_ == Scope::kAll ? "all" : "head_only"},
                        {"history_digest", history_digest.empty() ? history_digest_ : history_digest}};
    nn::write_container(path, meta, cparams);
  }

  Regressor(Regressor&&) noexcept = default;
  Regressor& operator=(Regressor&&) noexcept = default;

  const RegressorSpec& spec() const { return spec_; }
  Scope scope() const { return scope_; }
  const std::string& history_digest() const { return history_digest_; }
  void set_history_digest(std::string d) { history_digest_ = std::move(d); }

  /// Flags parameter groups and records a digest of whatever is frozen.
  void set_trainable(Scope scope) {
    scope_ = scope;
    for (nn::Parameter* p : backbone_params()) p->trainable = scope == Scope::kAll;
    for (nn::Parameter* p : head_params()) p->trainable = true;
    frozen_digest_ = scope == Scope::kHeadOnly ? backbone_digest() : 0;
  }

  bool backbone_trainable() const { return scope_ == Scope::kAll; }

  std::uint64_t backbone_digest() const {
    std::vector<nn::Parameter*> ps;
    backbone_->collect(ps);
    return nn::digest({ps.begin(), ps.end()});
  }

  std::uint64_t head_digest() const {
    std::vector<nn::Parameter*> ps;
    head_->collect(ps);
    return nn::digest({ps.begin(), ps.end()});
  }

  /// Digest recorded by the last set_trainable(kHeadOnly); 0 otherwise.
  std::uint64_t frozen_digest() const { return frozen_digest_; }

  /// True when the frozen backbone still matches its recorded digest.
  bool frozen_intact() const { return scope_ == Scope::kAll || backbone_digest() == frozen_digest_; }

  std::vector<nn::Parameter*> backbone_params() const {
    std::vector<nn::Parameter*> ps;
    backbone_->collect(ps);
    return ps;
  }

  std::vector<nn::Parameter*> head_params() const {
    std::vector<nn::Parameter*> ps;
    head_->collect(ps);
    return ps;
  }

  std::vector<nn::Parameter*> all_params() const {
    auto ps = backbone_params();
    auto hs = head_params();
    ps.insert(ps.end(), hs.begin(), hs.end());
    return ps;
  }

  /// Resized, normalized (1, 3, S, S) input tensor.
  nn::Tensor prepare(const Image8& image) const {
    if (image.empty()) throw ValidationError("empty crop");
    const int s = spec_.input_size;
    const Image8 resized = imageproc::resize(image, s, s, imageproc::Interpolation::kLinear);
    nn::Tensor t({1, 3, s, s});
    for (int c = 0; c < 3; ++c) {
      const int src_c = resized.channels() == 3 ? c : 0;
      for (int y = 0; y < s; ++y) {
        for (int x = 0; x < s; ++x) {
          const float v = resized.at(x, y, src_c) / 255.0f;
          t.values[(static_cast<std::size_t>(c) * s + y) * s + x] = (v - kImageMean[c]) / kImageStd[c];
        }
      }
    }
    return t;
  }

  nn::Tensor features(const nn::Tensor& inputs) const { return backbone_->infer(inputs); }
  nn::Tensor head_infer(const nn::Tensor& feats) const { return head_->infer(feats); }

  /// Raw (unclamped) outputs for a batch of prepared inputs.
  std::vector<double> infer(const nn::Tensor& inputs) const {
    const nn::Tensor out = head_->infer(backbone_->infer(inputs));
    return {out.values.begin(), out.values.end()};
  }

  double infer_one(const Image8& image) const { return infer(prepare(image)).front(); }

  nn::Sequential& backbone() { return *backbone_; }
  nn::Sequential& head() { return *head_; }

  /// Restarts every dropout stream from a seed.
  void reseed_dropout(std::uint64_t seed) {
    std::uint64_t k = 0;
    for (auto& l : head_->layers()) {
      if (auto* d = dynamic_cast<nn::Dropout*>(l.get())) d->reseed(seed * 0x9E3779B97F4A7C15ULL + ++k);
    }
  }

 private:
  explicit Regressor(const RegressorSpec& spec) : spec_(spec) {
    validate_head(spec.head);
    if (spec.input_size < 32) throw ValidationError("input size must be >= 32");
    nn::Backbone bb = nn::build_backbone(spec.backbone, spec.width_divisor, 0);
    backbone_ = std::move(bb.net);
    head_ = std::make_unique<nn::Sequential>();
    nn::NormalSource rng(spec.seed);
    int width = bb.out_channels;
    int dense_index = 0;
    for (std::size_t i = 0; i < spec.head.size(); ++i) {
      const HeadLayer& l = spec.head[i];
      switch (l.kind) {
        case HeadLayer::Kind::kGlobalAvgPool: head_->add<nn::GlobalAvgPool>(); break;
        case HeadLayer::Kind::kRelu: head_->add<nn::Relu>(); break;
        case HeadLayer::Kind::kDropout: head_->add<nn::Dropout>(l.rate, spec.seed + i); break;
        case HeadLayer::Kind::kDense: {
          auto& d = head_->add<nn::Dense>(fmt::format("head.dense{}", dense_index++), width, l.units);
          d.init(rng, i + 1 == spec.head.size() ? 5.0f : 0.0f);
          width = l.units;
          break;
        }
      }
    }
  }

  RegressorSpec spec_;
  std::unique_ptr<nn::Sequential> backbone_;
  std::unique_ptr<nn::Sequential> head_;
  Scope scope_ = Scope::kHeadOnly;
  std::uint64_t frozen_digest_ = 0;
  std::string history_digest_;
};

inline Regressor build_regressor(const RegressorSpec& spec) { return Regressor::build(spec); }

inline Regressor& set_trainable(Regressor& model, Scope scope) {
  model.set_trainable(scope);
  return model;
}

// --- training --------------------------------------------------------------

struct TrainConfig {
  Phase phase = Phase::kFeatureExtractor;
  double learning_rate = 1e-4;
  int batch_size = 32;
  int max_epochs = 25;
  int patience = 10;
  /// Smallest val-loss decrease that counts as an improvement.
  double min_delta = 1e-4;
  std::optional<double> target_mae;
  std::uint64_t seed = 0;

  /// 25 epochs for the VGG feature-extractor phase, 50 for ResNets, 15 for
  /// fine-tuning; rate 1e-4, batch 32, patience 10.
  static TrainConfig defaults(Phase phase, BackboneId backbone) {
    TrainConfig c;
    c.phase = phase;
    if (phase == Phase::kFineTune) {
      c.max_epochs = 15;
    } else {
      c.max_epochs = backbone == BackboneId::kVgg16 ? 25 : 50;
    }
    return c;
  }
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_mae = 0.0;
};

enum class StopReason { kMaxEpochs, kPatience, kTargetMae };

inline std::string_view stop_reason_name(StopReason r) {
  switch (r) {
    case StopReason::kMaxEpochs: return "max_epochs";
    case StopReason::kPatience: return "patience";
    case StopReason::kTargetMae: return "target_mae";
  }
  return "";
}

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  double best_val_loss = std::numeric_limits<double>::infinity();
  int best_epoch = 0;
  /// Clamped validation MAE at best_epoch.
  double best_val_mae = std::numeric_limits<double>::infinity();
  StopReason stop_reason = StopReason::kMaxEpochs;
};

inline nlohmann::json to_json(const TrainHistory& h) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : h.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"train_loss", e.train_loss},
                      {"val_loss", e.val_loss},
                      {"val_mae", e.val_mae}});
  }
  return {{"epochs", epochs},
          {"best_val_loss", h.best_val_loss},
          {"best_val_mae", h.best_val_mae},
          {"best_epoch", h.best_epoch},
          {"stop_reason", std::string(stop_reason_name(h.stop_reason))}};
}

inline TrainHistory history_from_json(const nlohmann::json& j) {
  TrainHistory h;
  for (const auto& e : j.at("epochs")) {
    h.epochs.push_back({e.at("epoch").get<int>(), e.at("train_loss").get<double>(),
                        e.at("val_loss").get<double>(), e.at("val_mae").get<double>()});
  }
  h.best_val_loss = j.at("best_val_loss").get<double>();
  h.best_val_mae = j.at("best_val_mae").get<double>();
  h.best_epoch = j.at("best_epoch").get<int>();
  const auto reason = j.at("stop_reason").get<std::string>();
  h.stop_reason = reason == "patience" ? StopReason::kPatience
                  : reason == "target_mae" ? StopReason::kTargetMae
                                           : StopReason::kMaxEpochs;
  return h;
}

inline std::string history_digest(const TrainHistory& h) {
  const std::string text = to_json(h).dump();
  std::uint64_t d = 1469598103934665603ULL;
  for (unsigned char c : text) {
    d ^= c;
    d *= 1099511628211ULL;
  }
  return fmt::format("{:016x}", d);
}

/// Resolves an annotation record to the crop the regressor should see.
using ImageSource = std::function<Image8(const dataset::AnnotationRecord&)>;

namespace detail {

inline nn::Tensor stack_inputs(const Regressor& model, const std::vector<dataset::AnnotationRecord>& recs,
                               const ImageSource& source) {
  const int s = model.spec().input_size;
  nn::Tensor out({static_cast<int>(recs.size()), 3, s, s});
  const std::size_t per = static_cast<std::size_t>(3) * s * s;
  for (std::size_t i = 0; i < recs.size(); ++i) {
    const nn::Tensor one = model.prepare(source(recs[i]));
    std::copy(one.values.begin(), one.values.end(), out.values.begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  return out;
}

/// Backbone features in chunks to bound memory.
inline nn::Tensor chunked_features(const Regressor& model, const nn::Tensor& inputs) {
  constexpr int kChunk = 32;
  const int n = inputs.dim(0);
  nn::Tensor out;
  for (int b = 0; b < n; b += kChunk) {
    const nn::Tensor f = model.features(nn::slice_rows(inputs, b, std::min(n, b + kChunk)));
    if (out.shape.empty()) {
      std::vector<int> shape = f.shape;
      shape[0] = n;
      out = nn::Tensor(shape);
    }
    std::copy(f.values.begin(), f.values.end(),
              out.values.begin() + static_cast<std::ptrdiff_t>(b * f.sample_size()));
  }
  return out;
}

inline std::vector<double> chunked_predict(const Regressor& model, const nn::Tensor& inputs,
                                           bool inputs_are_features) {
  constexpr int kChunk = 32;
  const int n = inputs.dim(0);
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int b = 0; b < n; b += kChunk) {
    const nn::Tensor part = nn::slice_rows(inputs, b, std::min(n, b + kChunk));
    const nn::Tensor y = inputs_are_features ? model.head_infer(part) : model.head_infer(model.features(part));
    out.insert(out.end(), y.values.begin(), y.values.end());
  }
  return out;
}

inline double clamp_index(double v) { return std::clamp(v, 1.0, 9.0); }

inline std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t x = a * 0x9E3779B97F4A7C15ULL ^ (b + 0x632BE59BD9B4E019ULL);
  x ^= x >> 31;
  x *= 0xBF58476D1CE4E5B9ULL;
  x ^= x >> 29;
  return x;
}

}  // namespace detail

/// Minimizes MAE between raw network output and the annotation index.
/// Stops at max_epochs, after `patience` consecutive epochs without a
/// val-loss decrease of at least min_delta, or once the clamped val MAE
/// reaches target_mae. The best-epoch parameters are restored on return.
inline TrainHistory train_phase(Regressor& model, const dataset::DatasetSplit& split,
                                const TrainConfig& cfg, const ImageSource& source) {
  if (split.train.empty() || split.val.empty()) throw ValidationError("train and val sets must be non-empty");
  if (!(cfg.learning_rate > 0.0) || cfg.batch_size <= 0 || cfg.max_epochs <= 0 || cfg.patience <= 0) {
    throw ValidationError("invalid training configuration");
  }
  const Scope wanted = cfg.phase == Phase::kFineTune ? Scope::kAll : Scope::kHeadOnly;
  if (model.scope() != wanted) {
    throw ValidationError("model trainability does not match the training phase");
  }
  resolve_device();

  const bool frozen = !model.backbone_trainable();
  auto targets = [](const std::vector<dataset::AnnotationRecord>& recs) {
    std::vector<double> t;
    for (const auto& r : recs) t.push_back(r.index);
    return t;
  };
  const std::vector<double> y_train = targets(split.train);
  const std::vector<double> y_val = targets(split.val);

  // A frozen backbone's features are computed once.
  nn::Tensor x_train = detail::stack_inputs(model, split.train, source);
  nn::Tensor x_val = detail::stack_inputs(model, split.val, source);
  if (frozen) {
    x_train = detail::chunked_features(model, x_train);
    x_val = detail::chunked_features(model, x_val);
  }

  model.reseed_dropout(cfg.seed);
  const std::vector<nn::Parameter*> params = model.all_params();
  nn::Adam adam(cfg.learning_rate);

  std::vector<std::vector<float>> best_values;
  auto snapshot = [&] {
    best_values.clear();
    for (const nn::Parameter* p : params) best_values.push_back(p->value.values);
  };

  TrainHistory history;
  int stale = 0;
  const std::size_t n = y_train.size();
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    dataset::seeded_shuffle(order, detail::mix(cfg.seed, static_cast<std::uint64_t>(epoch)));

    double loss_sum = 0.0;
    for (std::size_t b = 0; b < n; b += static_cast<std::size_t>(cfg.batch_size)) {
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(b),
                                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n, b + cfg.batch_size)));
      const nn::Tensor xb = nn::gather_rows(x_train, idx);
      nn::zero_grad(params);
      nn::Tensor out = frozen ? model.head().forward_train(xb)
                              : model.head().forward_train(model.backbone().forward_train(xb));
      const double bsz = static_cast<double>(idx.size());
      nn::Tensor grad(out.shape);
      for (std::size_t i = 0; i < idx.size(); ++i) {
        const double diff = out.values[i] - y_train[idx[i]];
        loss_sum += std::abs(diff);
        grad.values[i] = static_cast<float>((diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0)) / bsz);
      }
      const nn::Tensor g_feat = model.head().backward(grad);
      if (!frozen) model.backbone().backward(g_feat);
      adam.step(params);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(n);

    const std::vector<double> pred = detail::chunked_predict(model, x_val, frozen);
    std::vector<double> clamped(pred.size());
    double raw_abs = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      raw_abs += std::abs(pred[i] - y_val[i]);
      clamped[i] = detail::clamp_index(pred[i]);
    }
    rec.val_loss = raw_abs / static_cast<double>(pred.size());
    rec.val_mae = losses::regression_errors(y_val, clamped).mae;
    if (!std::isfinite(rec.train_loss) || !std::isfinite(rec.val_loss)) {
      throw TrainingError(fmt::format("non-finite loss at epoch {} (train {}, val {})", epoch,
                                      rec.train_loss, rec.val_loss));
    }
    history.epochs.push_back(rec);

    if (rec.val_loss < history.best_val_loss) {
      stale = history.best_val_loss - rec.val_loss >= cfg.min_delta ? 0 : stale + 1;
      history.best_val_loss = rec.val_loss;
      history.best_val_mae = rec.val_mae;
      history.best_epoch = epoch;
      snapshot();
    } else {
      ++stale;
    }
    if (cfg.target_mae && rec.val_mae <= *cfg.target_mae) {
      history.stop_reason = StopReason::kTargetMae;
      break;
    }
    if (stale >= cfg.patience) {
      history.stop_reason = StopReason::kPatience;
      break;
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value.values = best_values[i];
  model.set_history_digest(history_digest(history));
  return history;
}

// --- evaluation / prediction -----------------------------------------------

struct PredictionRow {
  std::string image_path;
  double truth = 0.0;
  double prediction = 0.0;  // clamped to [1, 9]
  hedonic::Level level = hedonic::Level::kDislikeExtremely;
  hedonic::Level truth_level = hedonic::Level::kDislikeExtremely;
};

struct RowError {
  std::string image_path;
  std::string message;
};

struct EvaluationReport {
  double mae = 0.0;
  /// Fraction of rows whose predicted level equals the annotated level.
  double level_agreement = 0.0;
  std::vector<PredictionRow> rows;
  std::vector<RowError> errors;
};

/// Unreadable images become row errors; evaluation continues without them.
inline EvaluationReport evaluate(const Regressor& model, const std::vector<dataset::AnnotationRecord>& records,
                                 const ImageSource& source) {
  if (records.empty()) throw ValidationError("evaluate needs at least one record");
  EvaluationReport report;
  std::vector<double> truth;
  std::vector<double> pred;
  int agree = 0;
  for (const auto& r : records) {
    double raw = 0.0;
    try {
      raw = model.infer_one(source(r));
    } catch (const std::exception& e) {
      report.errors.push_back({r.image_path, e.what()});
      continue;
    }
    PredictionRow row;
    row.image_path = r.image_path;
    row.truth = r.index;
    row.prediction = detail::clamp_index(raw);
    row.level = hedonic::level_for(row.prediction);
    row.truth_level = r.level;
    agree += row.level == row.truth_level ? 1 : 0;
    truth.push_back(row.truth);
    pred.push_back(row.prediction);
    report.rows.push_back(row);
  }
  if (report.rows.empty()) throw IoError("no record in the evaluation set could be read");
  report.mae = losses::regression_errors(truth, pred).mae;
  report.level_agreement = static_cast<double>(agree) / static_cast<double>(report.rows.size());
  return report;
}

inline hedonic::AcceptabilityResult predict_index(const Regressor& model, const Image8& crop) {
  if (crop.empty()) throw ValidationError("empty crop");
  return hedonic::make_result(detail::clamp_index(model.infer_one(crop)));
}

/// Loads record images relative to a base directory.
inline ImageSource directory_source(std::filesystem::path base) {
  return [base = std::move(base)](const dataset::AnnotationRecord& r) {
    const std::filesystem::path p(r.image_path);
    return io::read_image(p.is_absolute() ? p : base / p);
  };
}

}  // namespace sensoryeval::model
