#pragma once

// Convolutional feature extractors: the VGG-16 stack and the ResNet-18/50
// residual stacks, each optionally narrowed by an integer channel divisor.

#include <fmt/format.h>

#include <algorithm>
#include <memory>
#include <optional>
#include <string>
#include <string_view>

#include "sensoryeval/nn/layers.hpp"

namespace sensoryeval::nn {

enum class BackboneId { kVgg16, kResnet18, kResnet50 };

inline std::string_view backbone_name(BackboneId id) {
  switch (id) {
    case BackboneId::kVgg16: return "vgg16";
    case BackboneId::kResnet18: return "resnet18";
    case BackboneId::kResnet50: return "resnet50";
  }
  return "";
}

inline std::optional<BackboneId> parse_backbone(std::string_view name) {
  for (BackboneId id : {BackboneId::kVgg16, BackboneId::kResnet18, BackboneId::kResnet50}) {
    if (backbone_name(id) == name) return id;
  }
  return std::nullopt;
}

struct Backbone {
  std::unique_ptr<Sequential> net;
  int out_channels = 0;
};

namespace detail {

inline int narrow(int channels, int divisor) { return std::max(1, channels / divisor); }

inline Backbone vgg16(int div, NormalSource& rng) {
  static constexpr int kPlan[] = {64, 64, 0, 128, 128, 0, 256, 256, 256, 0,
                                  512, 512, 512, 0, 512, 512, 512, 0};
  auto net = std::make_unique<Sequential>();
  int in = 3;
  int conv_index = 0;
  for (int c : kPlan) {
    if (c == 0) {
      net->add<MaxPool2d>(2, 2);
      continue;
    }
    const int out = narrow(c, div);
    auto& conv = net->add<Conv2d>(fmt::format("backbone.conv{}", conv_index++), in, out, 3, 1, 1, true);
    conv.init(rng);
    net->add<Relu>();
    in = out;
  }
  static_cast<Conv2d&>(*net->layers().front()).set_propagate_input_grad(false);
  return {std::move(net), in};
}

inline std::unique_ptr<Sequential> conv_affine(const std::string& name, int in, int out, int k,
                                               int stride, int pad, bool relu, float gamma,
                                               NormalSource& rng) {
  auto seq = std::make_unique<Sequential>();
  seq->add<Conv2d>(name + ".conv", in, out, k, stride, pad, false).init(rng);
  seq->add<ChannelAffine>(name + ".bn", out, gamma);
  if (relu) seq->add<Relu>();
  return seq;
}

inline void append(Sequential& dst, std::unique_ptr<Sequential> src) {
  for (auto& l : src->layers()) dst.push(std::move(l));
}

/// Initial scale of the last affine in each residual branch.
inline constexpr float kBranchGamma = 0.5f;

inline Backbone resnet(bool bottleneck, const int (&blocks)[4], int div, NormalSource& rng) {
  auto net = std::make_unique<Sequential>();
  const int stem = narrow(64, div);
  append(*net, conv_affine("backbone.stem", 3, stem, 7, 2, 3, true, 1.0f, rng));
  static_cast<Conv2d&>(*net->layers().front()).set_propagate_input_grad(false);
  net->add<MaxPool2d>(3, 2, 1);
  const int expansion = bottleneck ? 4 : 1;
  int in = stem;
  for (int stage = 0; stage < 4; ++stage) {
    const int planes = narrow(64 << stage, div);
    for (int b = 0; b < blocks[stage]; ++b) {
      const int stride = (stage > 0 && b == 0) ? 2 : 1;
      const std::string name = fmt::format("backbone.layer{}.{}", stage + 1, b);
      const int out = planes * expansion;
      auto main = std::make_unique<Sequential>();
      if (bottleneck) {
        append(*main, conv_affine(name + ".a", in, planes, 1, 1, 0, true, 1.0f, rng));
        append(*main, conv_affine(name + ".b", planes, planes, 3, stride, 1, true, 1.0f, rng));
        append(*main, conv_affine(name + ".c", planes, out, 1, 1, 0, false, kBranchGamma, rng));
      } else {
        append(*main, conv_affine(name + ".a", in, planes, 3, stride, 1, true, 1.0f, rng));
        append(*main, conv_affine(name + ".b", planes, out, 3, 1, 1, false, kBranchGamma, rng));
      }
      std::unique_ptr<Sequential> shortcut;
      if (stride != 1 || in != out) {
        shortcut = conv_affine(name + ".down", in, out, 1, stride, 0, false, 1.0f, rng);
      }
      net->add<Residual>(std::move(main), std::move(shortcut));
      in = out;
    }
  }
  return {std::move(net), in};
}

}  // namespace detail

/// Builds a backbone with seeded He-normal weights. Real use overwrites them
/// from a weights file.
inline Backbone build_backbone(BackboneId id, int width_divisor, std::uint64_t seed) {
  if (width_divisor < 1) throw ValidationError("width divisor must be >= 1");
  NormalSource rng(seed);
  switch (id) {
    case BackboneId::kVgg16: return detail::vgg16(width_divisor, rng);
    case BackboneId::kResnet18: {
      static constexpr int kBlocks[4] = {2, 2, 2, 2};
      return detail::resnet(false, kBlocks, width_divisor, rng);
    }
    case BackboneId::kResnet50: {
      static constexpr int kBlocks[4] = {3, 4, 6, 3};
      return detail::resnet(true, kBlocks, width_divisor, rng);
    }
  }
  throw ValidationError("unknown backbone");
}

}  // namespace sensoryeval::nn
