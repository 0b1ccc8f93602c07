#pragma once

// Textual preprocessing chains, e.g. "gamma:2.2,equalize,rotate:30:bicubic,mean3".
//
//   brightness:<alpha>:<beta>   gamma:<g>        sigmoid:<c>:<th>
//   equalize                    mean3            laplacian        gray
//   rotate:<deg>[:interp]       scale:<sx>[:<sy>][:interp]
//   translate:<dx>:<dy>[:interp]  shear:<jx>:<jy>[:interp]
//   resize:<w>:<h>[:interp]
//
// interp is nearest, linear or bicubic (default linear). Rotation, scaling
// and shear are about the image center.

#include <fmt/format.h>

#include <sstream>
#include <string>
#include <vector>

#include "sensoryeval/error.hpp"
#include "sensoryeval/image.hpp"
#include "sensoryeval/imageproc.hpp"

namespace sensoryeval::preprocess {

struct Op {
  std::string name;
  std::vector<std::string> args;
};

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, sep)) out.push_back(tok);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

inline std::vector<Op> parse(const std::string& chain) {
  std::vector<Op> ops;
  for (const auto& tok : split(chain, ',')) {
    if (tok.empty()) throw ValidationError("empty operation in chain");
    auto parts = split(tok, ':');
    Op op{parts.front(), {parts.begin() + 1, parts.end()}};
    ops.push_back(std::move(op));
  }
  return ops;
}

namespace detail {

inline double number(const Op& op, std::size_t i) {
  if (i >= op.args.size()) throw ValidationError(fmt::format("{}: missing argument {}", op.name, i + 1));
  try {
    std::size_t used = 0;
    const double v = std::stod(op.args[i], &used);
    if (used != op.args[i].size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::logic_error&) {
    throw ValidationError(fmt::format("{}: argument '{}' is not a number", op.name, op.args[i]));
  }
}

inline bool is_interp(const std::string& s) { return s == "nearest" || s == "linear" || s == "bicubic"; }

inline imageproc::Interpolation interp(const Op& op, std::size_t i) {
  if (i >= op.args.size()) return imageproc::Interpolation::kLinear;
  const auto& s = op.args[i];
  if (s == "nearest") return imageproc::Interpolation::kNearest;
  if (s == "linear") return imageproc::Interpolation::kLinear;
  if (s == "bicubic") return imageproc::Interpolation::kBicubic;
  throw ValidationError(fmt::format("{}: unknown interpolation '{}'", op.name, s));
}

inline void arity(const Op& op, std::size_t lo, std::size_t hi) {
  if (op.args.size() < lo || op.args.size() > hi) {
    throw ValidationError(fmt::format("{}: expected {}..{} arguments, got {}", op.name, lo, hi, op.args.size()));
  }
}

inline imageproc::AffineMatrix about_center(const Image8& img, const imageproc::AffineMatrix& m) {
  const double cx = (img.width() - 1) / 2.0;
  const double cy = (img.height() - 1) / 2.0;
  return imageproc::compose(imageproc::translate(cx, cy),
                            imageproc::compose(m, imageproc::translate(-cx, -cy)));
}

}  // namespace detail

inline Image8 apply(const Image8& img, const Op& op) {
  using namespace imageproc;
  const std::string& n = op.name;
  if (n == "brightness") {
    detail::arity(op, 2, 2);
    return linear_brightness(img, detail::number(op, 0), detail::number(op, 1));
  }
  if (n == "gamma") {
    detail::arity(op, 1, 1);
    return gamma_correct(img, detail::number(op, 0));
  }
  if (n == "sigmoid") {
    detail::arity(op, 2, 2);
    return sigmoid_stretch(img, detail::number(op, 0), detail::number(op, 1));
  }
  if (n == "equalize" || n == "mean3" || n == "laplacian" || n == "gray") {
    detail::arity(op, 0, 0);
    if (n == "equalize") return equalize_histogram(img);
    if (n == "gray") return to_gray(img);
    return spatial_filter(img, n == "mean3" ? FilterKind::kMean3 : FilterKind::kLaplacian);
  }
  if (n == "rotate") {
    detail::arity(op, 1, 2);
    return warp(img, detail::about_center(img, rotate(detail::number(op, 0))), detail::interp(op, 1));
  }
  if (n == "scale") {
    detail::arity(op, 1, 3);
    const double sx = detail::number(op, 0);
    const bool has_sy = op.args.size() >= 2 && !detail::is_interp(op.args[1]);
    const double sy = has_sy ? detail::number(op, 1) : sx;
    return warp(img, detail::about_center(img, scale(sx, sy)), detail::interp(op, has_sy ? 2 : 1));
  }
  if (n == "translate") {
    detail::arity(op, 2, 3);
    return warp(img, translate(detail::number(op, 0), detail::number(op, 1)), detail::interp(op, 2));
  }
  if (n == "shear") {
    detail::arity(op, 2, 3);
    return warp(img, detail::about_center(img, shear(detail::number(op, 0), detail::number(op, 1))),
                detail::interp(op, 2));
  }
  if (n == "resize") {
    detail::arity(op, 2, 3);
    const double w = detail::number(op, 0);
    const double h = detail::number(op, 1);
    if (w < 1 || h < 1 || w != std::floor(w) || h != std::floor(h)) {
      throw ValidationError("resize: sizes must be positive integers");
    }
    return resize(img, static_cast<int>(w), static_cast<int>(h), detail::interp(op, 2));
  }
  throw ValidationError("unknown operation: " + n);
}

inline Image8 run(const Image8& img, const std::vector<Op>& ops) {
  Image8 out = img;
  for (const auto& op : ops) out = apply(out, op);
  return out;
}

inline Image8 run(const Image8& img, const std::string& chain) { return run(img, parse(chain)); }

}  // namespace sensoryeval::preprocess
