#pragma once

// PNG/JPEG encode/decode through OpenCV codecs. Images are RGB in memory.

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <filesystem>
#include <string>
#include <vector>

#include "sensoryeval/error.hpp"
#include "sensoryeval/image.hpp"

namespace sensoryeval::io {

inline Image8 from_mat(const cv::Mat& mat) {
  if (mat.empty()) throw IoError("empty image");
  cv::Mat src;
  if (mat.depth() != CV_8U) throw IoError("only 8-bit images are supported");
  if (mat.channels() == 1) {
    src = mat;
  } else if (mat.channels() == 3) {
    cv::cvtColor(mat, src, cv::COLOR_BGR2RGB);
  } else if (mat.channels() == 4) {
    cv::cvtColor(mat, src, cv::COLOR_BGRA2RGB);
  } else {
    throw IoError("unsupported channel count");
  }
  Image8 out(src.cols, src.rows, src.channels());
  const std::size_t row_bytes = static_cast<std::size_t>(src.cols) * src.channels();
  for (int y = 0; y < src.rows; ++y) {
    const auto* row = src.ptr<std::uint8_t>(y);
    std::copy(row, row + row_bytes, out.data().begin() + static_cast<std::ptrdiff_t>(y * row_bytes));
  }
  return out;
}

/// BGR (or gray) Mat view-copy suitable for OpenCV consumers.
inline cv::Mat to_mat(const Image8& img) {
  const int type = img.channels() == 3 ? CV_8UC3 : CV_8UC1;
  cv::Mat wrapped(img.height(), img.width(), type, const_cast<std::uint8_t*>(img.data().data()));
  cv::Mat out;
  if (img.channels() == 3) {
    cv::cvtColor(wrapped, out, cv::COLOR_RGB2BGR);
  } else {
    out = wrapped.clone();
  }
  return out;
}

inline Image8 read_image(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("image not found: " + path.string());
  cv::Mat mat = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (mat.empty()) throw IoError("cannot decode image: " + path.string());
  return from_mat(mat);
}

inline Image8 decode_image(const std::string& bytes) {
  std::vector<std::uint8_t> buf(bytes.begin(), bytes.end());
  cv::Mat mat = cv::imdecode(buf, cv::IMREAD_UNCHANGED);
  if (mat.empty()) throw IoError("cannot decode image bytes");
  return from_mat(mat);
}

/// Format from extension; PNG is lossless.
inline void write_image(const std::filesystem::path& path, const Image8& img) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), to_mat(img))) throw IoError("cannot write image: " + path.string());
}

inline std::string encode_png(const Image8& img) {
  std::vector<std::uint8_t> buf;
  if (!cv::imencode(".png", to_mat(img), buf)) throw IoError("PNG encoding failed");
  return {buf.begin(), buf.end()};
}

}  // namespace sensoryeval::io
