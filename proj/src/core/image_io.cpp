#include "scdd/core/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "scdd/core/errors.hpp"

namespace scdd {

Image16 quantize16(std::span<const double> chw, const InputShape& shape) {
  const std::size_t n = static_cast<std::size_t>(shape.channels) * shape.height * shape.width;
  if (chw.size() != n) throw ShapeError("quantize16: buffer does not match image shape");
  Image16 img;
  img.shape = shape;
  img.pixels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double v = std::isfinite(chw[i]) ? std::clamp(chw[i], 0.0, 1.0) : 0.0;
    img.pixels[i] = static_cast<std::uint16_t>(std::lround(v * 65535.0));
  }
  return img;
}

std::vector<double> dequantize16(const Image16& image) {
  std::vector<double> out(image.pixels.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = image.pixels[i] / 65535.0;
  return out;
}

void write_png16(const std::filesystem::path& file, const Image16& image) {
  const int C = image.shape.channels, H = image.shape.height, W = image.shape.width;
  if (C != 1 && C != 3) throw ShapeError("PNG export supports 1 or 3 channels");
  cv::Mat m(H, W, C == 3 ? CV_16UC3 : CV_16UC1);
  for (int y = 0; y < H; ++y) {
    auto* row = m.ptr<std::uint16_t>(y);
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < C; ++c) {
        // OpenCV stores color as BGR
        const int src_c = C == 3 ? 2 - c : c;
        row[x * C + c] = image.pixels[(static_cast<std::size_t>(src_c) * H + y) * W + x];
      }
  }
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  bool ok = false;
  try {
    ok = cv::imwrite(file.string(), m);
  } catch (const cv::Exception& e) {
    throw IoError("cannot write " + file.string() + ": " + e.what());
  }
  if (!ok) throw IoError("cannot write " + file.string());
}

Image16 read_png16(const std::filesystem::path& file) {
  cv::Mat m = cv::imread(file.string(), cv::IMREAD_UNCHANGED);
  if (m.empty()) throw FormatError("cannot decode image " + file.string());
  if (m.depth() == CV_8U) m.convertTo(m, CV_16U, 257.0);
  if (m.depth() != CV_16U) throw FormatError(file.string() + ": unsupported pixel depth");
  if (m.channels() == 4) cv::cvtColor(m, m, cv::COLOR_BGRA2BGR);
  const int C = m.channels(), H = m.rows, W = m.cols;
  Image16 img;
  img.shape = {C, H, W};
  img.pixels.resize(static_cast<std::size_t>(C) * H * W);
  for (int y = 0; y < H; ++y) {
    const auto* row = m.ptr<std::uint16_t>(y);
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < C; ++c) {
        const int dst_c = C == 3 ? 2 - c : c;
        img.pixels[(static_cast<std::size_t>(dst_c) * H + y) * W + x] = row[x * C + c];
      }
  }
  return img;
}

}  // namespace scdd
