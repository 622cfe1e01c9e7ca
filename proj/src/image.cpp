#include "tme/image.hpp"

#include <algorithm>
#include <cmath>
#include <opencv2/imgcodecs.hpp>

#include "tme/common.hpp"

namespace tme {

ImageArray decode_image(const std::string& absolute_path) {
  cv::Mat img = cv::imread(absolute_path, cv::IMREAD_UNCHANGED);
  if (img.empty()) throw EngineError("cannot decode image: " + absolute_path);
  int ch = img.channels();
  if (ch != 1 && ch != 3 && ch != 4)
    throw EngineError("unsupported channel count in image: " + absolute_path);
  cv::Mat f;
  img.convertTo(f, CV_32FC(ch), img.depth() == CV_16U ? 1.0 / 65535.0 : 1.0 / 255.0);

  int out_ch = ch == 1 ? 1 : 3;
  ImageArray out = ImageArray::zeros(out_ch, img.rows, img.cols);
  if (ch == 1) {
    for (int y = 0; y < f.rows; ++y)
      for (int x = 0; x < f.cols; ++x) out.at(0, y, x) = f.at<float>(y, x);
  } else {
    // OpenCV loads BGR(A); store RGB planes, dropping alpha
    for (int y = 0; y < f.rows; ++y) {
      const float* row = f.ptr<float>(y);
      for (int x = 0; x < f.cols; ++x) {
        out.at(0, y, x) = row[x * ch + 2];
        out.at(1, y, x) = row[x * ch + 1];
        out.at(2, y, x) = row[x * ch + 0];
      }
    }
  }
  return out;
}

ImageArray resize_bilinear(const ImageArray& src, int out_h, int out_w) {
  if (src.h == out_h && src.w == out_w) return src;
  ImageArray dst = ImageArray::zeros(src.ch, out_h, out_w);
  const double sy = static_cast<double>(src.h) / out_h;
  const double sx = static_cast<double>(src.w) / out_w;
  for (int y = 0; y < out_h; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    int y0 = static_cast<int>(std::floor(fy));
    double wy = fy - y0;
    int y0c = std::clamp(y0, 0, src.h - 1);
    int y1c = std::clamp(y0 + 1, 0, src.h - 1);
    for (int x = 0; x < out_w; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      int x0 = static_cast<int>(std::floor(fx));
      double wx = fx - x0;
      int x0c = std::clamp(x0, 0, src.w - 1);
      int x1c = std::clamp(x0 + 1, 0, src.w - 1);
      for (int c = 0; c < src.ch; ++c) {
        double v00 = src.at(c, y0c, x0c);
        double v01 = src.at(c, y0c, x1c);
        double v10 = src.at(c, y1c, x0c);
        double v11 = src.at(c, y1c, x1c);
        double v0 = v00 * (1.0 - wx) + v01 * wx;
        double v1 = v10 * (1.0 - wx) + v11 * wx;
        dst.at(c, y, x) = static_cast<float>(v0 * (1.0 - wy) + v1 * wy);
      }
    }
  }
  return dst;
}

ImageArray to_three_channels(const ImageArray& src) {
  if (src.ch == 3) return src;
  if (src.ch != 1) throw EngineError("to_three_channels: expected 1 or 3 channels");
  ImageArray out = ImageArray::zeros(3, src.h, src.w);
  for (int c = 0; c < 3; ++c)
    std::copy(src.data.begin(), src.data.end(),
              out.data.begin() + static_cast<std::ptrdiff_t>(c) * src.h * src.w);
  return out;
}

uint64_t image_hash(const ImageArray& im) {
  Fnv f;
  f.update_pod(im.ch);
  f.update_pod(im.h);
  f.update_pod(im.w);
  f.update(im.data.data(), im.data.size() * sizeof(float));
  return f.digest();
}

}  // namespace tme
