#pragma once

#include <optional>
#include <string>
#include <vector>

namespace tme {

// Planar float image, values in [0,1], layout [ch][h][w].
struct ImageArray {
  int ch = 0, h = 0, w = 0;
  std::vector<float> data;

  float& at(int c, int y, int x) { return data[static_cast<std::size_t>((c * h + y) * w + x)]; }
  float at(int c, int y, int x) const {
    return data[static_cast<std::size_t>((c * h + y) * w + x)];
  }
  static ImageArray zeros(int ch, int h, int w) {
    ImageArray im;
    im.ch = ch;
    im.h = h;
    im.w = w;
    im.data.assign(static_cast<std::size_t>(ch) * h * w, 0.0f);
    return im;
  }
};

struct ImageRef {
  std::string path;                  // relative to the manifest directory
  std::optional<ImageArray> loaded;  // present for in-memory datasets
};

// PNG/JPEG decode to [0,1] planar RGB (or single-channel) floats.
ImageArray decode_image(const std::string& absolute_path);

// Bilinear resample with half-pixel centers. Identity when sizes match.
ImageArray resize_bilinear(const ImageArray& src, int out_h, int out_w);

// Replicates a single channel to three; passes 3-channel input through.
ImageArray to_three_channels(const ImageArray& src);

uint64_t image_hash(const ImageArray& im);

}  // namespace tme
