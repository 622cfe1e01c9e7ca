#pragma once

// Image backbone (frozen or tuned) and the MLP tabular baseline.

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "tme/image.hpp"
#include "tme/ingest.hpp"
#include "tme/nn.hpp"

namespace tme::enc {

enum class BackboneId { tiny_cnn, pretrained_cnn };
enum class EncoderMode { frozen, tuned };

std::string to_string(BackboneId id);
BackboneId backbone_from_string(const std::string& s);
std::string to_string(EncoderMode m);
EncoderMode mode_from_string(const std::string& s);

struct ConvBlockSpec {
  long cout = 0;
  int kh = 3, kw = 3, stride = 1, pad = 0;
};

// Conv block: convolution, per-channel affine, relu. The affine stands in
// for batch normalization with stored statistics, so a block's output never
// depends on what else is in the batch.
struct ConvBlock {
  ConvBlockSpec spec;
  nn::Parameter w;      // [cout, cin*kh*kw]
  nn::Parameter b;      // [1, cout]
  nn::Parameter gain;   // [1, cout]
  nn::Parameter shift;  // [1, cout]
};

// All images are resampled to this side length before encoding.
inline constexpr int kImageSide = 256;

struct ImageEncoder {
  BackboneId backbone = BackboneId::tiny_cnn;
  EncoderMode mode = EncoderMode::frozen;
  long c_in = 3;
  std::vector<ConvBlock> blocks;

  long out_dim() const { return blocks.empty() ? 0 : blocks.back().spec.cout; }
  void init(Rng& rng);
  nn::ParamList params();

  // x: [N, c_in, kImageSide, kImageSide] node. Returns [N, out_dim].
  nn::NodePtr forward(nn::Tape* t, const nn::NodePtr& x) const;
};

struct ImageEncoderOptions {
  BackboneId backbone = BackboneId::tiny_cnn;
  EncoderMode mode = EncoderMode::frozen;
  long d_i = 64;             // tiny-cnn output width
  std::string weights_path;  // pretrained backbone file; empty or absent falls back
  uint64_t seed = 0;
};

// Builds the requested encoder. A pretrained backbone whose weights file is
// missing degrades to a freshly initialized tiny-cnn with a warning.
ImageEncoder make_image_encoder(const ImageEncoderOptions& opts);

void save_backbone(const ImageEncoder& enc, const std::string& path);
ImageEncoder load_backbone(const std::string& path);  // throws on corruption

// Resizes to kImageSide, replicates grayscale to 3 channels, and packs a
// [N, 3, side, side] tensor node.
nn::NodePtr pack_images(nn::Tape* t, const std::vector<const ImageArray*>& images);

// Eval-mode batch encode; output row i is the embedding of images[i].
// Chunked internally with a fixed chunk size, so results are reproducible
// bit for bit regardless of how callers batch their requests.
Eigen::MatrixXd image_embed(const ImageEncoder& enc, const std::vector<const ImageArray*>& images);

// Tabular baseline: categorical codes pass through width-8 learned
// embeddings, then two relu hidden layers of width 256 map to 192 dims.
struct MlpTabularEncoder {
  long n_numeric = 0;
  std::vector<long> cat_vocab;  // embedding rows per categorical column
  std::vector<nn::Embedding> cat_embeds;
  nn::Linear l1, l2, l3;

  static constexpr long kCatWidth = 8;
  static constexpr long kHidden = 256;
  static constexpr long kOut = 192;

  MlpTabularEncoder() = default;
  MlpTabularEncoder(long n_numeric, std::vector<long> cat_vocab);
  void init(Rng& rng);
  nn::ParamList params();
  long out_dim() const { return kOut; }

  // rows must be fully observed; any non-finite numeric value or
  // out-of-range code is an error.
  nn::NodePtr forward(nn::Tape* t, const EncodedInputs& rows) const;
};

MlpTabularEncoder make_mlp_encoder(const Normalizer& norm, uint64_t seed);

Eigen::MatrixXd mlp_embed(const MlpTabularEncoder& enc, const EncodedInputs& rows);

}  // namespace tme::enc
