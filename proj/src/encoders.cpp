#include "tme/encoders.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace tme::enc {

using nn::NodePtr;
using nn::Tape;

namespace {

constexpr char kBackboneMagic[8] = {'T', 'M', 'E', 'C', 'N', 'N', '0', '\0'};
constexpr uint32_t kBackboneVersion = 1;
constexpr long kEmbedChunk = 8;

void write_u32(std::ostream& os, uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
uint32_t read_u32(std::istream& is) {
  uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
void write_u64(std::ostream& os, uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
uint64_t read_u64(std::istream& is) {
  uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

std::vector<ConvBlockSpec> tiny_cnn_blocks(long d_i) {
  if (d_i < 1) throw EngineError("image encoder output dim must be positive");
  // aggressive first stride keeps the 256x256 input cheap on one core
  std::vector<ConvBlockSpec> b(3);
  b[0] = {std::max<long>(8, d_i / 4), 5, 5, 4, 2};
  b[1] = {std::max<long>(8, d_i / 2), 3, 3, 2, 1};
  b[2] = {d_i, 3, 3, 2, 1};
  return b;
}

ImageEncoder build_conv_encoder(long c_in, const std::vector<ConvBlockSpec>& specs) {
  ImageEncoder e;
  e.c_in = c_in;
  long cin = c_in;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& s = specs[i];
    ConvBlock blk;
    blk.spec = s;
    const std::string tag = "conv" + std::to_string(i);
    blk.w = nn::Parameter(tag + ".w", {s.cout, cin * s.kh * s.kw});
    blk.b = nn::Parameter(tag + ".b", {1, s.cout});
    blk.gain = nn::Parameter(tag + ".gain", {1, s.cout});
    blk.shift = nn::Parameter(tag + ".shift", {1, s.cout});
    e.blocks.push_back(std::move(blk));
    cin = s.cout;
  }
  return e;
}

}  // namespace

std::string to_string(BackboneId id) {
  return id == BackboneId::tiny_cnn ? "tiny-cnn" : "pretrained-cnn";
}

BackboneId backbone_from_string(const std::string& s) {
  if (s == "tiny-cnn") return BackboneId::tiny_cnn;
  if (s == "pretrained-cnn") return BackboneId::pretrained_cnn;
  throw EngineError("unknown image backbone '" + s + "'");
}

std::string to_string(EncoderMode m) { return m == EncoderMode::frozen ? "frozen" : "tuned"; }

EncoderMode mode_from_string(const std::string& s) {
  if (s == "frozen") return EncoderMode::frozen;
  if (s == "tuned") return EncoderMode::tuned;
  throw EngineError("unknown encoder mode '" + s + "'");
}

void ImageEncoder::init(Rng& rng) {
  for (auto& blk : blocks) {
    const double sd = std::sqrt(2.0 / static_cast<double>(blk.w.cols()));
    for (long i = 0; i < blk.w.size(); ++i) blk.w.value[i] = sd * rng.normal();
    blk.b.value.setZero();
    blk.gain.value.setOnes();
    blk.shift.value.setZero();
  }
}

nn::ParamList ImageEncoder::params() {
  nn::ParamList out;
  for (auto& blk : blocks) {
    out.push_back(&blk.w);
    out.push_back(&blk.b);
    out.push_back(&blk.gain);
    out.push_back(&blk.shift);
  }
  return out;
}

NodePtr ImageEncoder::forward(Tape* t, const NodePtr& x) const {
  if (x->shape.size() != 4 || x->shape[1] != c_in || x->shape[2] != kImageSide ||
      x->shape[3] != kImageSide)
    throw EngineError("image encoder expects [N, " + std::to_string(c_in) + ", " +
                      std::to_string(kImageSide) + ", " + std::to_string(kImageSide) + "] input");
  NodePtr h = x;
  for (const auto& blk : blocks) {
    auto& wb = const_cast<ConvBlock&>(blk);
    h = nn::conv2d(t, h, nn::leaf(t, wb.w), nn::leaf(t, wb.b), blk.spec.kh, blk.spec.kw,
                   blk.spec.stride, blk.spec.pad);
    h = nn::channel_affine(t, h, nn::leaf(t, wb.gain), nn::leaf(t, wb.shift));
    h = nn::relu(t, h);
  }
  return nn::global_avg_pool(t, h);
}

ImageEncoder make_image_encoder(const ImageEncoderOptions& opts) {
  if (opts.backbone == BackboneId::pretrained_cnn) {
    if (!opts.weights_path.empty() && std::filesystem::exists(opts.weights_path)) {
      ImageEncoder e = load_backbone(opts.weights_path);
      e.mode = opts.mode;
      return e;
    }
    warn("pretrained backbone weights not found at '" + opts.weights_path +
         "'; falling back to tiny-cnn");
  }
  ImageEncoder e = build_conv_encoder(3, tiny_cnn_blocks(opts.d_i));
  e.backbone = BackboneId::tiny_cnn;
  e.mode = opts.mode;
  Rng rng(mix_seed(opts.seed, 0x1c0de5ULL));
  e.init(rng);
  return e;
}

void save_backbone(const ImageEncoder& enc, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw EngineError("cannot write backbone file: " + path);
  os.write(kBackboneMagic, sizeof(kBackboneMagic));
  write_u32(os, kBackboneVersion);
  write_u32(os, static_cast<uint32_t>(enc.c_in));
  write_u32(os, static_cast<uint32_t>(enc.blocks.size()));
  for (const auto& blk : enc.blocks) {
    write_u32(os, static_cast<uint32_t>(blk.spec.cout));
    write_u32(os, static_cast<uint32_t>(blk.spec.kh));
    write_u32(os, static_cast<uint32_t>(blk.spec.kw));
    write_u32(os, static_cast<uint32_t>(blk.spec.stride));
    write_u32(os, static_cast<uint32_t>(blk.spec.pad));
  }
  auto ps = const_cast<ImageEncoder&>(enc).params();
  std::ostringstream blob;
  nn::write_params(blob, ps);
  const std::string bytes = blob.str();
  write_u64(os, static_cast<uint64_t>(bytes.size()));
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  Fnv f;
  f.update(bytes.data(), bytes.size());
  write_u64(os, f.digest());
  if (!os) throw EngineError("backbone write failed: " + path);
}

ImageEncoder load_backbone(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw EngineError("cannot open backbone file: " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kBackboneMagic, sizeof(magic)) != 0)
    throw EngineError("not a backbone file: " + path);
  const uint32_t version = read_u32(is);
  if (version != kBackboneVersion)
    throw EngineError("unsupported backbone version " + std::to_string(version));
  const long c_in = read_u32(is);
  const uint32_t n_blocks = read_u32(is);
  if (!is || c_in < 1 || n_blocks < 1 || n_blocks > 64)
    throw EngineError("backbone header malformed: " + path);
  std::vector<ConvBlockSpec> specs(n_blocks);
  for (auto& s : specs) {
    s.cout = read_u32(is);
    s.kh = static_cast<int>(read_u32(is));
    s.kw = static_cast<int>(read_u32(is));
    s.stride = static_cast<int>(read_u32(is));
    s.pad = static_cast<int>(read_u32(is));
    if (!is || s.cout < 1 || s.kh < 1 || s.kw < 1 || s.stride < 1 || s.pad < 0)
      throw EngineError("backbone header malformed: " + path);
  }
  const uint64_t blob_size = read_u64(is);
  std::string bytes(blob_size, '\0');
  is.read(bytes.data(), static_cast<std::streamsize>(blob_size));
  const uint64_t stored_hash = read_u64(is);
  if (!is) throw EngineError("backbone file truncated: " + path);
  Fnv f;
  f.update(bytes.data(), bytes.size());
  if (f.digest() != stored_hash) throw EngineError("backbone content hash mismatch: " + path);

  ImageEncoder e = build_conv_encoder(c_in, specs);
  e.backbone = BackboneId::pretrained_cnn;
  auto ps = e.params();
  std::istringstream blob(bytes);
  nn::read_params(blob, ps);
  return e;
}

NodePtr pack_images(Tape* t, const std::vector<const ImageArray*>& images) {
  const long n = static_cast<long>(images.size());
  if (n == 0) throw EngineError("pack_images: empty batch");
  const long plane = static_cast<long>(kImageSide) * kImageSide;
  nn::Arr buf(n * 3 * plane);
  for (long i = 0; i < n; ++i) {
    ImageArray im = to_three_channels(*images[static_cast<std::size_t>(i)]);
    if (im.h != kImageSide || im.w != kImageSide)
      im = resize_bilinear(im, kImageSide, kImageSide);
    const float* src = im.data.data();
    double* dst = buf.data() + i * 3 * plane;
    for (long j = 0; j < 3 * plane; ++j) dst[j] = static_cast<double>(src[j]);
  }
  return nn::constant(t, std::move(buf), {n, 3, kImageSide, kImageSide});
}

Eigen::MatrixXd image_embed(const ImageEncoder& enc, const std::vector<const ImageArray*>& images) {
  const long n = static_cast<long>(images.size());
  Eigen::MatrixXd out(n, enc.out_dim());
  for (long start = 0; start < n; start += kEmbedChunk) {
    const long m = std::min(kEmbedChunk, n - start);
    std::vector<const ImageArray*> chunk(images.begin() + start, images.begin() + start + m);
    auto y = enc.forward(nullptr, pack_images(nullptr, chunk));
    for (long i = 0; i < m; ++i)
      for (long j = 0; j < enc.out_dim(); ++j) out(start + i, j) = y->mat()(i, j);
  }
  return out;
}

MlpTabularEncoder::MlpTabularEncoder(long n_num, std::vector<long> vocab)
    : n_numeric(n_num), cat_vocab(std::move(vocab)) {
  long in = n_numeric;
  for (std::size_t c = 0; c < cat_vocab.size(); ++c) {
    if (cat_vocab[c] < 1) throw EngineError("categorical vocabulary must be positive");
    cat_embeds.emplace_back("mlp.cat" + std::to_string(c), cat_vocab[c], kCatWidth);
    in += kCatWidth;
  }
  if (in < 1) throw EngineError("tabular encoder needs at least one input column");
  l1 = nn::Linear("mlp.l1", in, kHidden);
  l2 = nn::Linear("mlp.l2", kHidden, kHidden);
  l3 = nn::Linear("mlp.l3", kHidden, kOut);
}

void MlpTabularEncoder::init(Rng& rng) {
  for (auto& e : cat_embeds) e.init_normal(rng, 0.1);
  l1.init_xavier(rng);
  l2.init_xavier(rng);
  l3.init_xavier(rng);
}

nn::ParamList MlpTabularEncoder::params() {
  nn::ParamList out;
  for (auto& e : cat_embeds) e.collect(out);
  l1.collect(out);
  l2.collect(out);
  l3.collect(out);
  return out;
}

NodePtr MlpTabularEncoder::forward(Tape* t, const EncodedInputs& rows) const {
  if (rows.numeric.cols() != n_numeric)
    throw EngineError("tabular encoder: expected " + std::to_string(n_numeric) +
                      " numeric columns, got " + std::to_string(rows.numeric.cols()));
  if (rows.cat_codes.size() != cat_vocab.size())
    throw EngineError("tabular encoder: categorical column count mismatch");
  if (!rows.numeric.allFinite())
    throw EngineError("tabular encoder requires fully observed rows; impute first");
  const long n = rows.numeric.rows();

  NodePtr h;
  if (n_numeric > 0) {
    nn::Mat num = rows.numeric;
    h = nn::constant(t, num);
  }
  for (std::size_t c = 0; c < cat_vocab.size(); ++c) {
    const auto& codes = rows.cat_codes[c];
    if (static_cast<long>(codes.size()) != n)
      throw EngineError("tabular encoder: ragged categorical column");
    for (int code : codes)
      if (code < 0 || code >= cat_vocab[c])
        throw EngineError("tabular encoder: category code out of range");
    auto emb = cat_embeds[c].forward(t, codes);
    h = h ? nn::concat_cols(t, h, emb) : emb;
  }
  h = nn::relu(t, l1.forward(t, h));
  h = nn::relu(t, l2.forward(t, h));
  return l3.forward(t, h);
}

MlpTabularEncoder make_mlp_encoder(const Normalizer& norm, uint64_t seed) {
  long n_num = 0;
  std::vector<long> vocab;
  for (long j = 0; j < norm.d(); ++j) {
    if (norm.kinds[static_cast<std::size_t>(j)] == ColumnKind::numeric)
      ++n_num;
    else
      vocab.push_back(norm.n_local_codes(j));
  }
  MlpTabularEncoder enc(n_num, std::move(vocab));
  Rng rng(mix_seed(seed, 0x7ab17eULL));
  enc.init(rng);
  return enc;
}

Eigen::MatrixXd mlp_embed(const MlpTabularEncoder& enc, const EncodedInputs& rows) {
  auto y = enc.forward(nullptr, rows);
  Eigen::MatrixXd out(y->rows(), y->cols());
  for (long i = 0; i < y->rows(); ++i)
    for (long j = 0; j < y->cols(); ++j) out(i, j) = y->mat()(i, j);
  return out;
}

}  // namespace tme::enc
