#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "doctest.h"
#include "tme/encoders.hpp"

using namespace tme;
using namespace tme::enc;

namespace {

ImageArray gradient_image(int ch, int h, int w, float tilt) {
  ImageArray im = ImageArray::zeros(ch, h, w);
  for (int c = 0; c < ch; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        im.at(c, y, x) =
            0.5f + tilt * (static_cast<float>(x) / w - 0.5f) + 0.1f * c;
  return im;
}

ImageEncoder tiny(long d_i, uint64_t seed = 3) {
  ImageEncoderOptions o;
  o.d_i = d_i;
  o.seed = seed;
  return make_image_encoder(o);
}

struct TempDir {
  std::filesystem::path dir;
  TempDir() {
    dir = std::filesystem::temp_directory_path() /
          ("tme_enc_" + std::to_string(getpid()));
    std::filesystem::create_directories(dir);
  }
  ~TempDir() { std::filesystem::remove_all(dir); }
  std::string path(const std::string& name) const { return (dir / name).string(); }
};

}  // namespace

TEST_CASE("tiny-cnn output width follows configuration") {
  auto e16 = tiny(16);
  auto e64 = tiny(64);
  CHECK(e16.out_dim() == 16);
  CHECK(e64.out_dim() == 64);
  CHECK(e16.blocks.size() == 3);

  auto im = gradient_image(3, 40, 40, 0.8f);
  auto emb = image_embed(e16, {&im});
  CHECK(emb.rows() == 1);
  CHECK(emb.cols() == 16);
  CHECK(emb.allFinite());
}

TEST_CASE("frozen encoder is deterministic and seed-reproducible") {
  auto im = gradient_image(3, 32, 32, 0.5f);
  auto e = tiny(16, 7);
  auto a = image_embed(e, {&im});
  auto b = image_embed(e, {&im});
  CHECK(a == b);  // bit-identical on repeat

  auto e2 = tiny(16, 7);
  CHECK(nn::params_hash(e.params()) == nn::params_hash(e2.params()));
  auto e3 = tiny(16, 8);
  CHECK(nn::params_hash(e.params()) != nn::params_hash(e3.params()));
}

TEST_CASE("arbitrary input sizes are resampled before encoding") {
  auto e = tiny(16);
  auto wide = gradient_image(3, 300, 512, 0.6f);
  auto square = resize_bilinear(wide, kImageSide, kImageSide);
  auto a = image_embed(e, {&wide});
  auto b = image_embed(e, {&square});
  CHECK((a - b).cwiseAbs().maxCoeff() < 1e-9);

  auto gray = gradient_image(1, 64, 64, 0.4f);
  auto g = image_embed(e, {&gray});
  CHECK(g.allFinite());
}

TEST_CASE("embedding a sample alone or in a batch gives the same vector") {
  auto e = tiny(16);
  std::vector<ImageArray> imgs;
  for (int k = 0; k < 5; ++k) imgs.push_back(gradient_image(3, 48, 48, 0.2f * (k + 1)));
  std::vector<const ImageArray*> refs;
  for (auto& im : imgs) refs.push_back(&im);
  auto batch = image_embed(e, refs);
  for (int k = 0; k < 5; ++k) {
    auto solo = image_embed(e, {refs[static_cast<std::size_t>(k)]});
    CHECK((batch.row(k) - solo.row(0)).cwiseAbs().maxCoeff() < 1e-5);
  }
}

TEST_CASE("encoding leaves parameters untouched; a tuned step changes them") {
  auto e = tiny(16);
  const uint64_t before = nn::params_hash(e.params());
  auto im = gradient_image(3, 32, 32, 0.9f);
  (void)image_embed(e, {&im});
  CHECK(nn::params_hash(e.params()) == before);

  nn::Tape tape;
  auto x = pack_images(&tape, {&im});
  auto y = e.forward(&tape, x);
  auto loss = nn::sum_all(&tape, nn::mul(&tape, y, y));
  auto ps = e.params();
  for (auto* p : ps) p->zero_grad();
  tape.backward(loss);
  nn::AdamW opt(ps, 1e-3);
  opt.step();
  CHECK(nn::params_hash(e.params()) != before);
}

TEST_CASE("backbone files round-trip and refuse corruption") {
  TempDir td;
  auto e = tiny(16, 11);
  const std::string path = td.path("backbone.bin");
  save_backbone(e, path);

  auto r = load_backbone(path);
  CHECK(r.backbone == BackboneId::pretrained_cnn);
  CHECK(r.out_dim() == 16);
  CHECK(nn::params_hash(r.params()) == nn::params_hash(e.params()));
  auto im = gradient_image(3, 30, 30, 0.7f);
  CHECK(image_embed(r, {&im}) == image_embed(e, {&im}));

  // flip one payload byte: content hash must catch it
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(200);
    char c;
    f.seekg(200);
    f.read(&c, 1);
    c = static_cast<char>(c ^ 0x40);
    f.seekp(200);
    f.write(&c, 1);
  }
  CHECK_THROWS_AS(load_backbone(path), EngineError);

  const std::string junk = td.path("junk.bin");
  std::ofstream(junk) << "not a backbone";
  CHECK_THROWS_AS(load_backbone(junk), EngineError);
}

TEST_CASE("missing pretrained weights fall back to tiny-cnn with a warning") {
  std::vector<std::string> warnings;
  set_warn_hook([&](const std::string& m) { warnings.push_back(m); });
  ImageEncoderOptions o;
  o.backbone = BackboneId::pretrained_cnn;
  o.weights_path = "/nonexistent/weights.bin";
  o.d_i = 16;
  auto e = make_image_encoder(o);
  set_warn_hook(nullptr);
  CHECK(e.backbone == BackboneId::tiny_cnn);
  CHECK(e.out_dim() == 16);
  REQUIRE(warnings.size() == 1);
  CHECK(warnings[0].find("falling back to tiny-cnn") != std::string::npos);

  TempDir td;
  const std::string path = td.path("pre.bin");
  save_backbone(tiny(16, 4), path);
  o.weights_path = path;
  auto loaded = make_image_encoder(o);
  CHECK(loaded.backbone == BackboneId::pretrained_cnn);
}

TEST_CASE("mlp tabular encoder maps rows to 192 dims") {
  MlpTabularEncoder enc(3, {4, 5});
  Rng rng(5);
  enc.init(rng);
  EncodedInputs rows;
  rows.numeric = Eigen::MatrixXd::Random(6, 3);
  rows.cat_codes = {{0, 1, 2, 3, 0, 1}, {4, 0, 1, 2, 3, 4}};
  auto emb = mlp_embed(enc, rows);
  CHECK(emb.rows() == 6);
  CHECK(emb.cols() == 192);
  CHECK(emb.allFinite());

  // zero final layer forces a zero embedding regardless of input
  enc.l3.init_zero();
  auto z = mlp_embed(enc, rows);
  CHECK(z.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("mlp tabular encoder rejects unimputed or malformed rows") {
  MlpTabularEncoder enc(2, {3});
  Rng rng(6);
  enc.init(rng);
  EncodedInputs rows;
  rows.numeric = Eigen::MatrixXd::Zero(2, 2);
  rows.cat_codes = {{0, 1}};
  CHECK(mlp_embed(enc, rows).rows() == 2);

  auto with_nan = rows;
  with_nan.numeric(1, 0) = std::nan("");
  CHECK_THROWS_WITH_AS(mlp_embed(enc, with_nan),
                       doctest::Contains("impute"), EngineError);

  auto bad_code = rows;
  bad_code.cat_codes[0][0] = 3;  // vocab is 3, valid codes 0..2
  CHECK_THROWS_AS(mlp_embed(enc, bad_code), EngineError);
  bad_code.cat_codes[0][0] = -1;
  CHECK_THROWS_AS(mlp_embed(enc, bad_code), EngineError);

  auto wrong_width = rows;
  wrong_width.numeric = Eigen::MatrixXd::Zero(2, 5);
  CHECK_THROWS_AS(mlp_embed(enc, wrong_width), EngineError);
}

TEST_CASE("make_mlp_encoder sizes vocabularies from the normalizer") {
  MultimodalDataset ds;
  ds.task = TaskKind::classification;
  ds.n_classes = 2;
  ds.schema.names = {"a", "b"};
  ds.schema.kinds = {ColumnKind::numeric, ColumnKind::categorical};
  for (int i = 0; i < 4; ++i) {
    MultimodalSample s;
    s.id = "r" + std::to_string(i);
    s.tabular.values = Eigen::Vector2d(static_cast<double>(i), static_cast<double>(i % 2));
    s.tabular.missing = {0, 0};
    s.target = Target::cls(i % 2);
    s.image.loaded = ImageArray::zeros(1, 2, 2);
    ds.samples.push_back(std::move(s));
  }
  auto norm = fit_normalizer(ds, {0, 1, 2, 3});
  auto enc = make_mlp_encoder(norm, 1);
  CHECK(enc.n_numeric == 1);
  REQUIRE(enc.cat_vocab.size() == 1);
  // two seen categories plus the unseen slot
  CHECK(enc.cat_vocab[0] == 3);

  auto inputs = encode_for_mlp(ds, norm, {0, 1, 2, 3});
  auto emb = mlp_embed(enc, inputs);
  CHECK(emb.rows() == 4);
  CHECK(emb.cols() == 192);
}
