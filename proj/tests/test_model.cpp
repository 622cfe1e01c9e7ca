#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <unistd.h>

#include "doctest.h"
#include "tme/model.hpp"

using namespace tme;
using namespace tme::model;

namespace {

std::shared_ptr<pfn::PFNWeights> micro_pfn(uint64_t seed = 2) {
  pfn::PFNConfig c;
  c.d_max = 5;
  c.c_max = 3;
  c.width = 32;
  c.layers = 1;
  c.heads = 2;
  c.ffn = 48;
  auto w = std::make_shared<pfn::PFNWeights>(c);
  Rng rng(seed);
  w->init(rng);
  return w;
}

ModelSpec base_spec(fusion::Strategy s, enc::EncoderMode mode, TabularBranch tab) {
  ModelSpec spec;
  spec.tabular = tab;
  spec.strategy = s;
  spec.mode = mode;
  spec.k = 16;
  spec.image.d_i = 8;
  spec.task = TaskKind::classification;
  spec.n_classes = 3;
  spec.seed = 11;
  return spec;
}

Eigen::MatrixXd randn(Rng& rng, long n, long d) {
  Eigen::MatrixXd m(n, d);
  for (long i = 0; i < n; ++i)
    for (long j = 0; j < d; ++j) m(i, j) = rng.normal();
  return m;
}

std::set<const nn::Parameter*> as_set(const nn::ParamList& ps) {
  return {ps.begin(), ps.end()};
}

}  // namespace

TEST_CASE("build_model validates its inputs") {
  auto spec = base_spec(fusion::Strategy::cat, enc::EncoderMode::frozen, TabularBranch::pfn);
  CHECK_THROWS_AS(build_model(spec, nullptr, std::nullopt), EngineError);
  spec.tabular = TabularBranch::mlp;
  CHECK_THROWS_AS(build_model(spec, nullptr, std::nullopt), EngineError);
  spec.tabular = TabularBranch::pfn;
  spec.n_classes = 1;
  CHECK_THROWS_AS(build_model(spec, micro_pfn(), std::nullopt), EngineError);
}

TEST_CASE("classification forward emits normalized distributions") {
  auto spec = base_spec(fusion::Strategy::cat, enc::EncoderMode::frozen, TabularBranch::pfn);
  auto m = build_model(spec, micro_pfn(), std::nullopt);
  Rng rng(4);
  auto tab = randn(rng, 6, 32);
  auto img = randn(rng, 6, 8);
  BatchInputs in;
  in.tab_embed = &tab;
  in.img_embed = &img;
  auto probs = model_forward(m, in);
  REQUIRE(probs.rows() == 6);
  REQUIRE(probs.cols() == 3);
  for (long i = 0; i < 6; ++i) {
    CHECK(probs.row(i).sum() == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(probs.row(i).minCoeff() >= 0.0);
  }
  // repeat is bit-identical
  auto again = model_forward(m, in);
  CHECK(probs == again);

  // zero head: uniform over classes
  m.head.init_zero();
  auto uni = model_forward(m, in);
  for (long i = 0; i < 6; ++i)
    for (long j = 0; j < 3; ++j) CHECK(uni(i, j) == doctest::Approx(1.0 / 3));
}

TEST_CASE("regression forward emits one scalar per sample") {
  auto spec = base_spec(fusion::Strategy::sum, enc::EncoderMode::frozen, TabularBranch::pfn);
  spec.task = TaskKind::regression;
  spec.n_classes = 0;
  auto m = build_model(spec, micro_pfn(), std::nullopt);
  Rng rng(5);
  auto tab = randn(rng, 7, 32);
  auto img = randn(rng, 7, 8);
  BatchInputs in;
  in.tab_embed = &tab;
  in.img_embed = &img;
  auto y = model_forward(m, in);
  CHECK(y.rows() == 7);
  CHECK(y.cols() == 1);
}

TEST_CASE("trainable partition: pfn weights never appear, modes gate the image encoder") {
  auto pw = micro_pfn();
  const uint64_t pfn_hash_before = pw->content_hash();

  auto frozen_cat = build_model(
      base_spec(fusion::Strategy::cat, enc::EncoderMode::frozen, TabularBranch::pfn), pw,
      std::nullopt);
  auto set = as_set(frozen_cat.trainable_parameters());
  // cat has no projections, branch encoders are frozen: exactly the head
  CHECK(set.size() == 2);
  CHECK(set.count(&frozen_cat.head.w) == 1);
  CHECK(set.count(&frozen_cat.head.b) == 1);

  auto frozen_daft = build_model(
      base_spec(fusion::Strategy::daft, enc::EncoderMode::frozen, TabularBranch::pfn), pw,
      std::nullopt);
  set = as_set(frozen_daft.trainable_parameters());
  CHECK(set.count(&frozen_daft.fuse.proj.w_t.w) == 1);
  CHECK(set.count(&frozen_daft.fuse.daft.f1.w) == 1);
  for (auto* p : frozen_daft.image.params()) CHECK(set.count(p) == 0);

  auto tuned = build_model(
      base_spec(fusion::Strategy::sum, enc::EncoderMode::tuned, TabularBranch::pfn), pw,
      std::nullopt);
  set = as_set(tuned.trainable_parameters());
  for (auto* p : tuned.image.params()) CHECK(set.count(p) == 1);
  CHECK(set.count(&tuned.fuse.proj.w_i.w) == 1);
  CHECK(set.count(&tuned.head.w) == 1);

  // no pfn parameter is ever handed to the optimizer
  for (auto* p : pw->params())
    for (auto& mdl : {&frozen_cat, &frozen_daft, &tuned})
      CHECK(as_set(mdl->trainable_parameters()).count(p) == 0);
  CHECK(pw->content_hash() == pfn_hash_before);
}

TEST_CASE("mlp branch parameters train in both modes; strict probe narrows to the head") {
  enc::MlpTabularEncoder mlp(4, {3});
  Rng rng(6);
  mlp.init(rng);
  auto spec = base_spec(fusion::Strategy::max, enc::EncoderMode::frozen, TabularBranch::mlp);
  auto m = build_model(spec, nullptr, std::move(mlp));
  auto set = as_set(m.trainable_parameters());
  CHECK(set.count(&m.encoder_mlp->l1.w) == 1);
  CHECK(set.count(&m.encoder_mlp->cat_embeds[0].table) == 1);

  spec.strict_probe = true;
  enc::MlpTabularEncoder mlp2(4, {3});
  mlp2.init(rng);
  auto strict = build_model(spec, nullptr, std::move(mlp2));
  auto sset = as_set(strict.trainable_parameters());
  CHECK(sset.size() == 2);
  CHECK(sset.count(&strict.head.w) == 1);
  CHECK(sset.count(&strict.head.b) == 1);

  // strict probing is about probing; tuned mode ignores the flag
  spec.mode = enc::EncoderMode::tuned;
  enc::MlpTabularEncoder mlp3(4, {3});
  mlp3.init(rng);
  auto tuned = build_model(spec, nullptr, std::move(mlp3));
  CHECK(as_set(tuned.trainable_parameters()).count(&tuned.image.blocks[0].w) == 1);
}

TEST_CASE("forward rejects mismatched or missing inputs") {
  auto m = build_model(base_spec(fusion::Strategy::cat, enc::EncoderMode::frozen,
                                 TabularBranch::pfn),
                       micro_pfn(), std::nullopt);
  Rng rng(7);
  auto tab = randn(rng, 4, 32);
  auto img = randn(rng, 3, 8);  // wrong row count
  BatchInputs in;
  in.tab_embed = &tab;
  in.img_embed = &img;
  CHECK_THROWS_AS(model_forward(m, in), EngineError);
  in.img_embed = nullptr;
  CHECK_THROWS_AS(model_forward(m, in), EngineError);
  in.tab_embed = nullptr;
  auto good_img = randn(rng, 4, 8);
  in.img_embed = &good_img;
  CHECK_THROWS_AS(model_forward(m, in), EngineError);
}

TEST_CASE("checkpoint directory round-trips and verifies its config hash") {
  namespace fs = std::filesystem;
  const fs::path dir =
      fs::temp_directory_path() / ("tme_ckpt_" + std::to_string(getpid()));
  fs::remove_all(dir);

  auto spec = base_spec(fusion::Strategy::daft, enc::EncoderMode::frozen, TabularBranch::pfn);
  auto pw = micro_pfn();
  auto m = build_model(spec, pw, std::nullopt);
  const std::string config_text = R"({"example": "snapshot", "seed": 3})";

  CheckpointMeta meta;
  meta.seed = 3;
  meta.epoch = 17;
  meta.val_metric = 0.875;
  for (auto* p : m.trainable_parameters()) meta.trainable.push_back(p->name);
  save_checkpoint(dir.string(), m, config_text, meta);

  const uint64_t saved_hash = nn::params_hash(m.persistent_parameters());
  // scramble, then restore from disk
  Rng rng(9);
  for (auto* p : m.persistent_parameters())
    for (long i = 0; i < p->size(); ++i) p->value[i] = rng.normal();
  CHECK(nn::params_hash(m.persistent_parameters()) != saved_hash);

  auto back = load_checkpoint(dir.string(), m);
  CHECK(nn::params_hash(m.persistent_parameters()) == saved_hash);
  CHECK(back.seed == 3);
  CHECK(back.epoch == 17);
  CHECK(back.val_metric == doctest::Approx(0.875));
  CHECK(back.trainable == meta.trainable);

  // tampered snapshot: hash check must refuse
  {
    std::ofstream cfg(dir / "config.json", std::ios::binary);
    cfg << R"({"example": "tampered"})";
  }
  CHECK_THROWS_WITH_AS(load_checkpoint(dir.string(), m),
                       doctest::Contains("config hash"), EngineError);
  fs::remove_all(dir);
}

TEST_CASE("unimodal ablations drop the absent branch everywhere") {
  CHECK(branches_from_string("both") == Branches::both);
  CHECK(branches_from_string(to_string(Branches::image_only)) == Branches::image_only);
  CHECK(branches_from_string(to_string(Branches::tabular_only)) == Branches::tabular_only);
  CHECK_THROWS(branches_from_string("audio-only"));

  Rng rng(9);
  auto img_feats = randn(rng, 5, 8);
  auto tab_feats = randn(rng, 5, 32);

  SUBCASE("image-only needs no tabular inputs and probes the head when frozen") {
    auto spec = base_spec(fusion::Strategy::cat, enc::EncoderMode::frozen, TabularBranch::pfn);
    spec.branches = Branches::image_only;
    auto m = build_model(spec, nullptr, std::nullopt);  // no pfn weights required
    CHECK(m.head.in_dim() == 8);

    BatchInputs in;
    in.img_embed = &img_feats;
    auto probs = model_forward(m, in);
    CHECK(probs.rows() == 5);
    CHECK(probs.cols() == 3);

    auto names = as_set(m.trainable_parameters());
    CHECK(names.size() == 2);  // head weight + bias
    for (const auto* p : names) CHECK(p->name.rfind("head", 0) == 0);

    spec.mode = enc::EncoderMode::tuned;
    auto mt = build_model(spec, nullptr, std::nullopt);
    bool has_conv = false;
    for (const auto* p : mt.trainable_parameters()) has_conv |= p->name.rfind("conv", 0) == 0;
    CHECK(has_conv);
  }

  SUBCASE("tabular-only ignores the image encoder entirely") {
    auto spec = base_spec(fusion::Strategy::daft, enc::EncoderMode::tuned, TabularBranch::pfn);
    spec.branches = Branches::tabular_only;
    auto m = build_model(spec, micro_pfn(), std::nullopt);
    CHECK(m.head.in_dim() == 32);

    BatchInputs in;
    in.tab_embed = &tab_feats;
    auto probs = model_forward(m, in);
    CHECK(probs.rows() == 5);

    for (const auto* p : m.trainable_parameters()) CHECK(p->name.rfind("conv", 0) != 0);
    for (const auto* p : m.persistent_parameters()) CHECK(p->name.rfind("conv", 0) != 0);
  }
}
