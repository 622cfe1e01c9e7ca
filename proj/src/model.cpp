#include "tme/model.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace tme::model {

using nn::NodePtr;
using nn::Tape;

std::string to_string(TabularBranch b) { return b == TabularBranch::pfn ? "pfn" : "mlp"; }

TabularBranch tabular_from_string(const std::string& s) {
  if (s == "pfn") return TabularBranch::pfn;
  if (s == "mlp") return TabularBranch::mlp;
  throw EngineError("unknown tabular encoder '" + s + "'");
}

std::string to_string(Branches b) {
  switch (b) {
    case Branches::both: return "both";
    case Branches::image_only: return "image-only";
    default: return "tabular-only";
  }
}

Branches branches_from_string(const std::string& s) {
  if (s == "both") return Branches::both;
  if (s == "image-only") return Branches::image_only;
  if (s == "tabular-only") return Branches::tabular_only;
  throw EngineError("unknown branch selection '" + s + "'");
}

long TIMEModel::tab_dim() const {
  return spec.tabular == TabularBranch::pfn ? encoder_pfn->cfg.width : encoder_mlp->out_dim();
}

nn::ParamList TIMEModel::trainable_parameters() {
  nn::ParamList out;
  const bool strict = spec.strict_probe && spec.mode == enc::EncoderMode::frozen;
  if (!strict) {
    if (uses_image() && spec.mode == enc::EncoderMode::tuned) {
      auto img = image.params();
      out.insert(out.end(), img.begin(), img.end());
    }
    if (uses_tabular() && encoder_mlp) {
      auto tab = encoder_mlp->params();
      out.insert(out.end(), tab.begin(), tab.end());
    }
    if (spec.branches == Branches::both) {
      auto fu = fuse.params();
      out.insert(out.end(), fu.begin(), fu.end());
    }
  }
  head.collect(out);
  return out;
}

nn::ParamList TIMEModel::persistent_parameters() {
  nn::ParamList out;
  if (uses_image()) out = image.params();
  if (uses_tabular() && encoder_mlp) {
    auto tab = encoder_mlp->params();
    out.insert(out.end(), tab.begin(), tab.end());
  }
  if (spec.branches == Branches::both) {
    auto fu = fuse.params();
    out.insert(out.end(), fu.begin(), fu.end());
  }
  head.collect(out);
  return out;
}

TIMEModel build_model(const ModelSpec& spec, std::shared_ptr<const pfn::PFNWeights> pfn_weights,
                      std::optional<enc::MlpTabularEncoder> mlp) {
  if (spec.task == TaskKind::classification && spec.n_classes < 2)
    throw EngineError("classification model needs at least 2 classes");
  const bool wants_tab = spec.branches != Branches::image_only;
  if (wants_tab && spec.tabular == TabularBranch::pfn && !pfn_weights)
    throw EngineError("pfn tabular branch requires loaded weights");
  if (wants_tab && spec.tabular == TabularBranch::mlp && !mlp)
    throw EngineError("mlp tabular branch requires a fitted encoder");

  TIMEModel m;
  m.spec = spec;
  if (wants_tab) {
    m.encoder_pfn = spec.tabular == TabularBranch::pfn ? std::move(pfn_weights) : nullptr;
    if (spec.tabular == TabularBranch::mlp) m.encoder_mlp = std::move(mlp);
  }

  if (m.uses_image()) {
    enc::ImageEncoderOptions img = spec.image;
    img.mode = spec.mode;
    img.seed = mix_seed(spec.seed, 0x1ea6eULL);
    m.image = enc::make_image_encoder(img);
  }

  long head_in = 0;
  if (spec.branches == Branches::both) {
    m.fuse = fusion::Fusion(spec.strategy, m.tab_dim(), m.image.out_dim(), spec.k);
    Rng frng(mix_seed(spec.seed, 0xf05e0ULL));
    m.fuse.init(frng);
    head_in = m.fuse.out_dim();
  } else {
    head_in = m.uses_image() ? m.image.out_dim() : m.tab_dim();
  }

  m.head = nn::Linear("head", head_in, m.out_dim());
  Rng hrng(mix_seed(spec.seed, 0x6eadULL));
  m.head.init_xavier(hrng);
  return m;
}

NodePtr model_logits(Tape* t, const TIMEModel& m, const BatchInputs& in) {
  NodePtr tab;
  if (m.uses_tabular()) {
    if (m.spec.tabular == TabularBranch::pfn) {
      if (!in.tab_embed) throw EngineError("pfn branch expects precomputed tabular embeddings");
      nn::Mat e = *in.tab_embed;
      tab = nn::constant(t, e);
    } else {
      if (!in.tab_rows) throw EngineError("mlp branch expects encoded tabular rows");
      tab = m.encoder_mlp->forward(t, *in.tab_rows);
    }
  }

  NodePtr img;
  if (m.uses_image()) {
    if (m.spec.mode == enc::EncoderMode::tuned) {
      if (!in.images) throw EngineError("tuned mode expects raw images");
      img = m.image.forward(t, enc::pack_images(t, *in.images));
    } else {
      if (in.img_embed) {
        nn::Mat e = *in.img_embed;
        img = nn::constant(t, e);
      } else if (in.images) {
        img = m.image.forward(t, enc::pack_images(t, *in.images));
      } else {
        throw EngineError("image branch inputs absent");
      }
    }
  }
  if (tab && img && tab->rows() != img->rows())
    throw EngineError("batch size mismatch between tabular and image inputs");

  NodePtr z;
  if (m.spec.branches == Branches::both)
    z = m.fuse.forward(t, tab, img);
  else
    z = m.uses_image() ? img : tab;
  return m.head.forward(t, z);
}

Eigen::MatrixXd model_forward(const TIMEModel& m, const BatchInputs& in) {
  auto logits = model_logits(nullptr, m, in);
  NodePtr y = m.spec.task == TaskKind::classification ? nn::softmax_rows(nullptr, logits) : logits;
  Eigen::MatrixXd out(y->rows(), y->cols());
  for (long i = 0; i < y->rows(); ++i)
    for (long j = 0; j < y->cols(); ++j) out(i, j) = y->mat()(i, j);
  return out;
}

void save_checkpoint(const std::string& dir, TIMEModel& m, const std::string& config_text,
                     const CheckpointMeta& meta) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  {
    std::ofstream cfg(fs::path(dir) / "config.json", std::ios::binary);
    cfg << config_text;
    if (!cfg) throw EngineError("cannot write checkpoint config: " + dir);
  }
  {
    std::ofstream blob(fs::path(dir) / "params.bin", std::ios::binary);
    nn::write_params(blob, m.persistent_parameters());
    if (!blob) throw EngineError("cannot write checkpoint params: " + dir);
  }
  nlohmann::json j;
  j["config_hash"] = hex64(Fnv::of_string(config_text));
  j["seed"] = meta.seed;
  j["epoch"] = meta.epoch;
  j["val_metric"] = meta.val_metric;
  j["trainable"] = meta.trainable;
  std::ofstream mf(fs::path(dir) / "meta.json", std::ios::binary);
  mf << j.dump(2) << "\n";
  if (!mf) throw EngineError("cannot write checkpoint meta: " + dir);
}

CheckpointMeta load_checkpoint(const std::string& dir, TIMEModel& m) {
  namespace fs = std::filesystem;
  std::ifstream cf(fs::path(dir) / "config.json", std::ios::binary);
  if (!cf) throw EngineError("checkpoint config missing in " + dir);
  std::stringstream buf;
  buf << cf.rdbuf();
  const std::string config_text = buf.str();

  std::ifstream mf(fs::path(dir) / "meta.json");
  if (!mf) throw EngineError("checkpoint meta missing in " + dir);
  nlohmann::json j = nlohmann::json::parse(mf);

  CheckpointMeta meta;
  const std::string stored = j.at("config_hash").get<std::string>();
  if (stored != hex64(Fnv::of_string(config_text)))
    throw EngineError("checkpoint config hash mismatch in " + dir);
  meta.config_hash = Fnv::of_string(config_text);
  meta.seed = j.at("seed").get<uint64_t>();
  meta.epoch = j.at("epoch").get<long>();
  meta.val_metric = j.at("val_metric").get<double>();
  meta.trainable = j.at("trainable").get<std::vector<std::string>>();

  std::ifstream blob(fs::path(dir) / "params.bin", std::ios::binary);
  if (!blob) throw EngineError("checkpoint params missing in " + dir);
  nn::read_params(blob, m.persistent_parameters());
  return meta;
}

}  // namespace tme::model
