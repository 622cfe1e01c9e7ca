#pragma once

// The full multimodal network: tabular branch + image branch + fusion +
// linear head, plus the trainable-parameter partition and checkpointing.

#include <memory>
#include <optional>
#include <string>

#include "tme/encoders.hpp"
#include "tme/fusion.hpp"
#include "tme/pfn.hpp"

namespace tme::model {

enum class TabularBranch { pfn, mlp };

std::string to_string(TabularBranch b);
TabularBranch tabular_from_string(const std::string& s);

// Unimodal ablations reuse the same assembly with one branch absent; the
// head then reads the surviving embedding directly and fusion is skipped.
enum class Branches { both, image_only, tabular_only };

std::string to_string(Branches b);
Branches branches_from_string(const std::string& s);

struct ModelSpec {
  Branches branches = Branches::both;
  TabularBranch tabular = TabularBranch::pfn;
  fusion::Strategy strategy = fusion::Strategy::cat;
  enc::EncoderMode mode = enc::EncoderMode::frozen;
  // Literal probing: frozen mode trains the head alone, leaving fusion
  // parameters untouched.
  bool strict_probe = false;
  long k = 192;  // common fusion width
  enc::ImageEncoderOptions image;
  TaskKind task = TaskKind::classification;
  int n_classes = 0;
  uint64_t seed = 0;
};

struct TIMEModel {
  ModelSpec spec;
  std::shared_ptr<const pfn::PFNWeights> encoder_pfn;  // frozen, never trained here
  std::optional<enc::MlpTabularEncoder> encoder_mlp;
  enc::ImageEncoder image;
  fusion::Fusion fuse;
  nn::Linear head;

  long out_dim() const { return spec.task == TaskKind::classification ? spec.n_classes : 1; }
  long tab_dim() const;
  bool uses_tabular() const { return spec.branches != Branches::image_only; }
  bool uses_image() const { return spec.branches != Branches::tabular_only; }

  // What the optimizer may touch. The in-context tabular encoder is never
  // included; frozen mode drops the image encoder; strict probing narrows
  // frozen mode to the head alone.
  nn::ParamList trainable_parameters();
  // Everything a checkpoint stores (the pfn weights ship separately).
  nn::ParamList persistent_parameters();
};

// Assembles and initializes the network. A pfn tabular branch requires
// weights; an mlp branch requires a fitted encoder.
TIMEModel build_model(const ModelSpec& spec, std::shared_ptr<const pfn::PFNWeights> pfn_weights,
                      std::optional<enc::MlpTabularEncoder> mlp);

// One batch of already-prepared inputs. Exactly one tabular source and one
// image source must be present, matching the model's branches and mode.
struct BatchInputs {
  const Eigen::MatrixXd* tab_embed = nullptr;               // [n, 192]
  const EncodedInputs* tab_rows = nullptr;                  // mlp branch
  const Eigen::MatrixXd* img_embed = nullptr;               // frozen image branch
  const std::vector<const ImageArray*>* images = nullptr;   // tuned image branch
};

nn::NodePtr model_logits(nn::Tape* t, const TIMEModel& m, const BatchInputs& in);

// Classification: per-row probability vectors (softmax of the head).
// Regression: a single column of predicted values.
Eigen::MatrixXd model_forward(const TIMEModel& m, const BatchInputs& in);

struct CheckpointMeta {
  uint64_t config_hash = 0;
  uint64_t seed = 0;
  long epoch = -1;
  double val_metric = 0.0;
  std::vector<std::string> trainable;
};

// Directory layout: config.json (verbatim snapshot), params.bin, meta.json.
void save_checkpoint(const std::string& dir, TIMEModel& m, const std::string& config_text,
                     const CheckpointMeta& meta);
// Restores parameters into a structurally identical model; verifies that
// the stored snapshot still hashes to the recorded config hash.
CheckpointMeta load_checkpoint(const std::string& dir, TIMEModel& m);

}  // namespace tme::model
