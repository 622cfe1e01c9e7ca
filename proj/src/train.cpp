#include "tme/train.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

#include "json.hpp"
#include "tme/experiments.hpp"

namespace tme::train {

void TrainConfig::validate() const {
  if (epochs < 1) throw EngineError("train config: epochs must be >= 1");
  if (batch < 1) throw EngineError("train config: batch must be >= 1");
  if (!(decay > 0.0 && decay <= 1.0)) throw EngineError("train config: decay must be in (0,1]");
  if (decay_every < 1) throw EngineError("train config: decay_every must be >= 1");
  if (!(lr0 > 0.0)) throw EngineError("train config: lr0 must be positive");
  if (patience < 1) throw EngineError("train config: patience must be >= 1");
  if (weight_decay < 0.0) throw EngineError("train config: weight_decay must be >= 0");
}

double lr_at_epoch(const TrainConfig& cfg, long e) {
  if (e < 0 || e >= cfg.epochs)
    throw EngineError("epoch " + std::to_string(e) + " outside [0, " + std::to_string(cfg.epochs) +
                      ")");
  return cfg.lr0 * std::pow(cfg.decay, static_cast<double>(e / cfg.decay_every));
}

std::string RunRecord::to_json() const {
  nlohmann::json j;
  j["train_loss"] = train_loss;
  j["val_metric"] = val_metric;
  j["lr"] = lr;
  j["best_epoch"] = best_epoch;
  j["best_val"] = best_val;
  j["epochs_run"] = epochs_run;
  j["wall_seconds"] = wall_seconds;
  j["metric"] = metric_name;
  j["checkpoint"] = checkpoint_dir;
  j["patience"] = patience;
  j["weight_decay"] = weight_decay;
  return j.dump(2);
}

RunRecord run_train_loop(const TrainConfig& cfg, const LoopHooks& hooks) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  RunRecord rec;
  rec.metric_name = hooks.metric_name;
  rec.patience = cfg.patience;
  rec.weight_decay = cfg.weight_decay;

  double best = hooks.higher_is_better ? -std::numeric_limits<double>::infinity()
                                       : std::numeric_limits<double>::infinity();
  long stale = 0;
  for (long e = 1; e <= cfg.epochs; ++e) {
    const double lr = lr_at_epoch(cfg, e - 1);
    const double loss = hooks.run_epoch(e, lr);
    const double vm = hooks.eval_val();
    rec.train_loss.push_back(loss);
    rec.val_metric.push_back(vm);
    rec.lr.push_back(lr);
    rec.epochs_run = e;
    const bool better = hooks.higher_is_better ? vm > best : vm < best;
    if (better) {
      best = vm;
      rec.best_epoch = e;
      hooks.snapshot_best();
      stale = 0;
    } else if (++stale >= cfg.patience) {
      break;
    }
  }
  hooks.restore_best();
  rec.best_val = best;
  rec.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

namespace {

void check_split(const model::TIMEModel& m, const PreparedSplit& s, const char* which) {
  const std::string w(which);
  if (s.n < 1) throw EngineError(w + " split is empty");
  if (m.spec.tabular == model::TabularBranch::pfn) {
    if (!s.tab_embed || s.tab_embed->rows() != s.n)
      throw EngineError(w + " split lacks tabular embeddings for the pfn branch");
  } else {
    if (!s.tab_rows || s.tab_rows->numeric.rows() != s.n)
      throw EngineError(w + " split lacks encoded rows for the mlp branch");
  }
  if (m.spec.mode == enc::EncoderMode::tuned) {
    if (static_cast<long>(s.images.size()) != s.n)
      throw EngineError(w + " split lacks raw images for tuned mode");
  } else if (!s.img_embed || s.img_embed->rows() != s.n) {
    throw EngineError(w + " split lacks image embeddings");
  }
  if (m.spec.task == TaskKind::classification) {
    if (static_cast<long>(s.labels.size()) != s.n)
      throw EngineError(w + " split labels missing");
  } else if (s.targets.size() != s.n) {
    throw EngineError(w + " split targets missing");
  }
}

}  // namespace

model::BatchInputs BatchBuffers::view(const model::TIMEModel& m) const {
  model::BatchInputs in;
  if (m.uses_tabular()) {
    if (m.spec.tabular == model::TabularBranch::pfn)
      in.tab_embed = &tab_embed;
    else
      in.tab_rows = &tab_rows;
  }
  if (m.uses_image()) {
    if (m.spec.mode == enc::EncoderMode::tuned)
      in.images = &images;
    else
      in.img_embed = &img_embed;
  }
  return in;
}

BatchBuffers gather_batch(const model::TIMEModel& m, const PreparedSplit& split,
                          const std::vector<long>& rows) {
  BatchBuffers buf;
  const long b = static_cast<long>(rows.size());
  if (m.uses_tabular() && m.spec.tabular == model::TabularBranch::pfn) {
    buf.tab_embed.resize(b, split.tab_embed->cols());
    for (long i = 0; i < b; ++i)
      buf.tab_embed.row(i) = split.tab_embed->row(rows[static_cast<std::size_t>(i)]);
  } else if (m.uses_tabular()) {
    const auto& src = *split.tab_rows;
    buf.tab_rows.numeric_cols = src.numeric_cols;
    buf.tab_rows.cat_cols = src.cat_cols;
    buf.tab_rows.numeric.resize(b, src.numeric.cols());
    for (long i = 0; i < b; ++i)
      buf.tab_rows.numeric.row(i) = src.numeric.row(rows[static_cast<std::size_t>(i)]);
    buf.tab_rows.cat_codes.resize(src.cat_codes.size());
    for (std::size_t c = 0; c < src.cat_codes.size(); ++c) {
      buf.tab_rows.cat_codes[c].resize(static_cast<std::size_t>(b));
      for (long i = 0; i < b; ++i)
        buf.tab_rows.cat_codes[c][static_cast<std::size_t>(i)] =
            src.cat_codes[c][static_cast<std::size_t>(rows[static_cast<std::size_t>(i)])];
    }
  }
  if (m.uses_image() && m.spec.mode == enc::EncoderMode::tuned) {
    buf.images.reserve(static_cast<std::size_t>(b));
    for (long r : rows) buf.images.push_back(&split.images[static_cast<std::size_t>(r)]);
  } else if (m.uses_image()) {
    buf.img_embed.resize(b, split.img_embed->cols());
    for (long i = 0; i < b; ++i)
      buf.img_embed.row(i) = split.img_embed->row(rows[static_cast<std::size_t>(i)]);
  }
  if (m.spec.task == TaskKind::classification) {
    buf.labels.reserve(static_cast<std::size_t>(b));
    for (long r : rows) buf.labels.push_back(split.labels[static_cast<std::size_t>(r)]);
  } else {
    buf.targets.resize(b);
    for (long i = 0; i < b; ++i) buf.targets(i) = split.targets(rows[static_cast<std::size_t>(i)]);
  }
  return buf;
}

RunRecord train_model(model::TIMEModel& m, const PreparedSplit& train_split,
                      const PreparedSplit& val_split, const TrainConfig& cfg) {
  cfg.validate();
  check_split(m, train_split, "train");
  check_split(m, val_split, "validation");

  auto params = m.trainable_parameters();
  nn::AdamW opt(params, cfg.lr0, cfg.weight_decay);
  std::vector<nn::Arr> best_values(params.size());
  auto snapshot = [&] {
    for (std::size_t i = 0; i < params.size(); ++i) best_values[i] = params[i]->value;
  };
  auto restore = [&] {
    for (std::size_t i = 0; i < params.size(); ++i)
      if (best_values[i].size() == params[i]->value.size()) params[i]->value = best_values[i];
  };
  snapshot();  // fallback if every epoch diverges into early stop

  const bool cls = m.spec.task == TaskKind::classification;
  LoopHooks hooks;
  hooks.higher_is_better = cls;
  hooks.metric_name = cls ? "accuracy" : "mse";
  hooks.snapshot_best = snapshot;
  hooks.restore_best = restore;
  hooks.eval_val = [&] { return evaluate_split(m, val_split); };
  hooks.run_epoch = [&](long epoch, double lr) {
    std::vector<long> order(static_cast<std::size_t>(train_split.n));
    std::iota(order.begin(), order.end(), 0L);
    Rng shuffle_rng(mix_seed(cfg.seed, static_cast<uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    double total = 0.0;
    long step = 0;
    for (long start = 0; start < train_split.n; start += cfg.batch, ++step) {
      const long bsz = std::min(cfg.batch, train_split.n - start);
      std::vector<long> rows(order.begin() + start, order.begin() + start + bsz);
      auto buf = gather_batch(m, train_split, rows);
      nn::Tape tape;
      auto logits = model_logits(&tape, m, buf.view(m));
      nn::NodePtr loss;
      if (cls) {
        loss = nn::softmax_ce(&tape, logits, buf.labels, m.out_dim());
      } else {
        loss = nn::mse_loss(&tape, logits, nn::Arr(buf.targets.array()));
      }
      const double lv = loss->value[0];
      if (!std::isfinite(lv))
        throw EngineError("training diverged: non-finite loss at epoch " + std::to_string(epoch) +
                          " step " + std::to_string(step));
      for (auto* p : params) p->zero_grad();
      tape.backward(loss);
      opt.set_lr(lr);
      opt.step();
      total += lv * static_cast<double>(bsz);
    }
    return total / static_cast<double>(train_split.n);
  };

  return run_train_loop(cfg, hooks);
}

Eigen::MatrixXd predict_split(const model::TIMEModel& m, const PreparedSplit& split) {
  constexpr long kChunk = 256;
  const model::TIMEModel& cm = m;
  Eigen::MatrixXd out;
  for (long start = 0; start < split.n; start += kChunk) {
    const long b = std::min(kChunk, split.n - start);
    std::vector<long> rows(static_cast<std::size_t>(b));
    std::iota(rows.begin(), rows.end(), start);
    auto buf = gather_batch(cm, split, rows);
    auto y = model_forward(cm, buf.view(cm));
    if (out.size() == 0) out.resize(split.n, y.cols());
    out.middleRows(start, b) = y;
  }
  return out;
}

double evaluate_split(const model::TIMEModel& m, const PreparedSplit& split) {
  auto preds = predict_split(m, split);
  if (m.spec.task == TaskKind::classification) return exp::accuracy(preds, split.labels);
  return exp::mse(preds.col(0), split.targets);
}

}  // namespace tme::train
