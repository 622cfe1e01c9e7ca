#include "tme/protocol.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "tme/bench.hpp"
#include "tme/experiments.hpp"

namespace tme::proto {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string sanitize(const std::string& s) {
  std::string out;
  for (char c : s) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_')
                              ? c
                              : '-';
  return out;
}

std::string ratio_token(double r) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%.2f", r);
  return buf;
}

// mlp rejects missing cells, so its runs must impute.
std::vector<cfg::MissingPolicy> valid_policies(model::TabularBranch tab,
                                               const std::vector<cfg::MissingPolicy>& policies) {
  if (tab != model::TabularBranch::mlp) return policies;
  std::vector<cfg::MissingPolicy> out;
  for (auto p : policies)
    if (p == cfg::MissingPolicy::median_impute) out.push_back(p);
  return out;
}

}  // namespace

std::string RunSpec::model_label() const {
  if (branches == model::Branches::both) return "time-" + fusion::to_string(strategy);
  return model::to_string(branches);
}

std::string RunSpec::encoder_label() const {
  return uses_tabular() ? model::to_string(tabular) : "-";
}

std::string RunSpec::cell_id() const {
  return sanitize(dataset) + "|" + encoder_label() + "|" + model_label() + "|" +
         enc::to_string(mode) + "|" + cfg::to_string(policy) + "|r" + ratio_token(mask_ratio);
}

std::string RunSpec::run_id() const {
  const std::string encoder = uses_tabular() ? model::to_string(tabular) : "img";
  return sanitize(dataset) + "." + encoder + "." + model_label() + "." + enc::to_string(mode) +
         "." + cfg::to_string(policy) + ".r" + ratio_token(mask_ratio) + ".s" +
         std::to_string(seed);
}

std::vector<RunSpec> plan_train(const cfg::ExperimentConfig& cfg) {
  if (cfg.datasets.size() != 1) throw EngineError("the train command expects exactly one dataset");
  if (cfg.tabular.size() != 1 || cfg.fusions.size() != 1 || cfg.modes.size() != 1 ||
      cfg.policies.size() != 1)
    throw EngineError(
        "the train command trains a single model; use scalar tabular/fusion/mode/missing_policy");
  if (cfg.mask.ratios.size() > 1)
    throw EngineError("the train command accepts at most one mask ratio");
  if (cfg.tabular[0] == model::TabularBranch::mlp &&
      cfg.policies[0] != cfg::MissingPolicy::median_impute)
    throw EngineError("mlp tabular encoder requires the median-impute missing policy");

  std::vector<RunSpec> plan;
  for (uint64_t s : cfg.seeds) {
    RunSpec r;
    r.dataset = cfg.datasets[0].name;
    r.tabular = cfg.tabular[0];
    r.strategy = cfg.fusions[0];
    r.mode = cfg.modes[0];
    r.policy = cfg.policies[0];
    r.mask_ratio = cfg.mask.ratios.empty() ? 0.0 : cfg.mask.ratios[0];
    r.seed = s;
    plan.push_back(r);
  }
  return plan;
}

std::vector<RunSpec> plan_benchmark(const cfg::ExperimentConfig& cfg) {
  std::vector<RunSpec> plan;
  for (const auto& ds : cfg.datasets) {
    for (auto b : cfg.baselines) {
      if (b == model::Branches::image_only) {
        for (auto mode : cfg.modes)
          for (uint64_t s : cfg.seeds) {
            RunSpec r;
            r.dataset = ds.name;
            r.branches = b;
            r.mode = mode;
            r.seed = s;
            plan.push_back(r);
          }
      } else {
        for (auto tab : cfg.tabular)
          for (auto pol : valid_policies(tab, cfg.policies))
            for (auto mode : cfg.modes)
              for (uint64_t s : cfg.seeds) {
                RunSpec r;
                r.dataset = ds.name;
                r.branches = b;
                r.tabular = tab;
                r.mode = mode;
                r.policy = pol;
                r.seed = s;
                plan.push_back(r);
              }
      }
    }
    for (auto tab : cfg.tabular)
      for (auto pol : valid_policies(tab, cfg.policies))
        for (auto mode : cfg.modes)
          for (auto fus : cfg.fusions)
            for (uint64_t s : cfg.seeds) {
              RunSpec r;
              r.dataset = ds.name;
              r.tabular = tab;
              r.strategy = fus;
              r.mode = mode;
              r.policy = pol;
              r.seed = s;
              plan.push_back(r);
            }
  }
  return plan;
}

std::vector<RunSpec> plan_sweep(const cfg::ExperimentConfig& cfg) {
  std::vector<double> ratios = cfg.mask.ratios;
  if (ratios.empty()) ratios = {0.1, 0.2, 0.3, 0.4, 0.5};
  // a ratio-0 reference column is always included
  if (std::find(ratios.begin(), ratios.end(), 0.0) == ratios.end())
    ratios.insert(ratios.begin(), 0.0);

  std::vector<RunSpec> plan;
  for (const auto& ds : cfg.datasets) {
    for (auto b : cfg.baselines) {
      if (b == model::Branches::image_only) {
        for (auto mode : cfg.modes)
          for (uint64_t s : cfg.seeds) {
            RunSpec r;
            r.dataset = ds.name;
            r.branches = b;
            r.mode = mode;
            r.seed = s;
            plan.push_back(r);
          }
      } else {
        for (auto tab : cfg.tabular)
          for (auto pol : valid_policies(tab, cfg.policies))
            for (auto mode : cfg.modes)
              for (uint64_t s : cfg.seeds) {
                RunSpec r;
                r.dataset = ds.name;
                r.branches = b;
                r.tabular = tab;
                r.mode = mode;
                r.policy = pol;
                r.seed = s;
                plan.push_back(r);
              }
      }
    }
    for (auto tab : cfg.tabular)
      for (auto pol : valid_policies(tab, cfg.policies))
        for (auto mode : cfg.modes)
          for (auto fus : cfg.fusions)
            for (double ratio : ratios)
              for (uint64_t s : cfg.seeds) {
                RunSpec r;
                r.dataset = ds.name;
                r.tabular = tab;
                r.strategy = fus;
                r.mode = mode;
                r.policy = pol;
                r.mask_ratio = ratio;
                r.seed = s;
                plan.push_back(r);
              }
  }
  return plan;
}

DatasetBundle resolve_dataset(const cfg::ExperimentConfig& cfg, const std::string& name) {
  for (const auto& ref : cfg.datasets) {
    if (ref.name != name) continue;
    DatasetBundle bundle;
    if (ref.synthetic) {
      bundle.ds = bench::make_synthetic_multimodal(ref.synthetic->spec);
      if (ref.synthetic->mnar_column >= 0)
        bundle.ds = bench::inject_mnar(bundle.ds, ref.synthetic->mnar_column,
                                       ref.synthetic->mnar_fraction);
    } else {
      auto loaded = load_manifest(read_manifest(ref.manifest));
      bundle.ds = std::move(loaded.ds);
      bundle.base_dir = loaded.base_dir;
    }
    auto report = validate_dataset(bundle.ds);
    for (const auto& v : report.violations) warn("dataset '" + name + "': " + v);
    return bundle;
  }
  throw EngineError("dataset '" + name + "' is not declared in the config");
}

pfn::ContextSet build_context(const MultimodalDataset& ds, const Normalizer& nz,
                              const std::vector<long>& rows) {
  pfn::ContextSet ctx;
  ctx.kind = ds.task;
  ctx.x = normalized_matrix(ds, nz, rows);
  const long d = ds.d();
  ctx.missing.reserve(rows.size() * static_cast<std::size_t>(d));
  for (long r : rows) {
    const auto& m = ds.samples[static_cast<std::size_t>(r)].tabular.missing;
    ctx.missing.insert(ctx.missing.end(), m.begin(), m.end());
  }
  if (ds.task == TaskKind::classification) {
    ctx.n_classes = ds.n_classes;
    ctx.labels.reserve(rows.size());
    for (long r : rows)
      ctx.labels.push_back(ds.samples[static_cast<std::size_t>(r)].target.class_index);
  } else {
    ctx.y.resize(static_cast<long>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
      ctx.y(static_cast<long>(i)) = ds.samples[static_cast<std::size_t>(rows[i])].target.real_value;
    ctx.y_mean = ctx.y.mean();
    const double sd = std::sqrt((ctx.y.array() - ctx.y_mean).square().sum() /
                                std::max<double>(1.0, static_cast<double>(ctx.y.size() - 1)));
    ctx.y_std = sd > 1e-12 ? sd : 1.0;
  }
  return ctx;
}

RunContext make_context(const cfg::ExperimentConfig& cfg, const std::vector<RunSpec>& plan,
                        const std::string& out_override) {
  RunContext ctx;
  ctx.config = cfg;
  ctx.out_dir = out_override.empty() ? cfg.out : out_override;
  ctx.cache_dir = cache::resolve_root(ctx.out_dir + "/cache");

  bool needs_pfn = false;
  for (const auto& r : plan)
    needs_pfn |= r.uses_tabular() && r.tabular == model::TabularBranch::pfn;
  if (needs_pfn) {
    if (cfg.pfn_weights.empty())
      throw EngineError(
          "config schedules in-context tabular runs but 'pfn_weights' names no weights file");
    ctx.pfn_weights = std::make_shared<pfn::PFNWeights>(pfn::load_pfn(cfg.pfn_weights));
  }
  return ctx;
}

namespace {

std::vector<uint8_t> rows_flags(const MultimodalDataset& ds, const std::vector<long>& rows) {
  std::vector<uint8_t> flags;
  flags.reserve(rows.size() * static_cast<std::size_t>(ds.d()));
  for (long r : rows) {
    const auto& m = ds.samples[static_cast<std::size_t>(r)].tabular.missing;
    flags.insert(flags.end(), m.begin(), m.end());
  }
  return flags;
}

uint64_t bytes_hash(const std::vector<uint8_t>& v) {
  Fnv f;
  for (uint8_t b : v) f.update_pod(b);
  return f.digest();
}

uint64_t context_hash(const pfn::ContextSet& ctx) {
  Fnv f;
  f.update_pod(cache::matrix_hash(ctx.x));
  f.update_pod(bytes_hash(ctx.missing));
  for (int l : ctx.labels) f.update_pod(l);
  f.update_pod(ctx.n_classes);
  for (long i = 0; i < ctx.y.size(); ++i) f.update_pod(ctx.y(i));
  return f.digest();
}

// Identity fingerprint for a list of rows' images: ids and paths, not
// pixels, so cache hits skip decoding entirely.
uint64_t image_ids_hash(const MultimodalDataset& ds, const std::vector<long>& rows) {
  Fnv f;
  for (long r : rows) {
    const auto& s = ds.samples[static_cast<std::size_t>(r)];
    f.update(s.id.data(), s.id.size());
    f.update(s.image.path.data(), s.image.path.size());
  }
  return f.digest();
}

// Masks each split independently so row counts follow the contract
// round(ratio * |split| * d) per split, with disjoint seeds.
void mask_rows(MultimodalDataset& ds, const std::vector<long>& rows, double ratio, uint64_t seed) {
  if (rows.empty()) return;
  MultimodalDataset sub;
  sub.schema = ds.schema;
  sub.task = ds.task;
  sub.n_classes = ds.n_classes;
  for (long r : rows) sub.samples.push_back(ds.samples[static_cast<std::size_t>(r)]);
  exp::MaskSpec spec;
  spec.ratio = ratio;
  spec.seed = seed;
  auto masked = exp::mask_tabular(sub, spec);
  for (std::size_t i = 0; i < rows.size(); ++i)
    ds.samples[static_cast<std::size_t>(rows[i])].tabular.missing =
        masked.samples[i].tabular.missing;
}

struct PreparedRun {
  model::TIMEModel model;
  train::PreparedSplit train_split, val_split, test_split;
};

PreparedRun prepare_run(const RunContext& ctx, const DatasetBundle& bundle, const RunSpec& spec) {
  const auto& conf = ctx.config;
  MultimodalDataset ds = bundle.ds;

  auto split = split_dataset(ds, mix_seed(spec.seed, 0x5011dULL));

  if (spec.mask_ratio > 0.0 && spec.uses_tabular()) {
    const uint64_t base = mix_seed(conf.mask.seed, spec.seed);
    mask_rows(ds, split.train, spec.mask_ratio, mix_seed(base, 0));
    if (conf.mask.scope == exp::MaskScope::all_splits) {
      mask_rows(ds, split.val, spec.mask_ratio, mix_seed(base, 1));
      mask_rows(ds, split.test, spec.mask_ratio, mix_seed(base, 2));
    }
  }

  if (spec.uses_tabular() && spec.policy == cfg::MissingPolicy::median_impute) {
    auto imp = fit_imputer(ds, split.train);
    ds = apply_imputer(imp, ds);
  }

  std::optional<Normalizer> nz;
  if (spec.uses_tabular()) nz = fit_normalizer(ds, split.train);

  model::ModelSpec ms;
  ms.branches = spec.branches;
  ms.tabular = spec.tabular;
  ms.strategy = spec.strategy;
  ms.mode = spec.mode;
  ms.strict_probe = conf.strict_probe;
  ms.k = conf.k;
  ms.image.backbone = conf.image.backbone;
  ms.image.d_i = conf.image.d_i;
  ms.image.weights_path = conf.image.weights;
  ms.task = ds.task;
  ms.n_classes = ds.n_classes;
  ms.seed = spec.seed;

  std::optional<enc::MlpTabularEncoder> mlp;
  if (spec.uses_tabular() && spec.tabular == model::TabularBranch::mlp)
    mlp = enc::make_mlp_encoder(*nz, mix_seed(spec.seed, 0x371bULL));

  const bool wants_pfn = spec.uses_tabular() && spec.tabular == model::TabularBranch::pfn;
  if (wants_pfn && !ctx.pfn_weights)
    throw EngineError("run context has no in-context encoder weights loaded");

  PreparedRun prep{model::build_model(ms, wants_pfn ? ctx.pfn_weights : nullptr, std::move(mlp)),
                   {}, {}, {}};
  auto& m = prep.model;

  pfn::ContextSet ctxset;
  uint64_t ctx_h = 0;
  if (wants_pfn) {
    if (ds.task == TaskKind::classification && ds.n_classes > m.encoder_pfn->cfg.c_max)
      throw EngineError("dataset has " + std::to_string(ds.n_classes) +
                        " classes; the in-context encoder supports up to " +
                        std::to_string(m.encoder_pfn->cfg.c_max));
    ctxset = build_context(ds, *nz, split.train);
    ctxset = pfn::subsample_context(ctxset, pfn::kMaxContextRows, mix_seed(spec.seed, 0xc7a9ULL));
    ctx_h = context_hash(ctxset);
  }

  cache::EmbeddingCache ecache(ctx.cache_dir);
  const uint64_t img_params_h =
      m.uses_image() && spec.mode == enc::EncoderMode::frozen ? nn::params_hash(m.image.params())
                                                              : 0;

  const std::vector<std::pair<const char*, const std::vector<long>*>> parts = {
      {"train", &split.train}, {"val", &split.val}, {"test", &split.test}};
  train::PreparedSplit* outs[3] = {&prep.train_split, &prep.val_split, &prep.test_split};

  for (std::size_t si = 0; si < parts.size(); ++si) {
    const auto& rows = *parts[si].second;
    const char* split_name = parts[si].first;
    auto& ps = *outs[si];
    ps.n = static_cast<long>(rows.size());

    if (ds.task == TaskKind::classification) {
      ps.labels.reserve(rows.size());
      for (long r : rows)
        ps.labels.push_back(ds.samples[static_cast<std::size_t>(r)].target.class_index);
    } else {
      ps.targets.resize(ps.n);
      for (long i = 0; i < ps.n; ++i)
        ps.targets(i) =
            ds.samples[static_cast<std::size_t>(rows[static_cast<std::size_t>(i)])].target
                .real_value;
    }

    if (spec.uses_tabular()) {
      if (spec.tabular == model::TabularBranch::pfn) {
        Eigen::MatrixXd qx = normalized_matrix(ds, *nz, rows);
        auto flags = rows_flags(ds, rows);
        cache::KeyBuilder kb;
        kb.add("kind", std::string("pfn"))
            .add("w", m.encoder_pfn->content_hash())
            .add("ds", sanitize(spec.dataset))
            .add("split", std::string(split_name))
            .add("policy", cfg::to_string(spec.policy))
            .add("ratio", ratio_token(spec.mask_ratio))
            .add("ctx", ctx_h)
            .add("rows", cache::matrix_hash(qx) ^ bytes_hash(flags));
        const auto& w = *m.encoder_pfn;
        ps.tab_embed = ecache.get_or_compute(
            kb.str(), [&]() { return pfn::pfn_embed(w, ctxset, qx, flags); });
      } else {
        ps.tab_rows = encode_for_mlp(ds, *nz, rows);
      }
    }

    if (m.uses_image()) {
      if (spec.mode == enc::EncoderMode::frozen) {
        cache::KeyBuilder kb;
        kb.add("kind", std::string("img"))
            .add("enc", img_params_h)
            .add("dim", std::to_string(m.image.out_dim()))
            .add("ds", sanitize(spec.dataset))
            .add("split", std::string(split_name))
            .add("rows", image_ids_hash(ds, rows));
        ps.img_embed = ecache.get_or_compute(kb.str(), [&]() {
          std::vector<ImageArray> pixels;
          pixels.reserve(rows.size());
          for (long r : rows)
            pixels.push_back(
                load_image(ds.samples[static_cast<std::size_t>(r)].image, bundle.base_dir));
          std::vector<const ImageArray*> views;
          views.reserve(pixels.size());
          for (const auto& im : pixels) views.push_back(&im);
          return enc::image_embed(m.image, views);
        });
      } else {
        ps.images.reserve(rows.size());
        for (long r : rows)
          ps.images.push_back(
              load_image(ds.samples[static_cast<std::size_t>(r)].image, bundle.base_dir));
      }
    }
  }
  return prep;
}

}  // namespace

std::string run_dir(const RunContext& ctx, const RunSpec& spec) {
  return ctx.out_dir + "/runs/" + spec.run_id();
}

RunResult execute_run(const RunContext& ctx, const DatasetBundle& bundle, const RunSpec& spec) {
  const auto t0 = std::chrono::steady_clock::now();
  auto prep = prepare_run(ctx, bundle, spec);

  train::TrainConfig tc = ctx.config.train;
  tc.seed = spec.seed;
  RunResult result;
  result.spec = spec;
  result.record = train::train_model(prep.model, prep.train_split, prep.val_split, tc);
  result.metric_name = result.record.metric_name;
  result.value = train::evaluate_split(prep.model, prep.test_split);

  if (ctx.persist) {
    const std::string rdir = run_dir(ctx, spec);
    fs::create_directories(rdir);
    const std::string ckpt = rdir + "/checkpoint";
    model::CheckpointMeta meta;
    meta.seed = spec.seed;
    meta.epoch = result.record.best_epoch;
    meta.val_metric = result.record.best_val;
    for (const auto* p : prep.model.trainable_parameters()) meta.trainable.push_back(p->name);
    model::save_checkpoint(ckpt, prep.model, ctx.config.text, meta);
    result.checkpoint_dir = ckpt;
    result.record.checkpoint_dir = ckpt;
  }

  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (ctx.persist) write_run_artifacts(ctx, result);
  return result;
}

void warm_embeddings(const RunContext& ctx, const DatasetBundle& bundle, const RunSpec& spec) {
  prepare_run(ctx, bundle, spec);
}

RunResult evaluate_checkpoint(const RunContext& ctx, const DatasetBundle& bundle,
                              const RunSpec& spec) {
  const auto t0 = std::chrono::steady_clock::now();
  auto prep = prepare_run(ctx, bundle, spec);
  const std::string ckpt = run_dir(ctx, spec) + "/checkpoint";
  auto meta = model::load_checkpoint(ckpt, prep.model);

  RunResult result;
  result.spec = spec;
  result.metric_name =
      prep.model.spec.task == TaskKind::classification ? "accuracy" : "mse";
  result.value = train::evaluate_split(prep.model, prep.test_split);
  result.checkpoint_dir = ckpt;
  result.record.best_epoch = meta.epoch;
  result.record.best_val = meta.val_metric;
  result.record.metric_name = result.metric_name;
  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

std::vector<RunResult> run_protocol(const RunContext& ctx, const std::vector<RunSpec>& plan,
                                    const std::function<void(const RunResult&)>& on_result) {
  std::map<std::string, DatasetBundle> datasets;
  std::vector<RunResult> results;
  results.reserve(plan.size());
  for (const auto& spec : plan) {
    try {
      auto it = datasets.find(spec.dataset);
      if (it == datasets.end())
        it = datasets.emplace(spec.dataset, resolve_dataset(ctx.config, spec.dataset)).first;
      results.push_back(execute_run(ctx, it->second, spec));
    } catch (const std::exception& e) {
      RunResult failed;
      failed.spec = spec;
      failed.error = e.what();
      if (ctx.persist) write_run_artifacts(ctx, failed);
      results.push_back(std::move(failed));
    }
    if (on_result) on_result(results.back());
  }
  return results;
}

std::vector<ResultCell> collect_cells(const std::vector<RunResult>& results) {
  std::vector<ResultCell> cells;
  std::map<std::string, std::size_t> index;
  for (const auto& r : results) {
    const std::string key = r.spec.cell_id();
    auto it = index.find(key);
    if (it == index.end()) {
      ResultCell cell;
      cell.dataset = r.spec.dataset;
      cell.encoder = r.spec.encoder_label();
      cell.model = r.spec.model_label();
      cell.mode = r.spec.mode;
      cell.policy = r.spec.policy;
      cell.mask_ratio = r.spec.mask_ratio;
      it = index.emplace(key, cells.size()).first;
      cells.push_back(std::move(cell));
    }
    auto& cell = cells[it->second];
    if (r.ok()) {
      cell.scores.push_back(r.value);
      cell.seeds.push_back(r.spec.seed);
      if (cell.metric_name.empty()) cell.metric_name = r.metric_name;
    } else {
      cell.errors.push_back(r.error);
    }
  }
  for (auto& cell : cells) {
    if (cell.scores.size() >= 2) {
      auto [m, s] = exp::aggregate_runs(cell.scores);
      cell.mean = m;
      cell.std = s;
    } else if (cell.scores.size() == 1) {
      cell.mean = cell.scores[0];
    }
  }
  return cells;
}

std::string result_line(const RunContext& ctx, const RunResult& r) {
  json j;
  j["config"] = hex64(ctx.config.hash());
  j["run"] = r.spec.run_id();
  j["dataset"] = r.spec.dataset;
  j["encoder"] = r.spec.encoder_label();
  j["model"] = r.spec.model_label();
  j["mode"] = enc::to_string(r.spec.mode);
  j["policy"] = cfg::to_string(r.spec.policy);
  j["ratio"] = r.spec.mask_ratio;
  j["seed"] = r.spec.seed;
  j["metric"] = r.metric_name;
  if (std::isfinite(r.value))
    j["value"] = r.value;
  else
    j["value"] = nullptr;
  j["runtime_s"] = r.wall_seconds;
  j["checkpoint"] = r.checkpoint_dir;
  j["error"] = r.error;
  return j.dump();
}

void append_results(const RunContext& ctx, const std::vector<RunResult>& results) {
  fs::create_directories(ctx.out_dir);
  std::ofstream os(ctx.out_dir + "/results.jsonl", std::ios::app | std::ios::binary);
  if (!os) throw EngineError("cannot append to " + ctx.out_dir + "/results.jsonl");
  for (const auto& r : results) os << result_line(ctx, r) << "\n";
}

void write_run_artifacts(const RunContext& ctx, const RunResult& r) {
  const std::string rdir = run_dir(ctx, r.spec);
  fs::create_directories(rdir);
  {
    std::ofstream os(rdir + "/record.json", std::ios::binary);
    os << r.record.to_json() << "\n";
  }
  std::ofstream os(rdir + "/result.json", std::ios::binary);
  os << result_line(ctx, r) << "\n";
}

RunResult read_run_result(const std::string& path, const RunSpec& spec) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw EngineError("missing run result: " + path);
  json j = json::parse(is, nullptr, false);
  if (j.is_discarded()) throw EngineError("unreadable run result: " + path);
  RunResult r;
  r.spec = spec;
  r.metric_name = j.value("metric", "");
  r.value = j.contains("value") && j.at("value").is_number()
                ? j.at("value").get<double>()
                : std::numeric_limits<double>::quiet_NaN();
  r.wall_seconds = j.value("runtime_s", 0.0);
  r.checkpoint_dir = j.value("checkpoint", "");
  r.error = j.value("error", "");
  return r;
}

}  // namespace tme::proto
