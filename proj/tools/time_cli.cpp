// Command-line driver: plans experiment grids from a JSON config, runs them
// serially or as isolated worker processes, and renders reports.
//
//   time train              one model config across seeds
//   time benchmark          full encoder x fusion x mode x policy grid
//   time sweep-missingness  masking-ratio sensitivity curves
//   time cache-embeddings   precompute frozen embeddings
//   time evaluate           re-score persisted checkpoints

#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstdio>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tme/protocol.hpp"
#include "tme/report.hpp"

namespace fs = std::filesystem;
using namespace tme;

namespace {

struct Options {
  std::string config_path;
  std::string out;
  long jobs = 1;
  bool strict_probe = false;
};

enum class PlanKind { train, benchmark, sweep };

const char* plan_token(PlanKind k) {
  switch (k) {
    case PlanKind::train: return "train";
    case PlanKind::benchmark: return "benchmark";
    default: return "sweep";
  }
}

PlanKind plan_from_token(const std::string& s) {
  if (s == "train") return PlanKind::train;
  if (s == "benchmark") return PlanKind::benchmark;
  if (s == "sweep") return PlanKind::sweep;
  throw EngineError("unknown plan kind '" + s + "'");
}

std::vector<proto::RunSpec> build_plan(PlanKind k, const cfg::ExperimentConfig& c) {
  switch (k) {
    case PlanKind::train: return proto::plan_train(c);
    case PlanKind::benchmark: return proto::plan_benchmark(c);
    default: return proto::plan_sweep(c);
  }
}

cfg::ExperimentConfig load(const Options& o) {
  auto c = cfg::load_config(o.config_path);
  if (o.strict_probe) c.strict_probe = true;
  return c;
}

void print_result(const proto::RunResult& r) {
  if (r.ok())
    std::printf("%s %s=%.6f (%.1fs)\n", r.spec.run_id().c_str(), r.metric_name.c_str(), r.value,
                r.wall_seconds);
  else
    std::printf("%s FAILED: %s\n", r.spec.run_id().c_str(), r.error.c_str());
  std::fflush(stdout);
}

void print_cells(const std::vector<proto::ResultCell>& cells) {
  for (const auto& c : cells) {
    const double s = c.metric_name == "accuracy" ? 100.0 : 1.0;
    std::string score = "no successful seeds";
    if (c.scores.size() >= 2)
      score = c.metric_name + " " + exp::format_mean_std(c.mean * s, c.std * s);
    else if (c.scores.size() == 1)
      score = c.metric_name + " " + exp::format_mean_std(c.mean * s, 0.0);
    std::printf("  %s %s [%s/%s r=%.2f] %s (%zu seeds%s)\n", c.dataset.c_str(),
                (c.encoder == "-" ? c.model : c.model + " (" + c.encoder + ")").c_str(),
                enc::to_string(c.mode).c_str(), cfg::to_string(c.policy).c_str(), c.mask_ratio,
                score.c_str(), c.scores.size(),
                c.errors.empty() ? "" : (", " + std::to_string(c.errors.size()) + " failed").c_str());
  }
  std::fflush(stdout);
}

std::string self_exe() {
  char buf[4096];
  const ssize_t n = readlink("/proc/self/exe", buf, sizeof(buf) - 1);
  if (n <= 0) throw EngineError("cannot resolve the worker executable path");
  buf[n] = '\0';
  return buf;
}

// Each run is an isolated process; the parent schedules up to `jobs` workers
// and collects their persisted result files in plan order.
std::vector<proto::RunResult> run_parallel(const Options& o, PlanKind kind,
                                           const proto::RunContext& ctx,
                                           const std::vector<proto::RunSpec>& plan) {
  const std::string self = self_exe();
  std::map<pid_t, std::size_t> active;
  std::map<std::size_t, int> status;
  std::size_t next = 0;

  auto spawn = [&]() {
    while (active.size() < static_cast<std::size_t>(o.jobs) && next < plan.size()) {
      const pid_t pid = fork();
      if (pid < 0) throw EngineError("fork failed");
      if (pid == 0) {
        std::vector<std::string> args = {self,     "run-one", "--config",
                                         o.config_path, "--plan",  plan_token(kind),
                                         "--index",     std::to_string(next)};
        if (!o.out.empty()) {
          args.push_back("--out");
          args.push_back(o.out);
        }
        if (o.strict_probe) args.push_back("--strict-probe");
        std::vector<char*> argv;
        argv.reserve(args.size() + 1);
        for (auto& a : args) argv.push_back(a.data());
        argv.push_back(nullptr);
        execv(self.c_str(), argv.data());
        _exit(127);
      }
      active[pid] = next++;
    }
  };

  spawn();
  while (!active.empty()) {
    int st = 0;
    const pid_t pid = waitpid(-1, &st, 0);
    if (pid < 0) {
      if (errno == EINTR) continue;
      throw EngineError("waitpid failed");
    }
    auto it = active.find(pid);
    if (it == active.end()) continue;
    status[it->second] = st;
    active.erase(it);
    spawn();
  }

  std::vector<proto::RunResult> results;
  results.reserve(plan.size());
  for (std::size_t i = 0; i < plan.size(); ++i) {
    const auto& spec = plan[i];
    try {
      const int st = status.at(i);
      if (st != 0) throw EngineError("worker exited with status " + std::to_string(st));
      results.push_back(
          proto::read_run_result(proto::run_dir(ctx, spec) + "/result.json", spec));
    } catch (const std::exception& e) {
      proto::RunResult r;
      r.spec = spec;
      r.error = e.what();
      results.push_back(std::move(r));
    }
  }
  return results;
}

void require_classification(const cfg::ExperimentConfig& c) {
  for (const auto& ref : c.datasets) {
    auto bundle = proto::resolve_dataset(c, ref.name);
    if (bundle.ds.task != TaskKind::classification)
      throw EngineError("masking sweeps need classification datasets; '" + ref.name +
                        "' is a regression task");
  }
}

int finish(const proto::RunContext& ctx, const std::vector<proto::RunResult>& results,
           PlanKind kind) {
  proto::append_results(ctx, results);
  const auto cells = proto::collect_cells(results);
  const std::string hex = hex64(ctx.config.hash());

  report::write_text_file(ctx.out_dir + "/report.csv", report::cells_csv(cells, hex));
  std::printf("wrote %s/report.csv\n", ctx.out_dir.c_str());
  if (kind == PlanKind::benchmark) {
    report::write_text_file(ctx.out_dir + "/report.md", report::benchmark_markdown(cells, hex));
    std::printf("wrote %s/report.md\n", ctx.out_dir.c_str());
    const auto svg = report::ranking_svg(cells, hex);
    if (!svg.empty()) {
      report::write_text_file(ctx.out_dir + "/ranking.svg", svg);
      std::printf("wrote %s/ranking.svg\n", ctx.out_dir.c_str());
    }
  }
  if (kind == PlanKind::sweep) {
    const auto svg = report::sweep_svg(cells, hex);
    if (!svg.empty()) {
      report::write_text_file(ctx.out_dir + "/sweep.svg", svg);
      std::printf("wrote %s/sweep.svg\n", ctx.out_dir.c_str());
    }
  }

  std::size_t failed = 0;
  for (const auto& r : results) failed += r.ok() ? 0 : 1;
  std::printf("summary (config %s):\n", hex.c_str());
  print_cells(cells);
  std::printf("%zu runs, %zu failed\n", results.size(), failed);
  return failed == 0 ? 0 : 1;
}

int run_command(const Options& o, PlanKind kind) {
  auto c = load(o);
  auto plan = build_plan(kind, c);
  if (kind == PlanKind::sweep) require_classification(c);
  auto ctx = proto::make_context(c, plan, o.out);

  std::vector<proto::RunResult> results;
  if (o.jobs > 1 && plan.size() > 1)
    results = run_parallel(o, kind, ctx, plan);
  else
    results = proto::run_protocol(ctx, plan, print_result);
  return finish(ctx, results, kind);
}

int cmd_run_one(const Options& o, const std::string& token, long index) {
  auto c = load(o);
  auto plan = build_plan(plan_from_token(token), c);
  if (index < 0 || index >= static_cast<long>(plan.size())) {
    std::fprintf(stderr, "run index %ld out of range (plan has %zu runs)\n", index, plan.size());
    return 3;
  }
  const auto spec = plan[static_cast<std::size_t>(index)];
  auto ctx = proto::make_context(c, {spec}, o.out);
  proto::RunResult r;
  try {
    auto bundle = proto::resolve_dataset(c, spec.dataset);
    r = proto::execute_run(ctx, bundle, spec);
  } catch (const std::exception& e) {
    r = proto::RunResult{};
    r.spec = spec;
    r.error = e.what();
    proto::write_run_artifacts(ctx, r);
  }
  print_result(r);
  return 0;
}

// Embeddings depend on dataset, split, policy, ratio, and seed, never on the
// fusion strategy or on which branch is ablated, so the warm list collapses
// those axes. Tuned-mode runs recompute embeddings every step and skip the
// cache entirely.
int cmd_cache_embeddings(const Options& o) {
  auto c = load(o);
  auto plan = proto::plan_benchmark(c);
  if (!c.mask.ratios.empty()) {
    auto sweep = proto::plan_sweep(c);
    plan.insert(plan.end(), sweep.begin(), sweep.end());
  }

  std::set<std::string> seen;
  std::vector<proto::RunSpec> work;
  for (auto spec : plan) {
    if (spec.mode != enc::EncoderMode::frozen) continue;
    spec.branches = model::Branches::both;
    spec.strategy = fusion::Strategy::cat;
    if (seen.insert(spec.run_id()).second) work.push_back(spec);
  }
  if (work.empty()) {
    std::printf("no frozen-mode runs configured; nothing to cache\n");
    return 0;
  }

  auto ctx = proto::make_context(c, work, o.out);
  std::map<std::string, proto::DatasetBundle> datasets;
  std::size_t failed = 0;
  for (const auto& spec : work) {
    try {
      auto it = datasets.find(spec.dataset);
      if (it == datasets.end())
        it = datasets.emplace(spec.dataset, proto::resolve_dataset(c, spec.dataset)).first;
      proto::warm_embeddings(ctx, it->second, spec);
      std::printf("cached %s\n", spec.run_id().c_str());
    } catch (const std::exception& e) {
      std::printf("%s FAILED: %s\n", spec.run_id().c_str(), e.what());
      failed++;
    }
    std::fflush(stdout);
  }
  std::printf("%zu embedding sets ready under %s (config %s)\n", work.size() - failed,
              ctx.cache_dir.c_str(), hex64(c.hash()).c_str());
  return failed == 0 ? 0 : 1;
}

int cmd_evaluate(const Options& o) {
  auto c = load(o);
  std::set<std::string> seen;
  std::vector<proto::RunSpec> plan;
  auto add = [&](std::vector<proto::RunSpec> p) {
    for (auto& s : p)
      if (seen.insert(s.run_id()).second) plan.push_back(s);
  };
  try {
    add(proto::plan_train(c));
  } catch (const std::exception&) {
    // grid configs have no train plan; benchmark and sweep cover them
  }
  add(proto::plan_benchmark(c));
  if (!c.mask.ratios.empty()) add(proto::plan_sweep(c));

  auto ctx = proto::make_context(c, plan, o.out);
  ctx.persist = false;

  std::vector<proto::RunSpec> found;
  for (const auto& s : plan)
    if (fs::exists(proto::run_dir(ctx, s) + "/checkpoint/meta.json")) found.push_back(s);
  if (found.empty()) {
    std::fprintf(stderr, "no checkpoints found under %s/runs\n", ctx.out_dir.c_str());
    return 1;
  }

  std::printf("re-evaluating %zu checkpoints (config %s)\n", found.size(),
              hex64(c.hash()).c_str());
  std::map<std::string, proto::DatasetBundle> datasets;
  std::vector<proto::RunResult> results;
  std::size_t failed = 0;
  for (const auto& spec : found) {
    try {
      auto it = datasets.find(spec.dataset);
      if (it == datasets.end())
        it = datasets.emplace(spec.dataset, proto::resolve_dataset(c, spec.dataset)).first;
      results.push_back(proto::evaluate_checkpoint(ctx, it->second, spec));
    } catch (const std::exception& e) {
      proto::RunResult r;
      r.spec = spec;
      r.error = e.what();
      results.push_back(std::move(r));
      failed++;
    }
    print_result(results.back());
  }
  print_cells(proto::collect_cells(results));
  return failed == 0 ? 0 : 1;
}

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config_path, "experiment config (JSON)")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--out", o.out, "output directory (overrides the config)");
  cmd->add_option("--jobs", o.jobs, "parallel worker processes")->check(CLI::Range(1, 512));
  cmd->add_flag("--strict-probe", o.strict_probe,
                "frozen mode trains the linear head only, not the fusion projections");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tabular-image multimodal engine"};
  app.require_subcommand(1);
  Options o;

  auto* train = app.add_subcommand("train", "train one model configuration across seeds");
  add_common(train, o);
  auto* bench = app.add_subcommand("benchmark", "run the full comparison grid");
  add_common(bench, o);
  auto* sweep = app.add_subcommand("sweep-missingness", "mask-ratio sensitivity sweep");
  add_common(sweep, o);
  auto* cachec = app.add_subcommand("cache-embeddings", "precompute frozen embeddings");
  add_common(cachec, o);
  auto* eval = app.add_subcommand("evaluate", "re-score persisted checkpoints");
  add_common(eval, o);

  std::string worker_plan;
  long worker_index = -1;
  auto* worker = app.add_subcommand("run-one", "");
  worker->group("");  // internal worker, hidden from help
  add_common(worker, o);
  worker->add_option("--plan", worker_plan)->required();
  worker->add_option("--index", worker_index)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return run_command(o, PlanKind::train);
    if (bench->parsed()) return run_command(o, PlanKind::benchmark);
    if (sweep->parsed()) return run_command(o, PlanKind::sweep);
    if (cachec->parsed()) return cmd_cache_embeddings(o);
    if (eval->parsed()) return cmd_evaluate(o);
    if (worker->parsed()) return cmd_run_one(o, worker_plan, worker_index);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 2;
}
