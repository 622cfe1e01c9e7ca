#include "tme/pfn.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>

namespace tme::pfn {

using nn::Mat;
using nn::NodePtr;
using nn::Tape;

namespace {

constexpr long kQueryChunk = 256;  // fixed so recomputation is bit-identical
constexpr char kMagic[8] = {'T', 'M', 'E', 'P', 'F', 'N', '0', '\0'};
constexpr uint32_t kCheckpointVersion = 1;

}  // namespace

void PriorConfig::validate() const {
  if (n_min < 2 || n_min > n_max || n_max > 10000)
    throw EngineError("prior: row range must satisfy 2 <= n_min <= n_max <= 10000");
  if (d_min < 1 || d_min > d_max || d_max > 500)
    throw EngineError("prior: feature range must satisfy 1 <= d_min <= d_max <= 500");
  if (c_min < 2 || c_min > c_max || c_max > 10)
    throw EngineError("prior: class range must satisfy 2 <= c_min <= c_max <= 10");
  if (miss_min < 0.0 || miss_min > miss_max || miss_max > 1.0)
    throw EngineError("prior: missing-rate range must lie in [0,1]");
  if (regression_fraction < 0.0 || regression_fraction > 1.0)
    throw EngineError("prior: regression fraction must lie in [0,1]");
  if (depth_min < 0 || depth_min > depth_max)
    throw EngineError("prior: depth range invalid");
  if (hidden_min < 1 || hidden_min > hidden_max)
    throw EngineError("prior: hidden width range invalid");
}

void PFNConfig::validate() const {
  if (width < 1 || layers < 1 || heads < 1 || ffn < 1 || d_max < 1 || c_max < 2)
    throw EngineError("pfn arch: all dimensions must be positive (c_max >= 2)");
  if (width % heads != 0) throw EngineError("pfn arch: width must divide evenly into heads");
}

uint64_t PFNConfig::arch_hash() const {
  Fnv f;
  f.update_pod(d_max);
  f.update_pod(c_max);
  f.update_pod(width);
  f.update_pod(layers);
  f.update_pod(heads);
  f.update_pod(ffn);
  return f.digest();
}

SyntheticTask generate_synthetic_task(const PriorConfig& cfg, uint64_t seed) {
  cfg.validate();
  Rng rng(mix_seed(seed, 0x7a5cULL));

  SyntheticTask task;
  const long n = rng.uniform_int(cfg.n_min, cfg.n_max);
  const long d = rng.uniform_int(cfg.d_min, cfg.d_max);
  task.kind = rng.uniform() < cfg.regression_fraction ? TaskKind::regression
                                                      : TaskKind::classification;

  task.x = Eigen::MatrixXd(n, d);
  for (long i = 0; i < n; ++i)
    for (long j = 0; j < d; ++j) task.x(i, j) = rng.normal();

  // random shallow function of the inputs
  Eigen::MatrixXd h = task.x;
  const int depth = static_cast<int>(rng.uniform_int(cfg.depth_min, cfg.depth_max));
  for (int l = 0; l < depth; ++l) {
    const long wd = rng.uniform_int(cfg.hidden_min, cfg.hidden_max);
    Eigen::MatrixXd W(h.cols(), wd);
    Eigen::RowVectorXd b(wd);
    const double gain = rng.uniform(0.7, 2.0) / std::sqrt(static_cast<double>(h.cols()));
    for (long r = 0; r < W.rows(); ++r)
      for (long c = 0; c < W.cols(); ++c) W(r, c) = gain * rng.normal();
    for (long c = 0; c < wd; ++c) b(c) = 0.3 * rng.normal();
    h = (h * W).rowwise() + b;
    switch (rng.uniform_int(0, 3)) {
      case 0: h = h.array().tanh(); break;
      case 1: h = h.array().sin(); break;
      case 2: h = h.cwiseMax(0.0); break;
      default: break;  // linear layer
    }
  }
  Eigen::VectorXd w_out(h.cols());
  const double out_gain = 1.0 / std::sqrt(static_cast<double>(h.cols()));
  for (long c = 0; c < h.cols(); ++c) w_out(c) = out_gain * rng.normal();
  Eigen::VectorXd f = h * w_out;

  double f_sd = std::sqrt((f.array() - f.mean()).square().sum() /
                          std::max<double>(1.0, static_cast<double>(n - 1)));
  if (!(f_sd > 1e-12)) f_sd = 1.0;
  const double noise = rng.uniform(0.0, 0.2) * f_sd;
  for (long i = 0; i < n; ++i) f(i) += noise * rng.normal();

  if (task.kind == TaskKind::classification) {
    const int C = static_cast<int>(rng.uniform_int(cfg.c_min, cfg.c_max));
    task.n_classes = C;
    // randomized bucket sizes, each at least 1
    std::vector<double> wts(static_cast<std::size_t>(C));
    double tot = 0.0;
    for (auto& w : wts) {
      w = rng.uniform(0.5, 2.0);
      tot += w;
    }
    std::vector<long> sizes(static_cast<std::size_t>(C));
    long assigned = 0;
    for (int c = 0; c < C; ++c) {
      sizes[static_cast<std::size_t>(c)] =
          std::max<long>(1, static_cast<long>(std::floor(wts[static_cast<std::size_t>(c)] / tot *
                                                         static_cast<double>(n))));
      assigned += sizes[static_cast<std::size_t>(c)];
    }
    long k = 0;
    while (assigned > n) {  // shrink the largest buckets first
      auto it = std::max_element(sizes.begin(), sizes.end());
      --*it;
      --assigned;
    }
    while (assigned < n) {
      sizes[static_cast<std::size_t>(k % C)]++;
      ++assigned;
      ++k;
    }
    // quantile bucketing: ascending function value, contiguous rank blocks
    std::vector<long> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0L);
    std::stable_sort(order.begin(), order.end(), [&](long a, long b) { return f(a) < f(b); });
    task.labels.assign(static_cast<std::size_t>(n), 0);
    long pos = 0;
    for (int c = 0; c < C; ++c)
      for (long i = 0; i < sizes[static_cast<std::size_t>(c)]; ++i)
        task.labels[static_cast<std::size_t>(order[static_cast<std::size_t>(pos++)])] = c;
  } else {
    task.y = f;
  }

  // shuffle rows, carve the context prefix
  std::vector<long> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0L);
  rng.shuffle(perm);
  Eigen::MatrixXd xs(n, d);
  std::vector<int> ls;
  Eigen::VectorXd ys;
  if (task.kind == TaskKind::classification) ls.assign(static_cast<std::size_t>(n), 0);
  else ys.resize(n);
  for (long i = 0; i < n; ++i) {
    xs.row(i) = task.x.row(perm[static_cast<std::size_t>(i)]);
    if (task.kind == TaskKind::classification)
      ls[static_cast<std::size_t>(i)] = task.labels[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
    else
      ys(i) = task.y(perm[static_cast<std::size_t>(i)]);
  }
  task.x = std::move(xs);
  task.labels = std::move(ls);
  task.y = std::move(ys);

  long n_ctx = static_cast<long>(std::floor(rng.uniform(0.3, 0.9) * static_cast<double>(n)));
  n_ctx = std::clamp<long>(n_ctx, std::max<long>(2, task.n_classes), n - 1);
  task.n_ctx = n_ctx;

  if (task.kind == TaskKind::classification) {
    // every class must appear in the context: swap offenders in from the query side
    std::vector<long> ctx_count(static_cast<std::size_t>(task.n_classes), 0);
    for (long i = 0; i < n_ctx; ++i) ctx_count[static_cast<std::size_t>(task.labels[static_cast<std::size_t>(i)])]++;
    for (int c = 0; c < task.n_classes; ++c) {
      if (ctx_count[static_cast<std::size_t>(c)] > 0) continue;
      long donor = -1;
      for (long i = n_ctx; i < n; ++i)
        if (task.labels[static_cast<std::size_t>(i)] == c) {
          donor = i;
          break;
        }
      long victim = -1;
      for (long i = 0; i < n_ctx; ++i)
        if (ctx_count[static_cast<std::size_t>(task.labels[static_cast<std::size_t>(i)])] > 1) {
          victim = i;
          break;
        }
      if (donor < 0 || victim < 0) continue;  // cannot happen for n_ctx >= C
      ctx_count[static_cast<std::size_t>(task.labels[static_cast<std::size_t>(victim)])]--;
      ctx_count[static_cast<std::size_t>(c)]++;
      task.x.row(victim).swap(task.x.row(donor));
      std::swap(task.labels[static_cast<std::size_t>(victim)], task.labels[static_cast<std::size_t>(donor)]);
    }
  }

  // MCAR missingness
  const double rate = rng.uniform(cfg.miss_min, cfg.miss_max);
  task.missing.assign(static_cast<std::size_t>(n * d), 0);
  if (rate > 0.0) {
    for (long i = 0; i < n; ++i)
      for (long j = 0; j < d; ++j)
        if (rng.uniform() < rate) task.missing[static_cast<std::size_t>(i * d + j)] = 1;
  }
  return task;
}

ContextSet context_from_task(const SyntheticTask& task) {
  ContextSet ctx;
  ctx.kind = task.kind;
  const long nc = task.n_ctx, d = task.d();
  ctx.x = task.x.topRows(nc);
  ctx.missing.assign(task.missing.begin(), task.missing.begin() + nc * d);
  if (task.kind == TaskKind::classification) {
    ctx.labels.assign(task.labels.begin(), task.labels.begin() + nc);
    ctx.n_classes = task.n_classes;
  } else {
    ctx.y = task.y.head(nc);
    ctx.y_mean = ctx.y.mean();
    double sd = std::sqrt((ctx.y.array() - ctx.y_mean).square().sum() /
                          std::max<double>(1.0, static_cast<double>(nc - 1)));
    ctx.y_std = sd > 1e-12 ? sd : 1.0;
  }
  return ctx;
}

ContextSet subsample_context(const ContextSet& ctx, long cap, uint64_t seed) {
  const long nc = ctx.x.rows();
  if (nc <= cap) return ctx;
  warn("context has " + std::to_string(nc) + " rows; subsampling to " + std::to_string(cap));
  Rng rng(mix_seed(seed, 0x5ab5a431eULL));

  std::vector<long> chosen;
  std::vector<std::vector<long>> pools;
  long present = 0;
  if (ctx.kind == TaskKind::classification && ctx.n_classes >= 2) {
    pools.resize(static_cast<std::size_t>(ctx.n_classes));
    for (long i = 0; i < nc; ++i)
      pools[static_cast<std::size_t>(ctx.labels[static_cast<std::size_t>(i)])].push_back(i);
    for (auto& p : pools)
      if (!p.empty()) ++present;
  }
  if (present >= 2 && present <= cap) {
    // proportional per class, floor + top-up, keeps every class represented
    long taken = 0;
    std::vector<long> want(pools.size());
    for (std::size_t c = 0; c < pools.size(); ++c) {
      want[c] = std::max<long>(pools[c].empty() ? 0 : 1,
                               static_cast<long>(static_cast<double>(cap) * static_cast<double>(pools[c].size()) /
                                                 static_cast<double>(nc)));
      want[c] = std::min<long>(want[c], static_cast<long>(pools[c].size()));
      taken += want[c];
    }
    for (std::size_t c = 0; taken > cap; c = (c + 1) % pools.size())
      if (want[c] > 1) {
        --want[c];
        --taken;
      }
    for (std::size_t c = 0; taken < cap; c = (c + 1) % pools.size())
      if (want[c] < static_cast<long>(pools[c].size())) {
        ++want[c];
        ++taken;
      }
    for (std::size_t c = 0; c < pools.size(); ++c) {
      auto pick = rng.sample_without_replacement(static_cast<long>(pools[c].size()), want[c]);
      for (long p : pick) chosen.push_back(pools[c][static_cast<std::size_t>(p)]);
    }
  } else {
    chosen = rng.sample_without_replacement(nc, cap);
  }
  std::sort(chosen.begin(), chosen.end());

  ContextSet out;
  out.kind = ctx.kind;
  out.n_classes = ctx.n_classes;
  out.y_mean = ctx.y_mean;
  out.y_std = ctx.y_std;
  const long d = ctx.x.cols(), m = static_cast<long>(chosen.size());
  out.x = Eigen::MatrixXd(m, d);
  out.missing.assign(static_cast<std::size_t>(m * d), 0);
  if (ctx.kind == TaskKind::classification) out.labels.resize(static_cast<std::size_t>(m));
  else out.y.resize(m);
  for (long i = 0; i < m; ++i) {
    long src = chosen[static_cast<std::size_t>(i)];
    out.x.row(i) = ctx.x.row(src);
    std::copy(ctx.missing.begin() + src * d, ctx.missing.begin() + (src + 1) * d,
              out.missing.begin() + i * d);
    if (ctx.kind == TaskKind::classification)
      out.labels[static_cast<std::size_t>(i)] = ctx.labels[static_cast<std::size_t>(src)];
    else
      out.y(i) = ctx.y(src);
  }
  return out;
}

PFNWeights::PFNWeights(PFNConfig c) : cfg(c) {
  cfg.validate();
  w_val = nn::Parameter("pfn.w_val", {cfg.d_max, cfg.width});
  w_flag = nn::Parameter("pfn.w_flag", {cfg.d_max, cfg.width});
  label_table = nn::Parameter("pfn.label_table", {cfg.c_max, cfg.width});
  w_ylabel = nn::Parameter("pfn.w_ylabel", {1, cfg.width});
  query_marker = nn::Parameter("pfn.query_marker", {1, cfg.width});
  blocks.resize(static_cast<std::size_t>(cfg.layers));
  for (long l = 0; l < cfg.layers; ++l) {
    auto pre = "pfn.block" + std::to_string(l) + ".";
    auto& b = blocks[static_cast<std::size_t>(l)];
    b.ln1 = nn::LayerNorm(pre + "ln1", cfg.width);
    b.ln2 = nn::LayerNorm(pre + "ln2", cfg.width);
    b.wq = nn::Linear(pre + "wq", cfg.width, cfg.width);
    b.wk = nn::Linear(pre + "wk", cfg.width, cfg.width);
    b.wv = nn::Linear(pre + "wv", cfg.width, cfg.width);
    b.wo = nn::Linear(pre + "wo", cfg.width, cfg.width);
    b.ff1 = nn::Linear(pre + "ff1", cfg.width, cfg.ffn);
    b.ff2 = nn::Linear(pre + "ff2", cfg.ffn, cfg.width);
  }
  ln_final = nn::LayerNorm("pfn.ln_final", cfg.width);
  head_cls = nn::Linear("pfn.head_cls", cfg.width, cfg.c_max);
  head_reg = nn::Linear("pfn.head_reg", cfg.width, 1);
}

void PFNWeights::init(Rng& rng) {
  auto fill = [&rng](nn::Parameter& p, double sd) {
    for (long i = 0; i < p.size(); ++i) p.value[i] = sd * rng.normal();
  };
  fill(w_val, 0.25);
  fill(w_flag, 0.25);
  fill(label_table, 0.25);
  fill(w_ylabel, 0.25);
  fill(query_marker, 0.25);
  for (auto& b : blocks) {
    b.wq.init_xavier(rng);
    b.wk.init_xavier(rng);
    b.wv.init_xavier(rng);
    b.wo.init_xavier(rng);
    b.ff1.init_xavier(rng);
    b.ff2.init_xavier(rng);
  }
  head_cls.init_xavier(rng);
  head_reg.init_xavier(rng);
}

nn::ParamList PFNWeights::params() {
  nn::ParamList ps;
  ps.push_back(&w_val);
  ps.push_back(&w_flag);
  ps.push_back(&label_table);
  ps.push_back(&w_ylabel);
  ps.push_back(&query_marker);
  for (auto& b : blocks) {
    b.ln1.collect(ps);
    b.wq.collect(ps);
    b.wk.collect(ps);
    b.wv.collect(ps);
    b.wo.collect(ps);
    b.ln2.collect(ps);
    b.ff1.collect(ps);
    b.ff2.collect(ps);
  }
  ln_final.collect(ps);
  head_cls.collect(ps);
  head_reg.collect(ps);
  return ps;
}

nn::ParamList PFNWeights::params() const {
  return const_cast<PFNWeights*>(this)->params();  // read-only use by hashing/serialization
}

uint64_t PFNWeights::content_hash() const { return nn::params_hash(params()); }

namespace {

struct Padded {
  Mat v;  // z-values, 0 where missing or padded
  Mat f;  // presence flags
};

Padded pad_inputs(const Eigen::MatrixXd& x, const std::vector<uint8_t>& missing, long d_max) {
  const long n = x.rows(), d = x.cols();
  if (d < 1) throw EngineError("in-context encoder: empty feature matrix");
  if (d > d_max)
    throw EngineError("feature count d=" + std::to_string(d) +
                      " exceeds the encoder maximum d_max=" + std::to_string(d_max));
  if (static_cast<long>(missing.size()) != n * d)
    throw EngineError("in-context encoder: mask size does not match matrix");
  Padded p;
  p.v = Mat::Zero(n, d_max);
  p.f = Mat::Zero(n, d_max);
  for (long i = 0; i < n; ++i)
    for (long j = 0; j < d; ++j) {
      if (missing[static_cast<std::size_t>(i * d + j)]) continue;
      const double val = x(i, j);
      if (!std::isfinite(val))
        throw EngineError("non-finite observed value at row " + std::to_string(i) + " column " +
                          std::to_string(j));
      p.v(i, j) = val;
      p.f(i, j) = 1.0;
    }
  return p;
}

struct TwoStream {
  NodePtr c, q;
};

NodePtr ffn_forward(Tape* t, const PFNWeights::Block& b, const NodePtr& x) {
  return b.ff2.forward(t, nn::gelu(t, b.ff1.forward(t, x)));
}

TwoStream attention(Tape* t, const PFNWeights::Block& b, const TwoStream& s, long heads) {
  auto qc = b.wq.forward(t, s.c), kc = b.wk.forward(t, s.c), vc = b.wv.forward(t, s.c);
  auto qq = b.wq.forward(t, s.q), kq = b.wk.forward(t, s.q), vq = b.wv.forward(t, s.q);
  const long width = qc->cols();
  const long dh = width / heads;
  const double scl = 1.0 / std::sqrt(static_cast<double>(dh));
  const long nc = qc->rows();

  NodePtr ctx_cat, q_cat;
  for (long h = 0; h < heads; ++h) {
    auto qc_h = nn::slice_cols(t, qc, h * dh, dh);
    auto kc_h = nn::slice_cols(t, kc, h * dh, dh);
    auto vc_h = nn::slice_cols(t, vc, h * dh, dh);
    auto qq_h = nn::slice_cols(t, qq, h * dh, dh);
    auto kq_h = nn::slice_cols(t, kq, h * dh, dh);
    auto vq_h = nn::slice_cols(t, vq, h * dh, dh);

    // context tokens attend among themselves
    auto ac = nn::softmax_rows(t, nn::scale(t, nn::matmul_nt(t, qc_h, kc_h), scl));
    auto ctx_h = nn::matmul(t, ac, vc_h);

    // each query attends to the context plus itself, never to other queries
    auto s_ctx = nn::scale(t, nn::matmul_nt(t, qq_h, kc_h), scl);
    auto s_self = nn::scale(t, nn::rowwise_dot(t, qq_h, kq_h), scl);
    auto aq = nn::softmax_rows(t, nn::concat_cols(t, s_ctx, s_self));
    auto q_h = nn::add(t, nn::matmul(t, nn::slice_cols(t, aq, 0, nc), vc_h),
                       nn::mul_colvec(t, vq_h, nn::slice_cols(t, aq, nc, 1)));

    ctx_cat = ctx_cat ? nn::concat_cols(t, ctx_cat, ctx_h) : ctx_h;
    q_cat = q_cat ? nn::concat_cols(t, q_cat, q_h) : q_h;
  }
  return {b.wo.forward(t, ctx_cat), b.wo.forward(t, q_cat)};
}

// Encodes context rows (with labels) and query rows (with the query
// marker), runs the masked transformer, returns final-normed streams.
TwoStream pfn_forward(Tape* t, const PFNWeights& w, const ContextSet& ctx,
                      const Eigen::MatrixXd& queries, const std::vector<uint8_t>& q_missing) {
  auto& wt = const_cast<PFNWeights&>(w);
  if (ctx.x.rows() < 1) throw EngineError("in-context encoder: context is empty");
  if (queries.cols() != ctx.x.cols())
    throw EngineError("query feature count d=" + std::to_string(queries.cols()) +
                      " does not match context d=" + std::to_string(ctx.x.cols()));
  auto pc = pad_inputs(ctx.x, ctx.missing, w.cfg.d_max);
  auto pq = pad_inputs(queries, q_missing, w.cfg.d_max);

  auto tok_c = nn::add(t, nn::matmul(t, nn::constant(t, pc.v), nn::leaf(t, wt.w_val)),
                       nn::matmul(t, nn::constant(t, pc.f), nn::leaf(t, wt.w_flag)));
  if (ctx.kind == TaskKind::classification) {
    if (ctx.n_classes < 2 || ctx.n_classes > w.cfg.c_max)
      throw EngineError("context class count " + std::to_string(ctx.n_classes) +
                        " outside [2, " + std::to_string(w.cfg.c_max) + "]");
    if (static_cast<long>(ctx.labels.size()) != ctx.x.rows())
      throw EngineError("context label count does not match rows");
    for (int y : ctx.labels)
      if (y < 0 || y >= ctx.n_classes) throw EngineError("context label out of range");
    tok_c = nn::add(t, tok_c, nn::gather_rows(t, nn::leaf(t, wt.label_table), ctx.labels));
  } else {
    if (ctx.y.size() != ctx.x.rows()) throw EngineError("context target count does not match rows");
    Mat ystd(ctx.x.rows(), 1);
    for (long i = 0; i < ctx.x.rows(); ++i) ystd(i, 0) = (ctx.y(i) - ctx.y_mean) / ctx.y_std;
    tok_c = nn::add(t, tok_c, nn::matmul(t, nn::constant(t, ystd), nn::leaf(t, wt.w_ylabel)));
  }

  auto tok_q = nn::add(t, nn::matmul(t, nn::constant(t, pq.v), nn::leaf(t, wt.w_val)),
                       nn::matmul(t, nn::constant(t, pq.f), nn::leaf(t, wt.w_flag)));
  tok_q = nn::add_rowvec(t, tok_q, nn::leaf(t, wt.query_marker));

  TwoStream s{tok_c, tok_q};
  for (auto& b : wt.blocks) {
    TwoStream normed{b.ln1.forward(t, s.c), b.ln1.forward(t, s.q)};
    TwoStream att = attention(t, b, normed, w.cfg.heads);
    s = {nn::add(t, s.c, att.c), nn::add(t, s.q, att.q)};
    TwoStream normed2{b.ln2.forward(t, s.c), b.ln2.forward(t, s.q)};
    s = {nn::add(t, s.c, ffn_forward(t, b, normed2.c)),
         nn::add(t, s.q, ffn_forward(t, b, normed2.q))};
  }
  return {wt.ln_final.forward(t, s.c), wt.ln_final.forward(t, s.q)};
}

Eigen::MatrixXd restricted_softmax(const Mat& logits, int n_classes) {
  Eigen::MatrixXd probs(logits.rows(), n_classes);
  for (long i = 0; i < logits.rows(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < n_classes; ++c) mx = std::max(mx, logits(i, c));
    double z = 0.0;
    for (int c = 0; c < n_classes; ++c) {
      probs(i, c) = std::exp(logits(i, c) - mx);
      z += probs(i, c);
    }
    probs.row(i) /= z;
  }
  return probs;
}

// runs f over fixed-size query chunks and stacks the [rows_i, out] results
template <typename Fn>
Eigen::MatrixXd chunked(const Eigen::MatrixXd& rows, const std::vector<uint8_t>& missing,
                        long out_cols, Fn&& f) {
  const long n = rows.rows(), d = rows.cols();
  if (static_cast<long>(missing.size()) != n * d)
    throw EngineError("in-context encoder: mask size does not match matrix");
  Eigen::MatrixXd out(n, out_cols);
  for (long start = 0; start < n; start += kQueryChunk) {
    const long m = std::min(kQueryChunk, n - start);
    Eigen::MatrixXd chunk = rows.middleRows(start, m);
    std::vector<uint8_t> cmiss(missing.begin() + start * d, missing.begin() + (start + m) * d);
    out.middleRows(start, m) = f(chunk, cmiss);
  }
  return out;
}

ContextSet capped(const ContextSet& ctx) {
  if (ctx.x.rows() <= kMaxContextRows) return ctx;
  Fnv f;
  f.update(ctx.x.data(), static_cast<std::size_t>(ctx.x.size()) * sizeof(double));
  return subsample_context(ctx, kMaxContextRows, f.digest());
}

}  // namespace

Eigen::MatrixXd pfn_predict(const PFNWeights& w, const ContextSet& ctx,
                            const Eigen::MatrixXd& queries,
                            const std::vector<uint8_t>& missing) {
  if (ctx.kind != TaskKind::classification)
    throw EngineError("pfn_predict: context is not a classification context");
  auto& wt = const_cast<PFNWeights&>(w);
  ContextSet use = capped(ctx);
  return chunked(queries, missing, ctx.n_classes,
                 [&](const Eigen::MatrixXd& q, const std::vector<uint8_t>& qm) {
                   auto streams = pfn_forward(nullptr, w, use, q, qm);
                   auto logits = wt.head_cls.forward(nullptr, streams.q);
                   return restricted_softmax(logits->mat(), ctx.n_classes);
                 });
}

Eigen::VectorXd pfn_predict_reg(const PFNWeights& w, const ContextSet& ctx,
                                const Eigen::MatrixXd& queries,
                                const std::vector<uint8_t>& missing) {
  if (ctx.kind != TaskKind::regression)
    throw EngineError("pfn_predict_reg: context is not a regression context");
  auto& wt = const_cast<PFNWeights&>(w);
  ContextSet use = capped(ctx);
  Eigen::MatrixXd out =
      chunked(queries, missing, 1, [&](const Eigen::MatrixXd& q, const std::vector<uint8_t>& qm) {
        auto streams = pfn_forward(nullptr, w, use, q, qm);
        auto mean = wt.head_reg.forward(nullptr, streams.q);
        return Eigen::MatrixXd(mean->mat());
      });
  return out.col(0) * ctx.y_std + Eigen::VectorXd::Constant(out.rows(), ctx.y_mean);
}

Eigen::MatrixXd pfn_embed(const PFNWeights& w, const ContextSet& ctx,
                          const Eigen::MatrixXd& rows, const std::vector<uint8_t>& missing) {
  ContextSet use = capped(ctx);
  return chunked(rows, missing, w.cfg.width,
                 [&](const Eigen::MatrixXd& q, const std::vector<uint8_t>& qm) {
                   auto streams = pfn_forward(nullptr, w, use, q, qm);
                   return Eigen::MatrixXd(streams.q->mat());
                 });
}

PFNWeights train_pfn(const PriorConfig& prior, const PFNConfig& arch, long steps, uint64_t seed,
                     std::vector<double>* loss_history, TrainPfnOptions opts) {
  prior.validate();
  arch.validate();
  if (steps < 1) throw EngineError("train_pfn: steps must be >= 1");
  if (prior.d_max > arch.d_max)
    throw EngineError("train_pfn: prior feature range exceeds the architecture's d_max");
  if (prior.c_max > arch.c_max)
    throw EngineError("train_pfn: prior class range exceeds the architecture's c_max");

  const auto t0 = std::chrono::steady_clock::now();
  PFNWeights w(arch);
  Rng rng(mix_seed(seed, 0x9f17ULL));
  w.init(rng);
  auto ps = w.params();
  nn::AdamW opt(ps, opts.lr, 0.0);

  for (long step = 0; step < steps; ++step) {
    auto task = generate_synthetic_task(prior, mix_seed(seed, static_cast<uint64_t>(step)));
    auto ctx = context_from_task(task);
    const long nq = task.n() - task.n_ctx, d = task.d();
    Eigen::MatrixXd qx = task.x.bottomRows(nq);
    std::vector<uint8_t> qm(task.missing.begin() + task.n_ctx * d, task.missing.end());

    Tape tape;
    auto streams = pfn_forward(&tape, w, ctx, qx, qm);
    NodePtr loss;
    if (task.kind == TaskKind::classification) {
      std::vector<int> qy(task.labels.begin() + task.n_ctx, task.labels.end());
      auto logits = w.head_cls.forward(&tape, streams.q);
      loss = nn::softmax_ce(&tape, logits, qy, task.n_classes);
    } else {
      nn::Arr target(nq);
      for (long i = 0; i < nq; ++i) target(i) = (task.y(task.n_ctx + i) - ctx.y_mean) / ctx.y_std;
      auto mean = w.head_reg.forward(&tape, streams.q);
      loss = nn::mse_loss(&tape, mean, target);
    }
    const double lv = loss->value[0];
    if (!std::isfinite(lv))
      throw EngineError("train_pfn: loss diverged at step " + std::to_string(step));
    if (loss_history) loss_history->push_back(lv);
    if (opts.on_step) opts.on_step(step, lv);

    opt.zero_grad();
    tape.backward(loss);
    nn::clip_grad_norm(ps, opts.clip_norm);
    const double lr = opts.warmup_steps > 0 && step < opts.warmup_steps
                          ? opts.lr * static_cast<double>(step + 1) /
                                static_cast<double>(opts.warmup_steps)
                          : opts.lr;
    opt.set_lr(lr);
    opt.step();
  }

  w.trained_seed = seed;
  w.trained_steps = steps;
  w.train_wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return w;
}

void save_pfn(const std::string& path, const PFNWeights& w) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw EngineError("cannot write checkpoint: " + path);
  os.write(kMagic, sizeof(kMagic));
  auto put = [&os](const auto& v) { os.write(reinterpret_cast<const char*>(&v), sizeof(v)); };
  put(kCheckpointVersion);
  put(w.cfg.d_max);
  put(w.cfg.c_max);
  put(w.cfg.width);
  put(w.cfg.layers);
  put(w.cfg.heads);
  put(w.cfg.ffn);
  uint64_t ah = w.cfg.arch_hash();
  put(ah);
  put(w.trained_seed);
  put(w.trained_steps);
  put(w.train_wall_seconds);
  nn::write_params(os, w.params());
  uint64_t ch = w.content_hash();
  put(ch);
  if (!os) throw EngineError("failed writing checkpoint: " + path);
}

PFNWeights load_pfn(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw EngineError("cannot open checkpoint: " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw EngineError("not an in-context encoder checkpoint: " + path);
  auto get = [&is](auto& v) { is.read(reinterpret_cast<char*>(&v), sizeof(v)); };
  uint32_t version = 0;
  get(version);
  if (version != kCheckpointVersion)
    throw EngineError("unsupported checkpoint version " + std::to_string(version));
  PFNConfig cfg;
  get(cfg.d_max);
  get(cfg.c_max);
  get(cfg.width);
  get(cfg.layers);
  get(cfg.heads);
  get(cfg.ffn);
  uint64_t stored_arch = 0;
  get(stored_arch);
  if (!is) throw EngineError("truncated checkpoint header: " + path);
  if (stored_arch != cfg.arch_hash())
    throw EngineError("checkpoint architecture hash mismatch: " + path);
  PFNWeights w(cfg);
  get(w.trained_seed);
  get(w.trained_steps);
  get(w.train_wall_seconds);
  nn::read_params(is, w.params());
  uint64_t stored_content = 0;
  get(stored_content);
  if (!is) throw EngineError("truncated checkpoint: " + path);
  if (stored_content != w.content_hash())
    throw EngineError("checkpoint content hash mismatch (corrupt file): " + path);
  return w;
}

}  // namespace tme::pfn
