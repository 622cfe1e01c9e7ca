#include "tme/fusion.hpp"

namespace tme::fusion {

using nn::NodePtr;
using nn::Tape;

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::cat: return "cat";
    case Strategy::sum: return "sum";
    case Strategy::max: return "max";
    case Strategy::daft: return "daft";
  }
  throw EngineError("bad fusion strategy value");
}

Strategy strategy_from_string(const std::string& s) {
  if (s == "cat") return Strategy::cat;
  if (s == "sum") return Strategy::sum;
  if (s == "max") return Strategy::max;
  if (s == "daft") return Strategy::daft;
  throw EngineError("unknown fusion strategy '" + s + "'");
}

ProjectionParams::ProjectionParams(long d_t, long d_i, long k_) : k(k_) {
  if (d_t < 1 || d_i < 1 || k < 1) throw EngineError("projection dims must be positive");
  w_t = nn::Linear("fusion.w_t", d_t, k, false);
  w_i = nn::Linear("fusion.w_i", d_i, k, false);
}

void ProjectionParams::init(Rng& rng) {
  w_t.init_xavier(rng);
  w_i.init_xavier(rng);
}

void ProjectionParams::collect(nn::ParamList& out) {
  w_t.collect(out);
  w_i.collect(out);
}

DAFTParams::DAFTParams(long k_) : k(k_) {
  if (k < 1) throw EngineError("daft width must be positive");
  const long hidden = hidden_width(k);
  f1 = nn::Linear("daft.f1", 2 * k, hidden);
  f2 = nn::Linear("daft.f2", hidden, 2 * k);
}

void DAFTParams::init(Rng& rng) {
  f1.init_xavier(rng);
  f2.init_zero();
}

void DAFTParams::collect(nn::ParamList& out) {
  f1.collect(out);
  f2.collect(out);
}

std::pair<NodePtr, NodePtr> project(Tape* t, const ProjectionParams& p, const NodePtr& e_t,
                                    const NodePtr& e_i) {
  if (e_t->cols() != p.w_t.in_dim() || e_i->cols() != p.w_i.in_dim())
    throw EngineError("projection input width mismatch");
  return {p.w_t.forward(t, e_t), p.w_i.forward(t, e_i)};
}

NodePtr fuse_cat(Tape* t, const NodePtr& e_t, const NodePtr& e_i) {
  if (e_t->cols() < 1 || e_i->cols() < 1) throw EngineError("fuse_cat: empty embedding");
  return nn::concat_cols(t, e_t, e_i);
}

NodePtr fuse_sum(Tape* t, const NodePtr& e_t, const NodePtr& e_i) {
  if (e_t->cols() != e_i->cols()) throw EngineError("fuse_sum: width mismatch");
  return nn::add(t, e_t, e_i);
}

NodePtr fuse_max(Tape* t, const NodePtr& e_t, const NodePtr& e_i) {
  if (e_t->cols() != e_i->cols()) throw EngineError("fuse_max: width mismatch");
  return nn::emax(t, e_t, e_i);
}

NodePtr fuse_daft(Tape* t, const DAFTParams& p, const NodePtr& e_t, const NodePtr& e_i) {
  if (e_t->cols() != p.k || e_i->cols() != p.k) throw EngineError("fuse_daft: width mismatch");
  auto h = nn::concat_cols(t, e_i, e_t);
  auto mid = nn::relu(t, p.f1.forward(t, h));
  auto ab = p.f2.forward(t, mid);
  auto alpha = nn::slice_cols(t, ab, 0, p.k);
  auto beta = nn::slice_cols(t, ab, p.k, p.k);
  return nn::add(t, nn::mul(t, nn::add_scalar(t, alpha, 1.0), e_i), beta);
}

Fusion::Fusion(Strategy s, long dt, long di, long k_) : strategy(s), d_t(dt), d_i(di), k(k_) {
  if (d_t < 1 || d_i < 1) throw EngineError("fusion input dims must be positive");
  if (strategy != Strategy::cat) {
    proj = ProjectionParams(d_t, d_i, k);
    if (strategy == Strategy::daft) daft = DAFTParams(k);
  }
}

void Fusion::init(Rng& rng) {
  if (strategy != Strategy::cat) proj.init(rng);
  if (strategy == Strategy::daft) daft.init(rng);
}

nn::ParamList Fusion::params() {
  nn::ParamList out;
  if (strategy != Strategy::cat) proj.collect(out);
  if (strategy == Strategy::daft) daft.collect(out);
  return out;
}

NodePtr Fusion::forward(Tape* t, const NodePtr& e_t, const NodePtr& e_i) const {
  if (e_t->cols() != d_t || e_i->cols() != d_i) throw EngineError("fusion input width mismatch");
  if (strategy == Strategy::cat) return fuse_cat(t, e_t, e_i);
  auto [tp, ip] = project(t, proj, e_t, e_i);
  switch (strategy) {
    case Strategy::sum: return fuse_sum(t, tp, ip);
    case Strategy::max: return fuse_max(t, tp, ip);
    case Strategy::daft: return fuse_daft(t, daft, tp, ip);
    default: break;
  }
  throw EngineError("bad fusion strategy value");
}

}  // namespace tme::fusion
