#pragma once

// The four multimodal fusion strategies and their shared projections.

#include <string>

#include "tme/nn.hpp"

namespace tme::fusion {

enum class Strategy { cat, sum, max, daft };

std::string to_string(Strategy s);
Strategy strategy_from_string(const std::string& s);

// Bias-free maps into the common width k used by Sum/Max/DAFT.
struct ProjectionParams {
  nn::Linear w_t;  // [k, d_t]
  nn::Linear w_i;  // [k, d_i]
  long k = 0;

  ProjectionParams() = default;
  ProjectionParams(long d_t, long d_i, long k);
  void init(Rng& rng);
  void collect(nn::ParamList& out);
};

// Two-layer bottleneck emitting a scale and a shift per fused channel.
// The output layer starts at zero, so fresh parameters modulate nothing.
struct DAFTParams {
  nn::Linear f1;  // [hidden, 2k]
  nn::Linear f2;  // [2k, hidden]
  long k = 0;

  static long hidden_width(long k) { return (2 * k + 6) / 7; }

  DAFTParams() = default;
  explicit DAFTParams(long k);
  void init(Rng& rng);
  void collect(nn::ParamList& out);
};

// (E_T', E_I') = (W_T e_t, W_I e_i); rows are samples.
std::pair<nn::NodePtr, nn::NodePtr> project(nn::Tape* t, const ProjectionParams& p,
                                            const nn::NodePtr& e_t, const nn::NodePtr& e_i);

nn::NodePtr fuse_cat(nn::Tape* t, const nn::NodePtr& e_t, const nn::NodePtr& e_i);
nn::NodePtr fuse_sum(nn::Tape* t, const nn::NodePtr& e_t, const nn::NodePtr& e_i);
nn::NodePtr fuse_max(nn::Tape* t, const nn::NodePtr& e_t, const nn::NodePtr& e_i);
// Z = (1 + alpha) * e_i + beta with (alpha, beta) = bottleneck([e_i ; e_t]).
nn::NodePtr fuse_daft(nn::Tape* t, const DAFTParams& p, const nn::NodePtr& e_t,
                      const nn::NodePtr& e_i);

// Strategy, projections, and DAFT parameters bundled for the full model.
struct Fusion {
  Strategy strategy = Strategy::cat;
  long d_t = 0, d_i = 0, k = 0;
  ProjectionParams proj;  // sum/max/daft only
  DAFTParams daft;        // daft only

  Fusion() = default;
  Fusion(Strategy s, long d_t, long d_i, long k);
  long out_dim() const { return strategy == Strategy::cat ? d_t + d_i : k; }
  void init(Rng& rng);
  nn::ParamList params();
  nn::NodePtr forward(nn::Tape* t, const nn::NodePtr& e_t, const nn::NodePtr& e_i) const;
};

}  // namespace tme::fusion
