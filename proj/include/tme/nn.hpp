#pragma once

// Reverse-mode autodiff over flat row-major double tensors, sized for
// desk-scale models. Ops record onto a Tape; pass tape == nullptr for a
// value-only (inference) evaluation.

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "tme/common.hpp"

namespace tme::nn {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Arr = Eigen::ArrayXd;
using MatMap = Eigen::Map<Mat>;
using CMatMap = Eigen::Map<const Mat>;

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
  std::vector<long> shape;
  Arr value;
  Arr grad;  // allocated lazily, same length as value
  bool needs_grad = false;
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backward;

  long size() const { return value.size(); }
  long rows() const { return shape.at(0); }
  long cols() const { return shape.at(1); }
  bool is_scalar() const { return value.size() == 1; }

  CMatMap mat() const { return CMatMap(value.data(), rows(), cols()); }
  MatMap mat_mut() { return MatMap(value.data(), rows(), cols()); }
  MatMap gmat() { return MatMap(grad.data(), rows(), cols()); }

  void ensure_grad() {
    if (grad.size() != value.size()) grad = Arr::Zero(value.size());
  }
};

class Tape {
 public:
  void record(const NodePtr& n) { nodes_.push_back(n); }
  // Seeds root->grad with 1 and propagates to all recorded ancestors.
  void backward(const NodePtr& root);
  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<NodePtr> nodes_;
};

// Trainable (or frozen) parameter storage that persists across steps.
struct Parameter {
  std::string name;
  std::vector<long> shape;
  Arr value;
  Arr grad;

  Parameter() = default;
  Parameter(std::string n, std::vector<long> s) : name(std::move(n)), shape(std::move(s)) {
    long total = 1;
    for (long d : shape) total *= d;
    value = Arr::Zero(total);
    grad = Arr::Zero(total);
  }
  long size() const { return value.size(); }
  long rows() const { return shape.at(0); }
  long cols() const { return shape.at(1); }
  MatMap mat() { return MatMap(value.data(), rows(), cols()); }
  CMatMap mat() const { return CMatMap(value.data(), rows(), cols()); }
  void zero_grad() { grad.setZero(); }
};

using ParamList = std::vector<Parameter*>;

uint64_t params_hash(const ParamList& ps);
void write_params(std::ostream& os, const ParamList& ps);
void read_params(std::istream& is, const ParamList& ps);  // shapes must match

// --- node constructors -------------------------------------------------

NodePtr constant(Tape* t, const Mat& m);
NodePtr constant(Tape* t, Arr v, std::vector<long> shape);
NodePtr leaf(Tape* t, Parameter& p);  // gradient flows into p.grad

// --- ops ----------------------------------------------------------------

NodePtr matmul(Tape* t, const NodePtr& a, const NodePtr& b);     // [m,k]x[k,n]
NodePtr matmul_nt(Tape* t, const NodePtr& a, const NodePtr& b);  // a * b^T, b is [n,k]
NodePtr add(Tape* t, const NodePtr& a, const NodePtr& b);
NodePtr add_rowvec(Tape* t, const NodePtr& a, const NodePtr& b);  // b is [1,n]
NodePtr sub(Tape* t, const NodePtr& a, const NodePtr& b);
NodePtr mul(Tape* t, const NodePtr& a, const NodePtr& b);  // elementwise
NodePtr emax(Tape* t, const NodePtr& a, const NodePtr& b);
NodePtr scale(Tape* t, const NodePtr& a, double c);
NodePtr add_scalar(Tape* t, const NodePtr& a, double c);
NodePtr relu(Tape* t, const NodePtr& a);
NodePtr gelu(Tape* t, const NodePtr& a);
NodePtr tanh_act(Tape* t, const NodePtr& a);
NodePtr concat_cols(Tape* t, const NodePtr& a, const NodePtr& b);
NodePtr slice_cols(Tape* t, const NodePtr& a, long first, long count);
NodePtr softmax_rows(Tape* t, const NodePtr& a);
NodePtr layer_norm(Tape* t, const NodePtr& x, const NodePtr& gamma, const NodePtr& beta,
                   double eps = 1e-5);
NodePtr gather_rows(Tape* t, const NodePtr& table, const std::vector<int>& idx);
NodePtr mean_all(Tape* t, const NodePtr& a);
NodePtr sum_all(Tape* t, const NodePtr& a);
NodePtr rowwise_dot(Tape* t, const NodePtr& a, const NodePtr& b);  // [m,n]x[m,n] -> [m,1]
NodePtr mul_colvec(Tape* t, const NodePtr& a, const NodePtr& c);   // scale row i by c[i]; c is [m,1]

// Mean cross-entropy of rowwise softmax restricted to the first
// `n_valid` logit columns. labels[i] in [0, n_valid).
NodePtr softmax_ce(Tape* t, const NodePtr& logits, const std::vector<int>& labels, long n_valid);
NodePtr mse_loss(Tape* t, const NodePtr& pred, const Arr& target);

// x: [N, C, H, W]; w: [Cout, C*kh*kw]; b: [1, Cout]
NodePtr conv2d(Tape* t, const NodePtr& x, const NodePtr& w, const NodePtr& b, int kh, int kw,
               int stride, int pad);
NodePtr global_avg_pool(Tape* t, const NodePtr& x);                 // [N,C,H,W] -> [N,C]
NodePtr channel_affine(Tape* t, const NodePtr& x, const NodePtr& s, const NodePtr& o);

// --- layers ---------------------------------------------------------------

struct Linear {
  Parameter w;  // [out, in]
  Parameter b;  // [1, out]
  bool has_bias = true;

  Linear() = default;
  Linear(const std::string& name, long in, long out, bool bias = true);
  void init_xavier(Rng& rng);
  void init_zero();
  NodePtr forward(Tape* t, const NodePtr& x) const;  // x: [m, in]
  void collect(ParamList& out) {
    out.push_back(&w);
    if (has_bias) out.push_back(&b);
  }
  long in_dim() const { return w.cols(); }
  long out_dim() const { return w.rows(); }
};

struct LayerNorm {
  Parameter gamma;  // [1, n]
  Parameter beta;   // [1, n]

  LayerNorm() = default;
  explicit LayerNorm(const std::string& name, long n);
  NodePtr forward(Tape* t, const NodePtr& x) const;
  void collect(ParamList& out) {
    out.push_back(&gamma);
    out.push_back(&beta);
  }
};

struct Embedding {
  Parameter table;  // [vocab, dim]

  Embedding() = default;
  Embedding(const std::string& name, long vocab, long dim);
  void init_normal(Rng& rng, double std);
  NodePtr forward(Tape* t, const std::vector<int>& idx) const;
  void collect(ParamList& out) { out.push_back(&table); }
};

// --- optimizer --------------------------------------------------------------

class AdamW {
 public:
  AdamW(ParamList params, double lr, double weight_decay = 0.01, double beta1 = 0.9,
        double beta2 = 0.999, double eps = 1e-8);
  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }
  void step();
  void zero_grad();
  const ParamList& params() const { return params_; }

 private:
  ParamList params_;
  std::vector<Arr> m_, v_;
  long t_ = 0;
  double lr_, wd_, b1_, b2_, eps_;
};

// Scales gradients so the global norm is at most max_norm; returns the
// pre-clip norm.
double clip_grad_norm(const ParamList& params, double max_norm);

}  // namespace tme::nn
