#include "tme/nn.hpp"

#include <cmath>
#include <istream>
#include <ostream>

namespace tme::nn {

namespace {

long shape_size(const std::vector<long>& shape) {
  long total = 1;
  for (long d : shape) total *= d;
  return total;
}

NodePtr make_node(Tape* t, std::vector<long> shape, std::vector<NodePtr> parents) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  bool ng = false;
  for (const auto& p : parents) ng = ng || p->needs_grad;
  n->needs_grad = ng && t != nullptr;
  if (n->needs_grad) n->parents = std::move(parents);
  if (t && n->needs_grad) t->record(n);
  return n;
}

void check2d(const NodePtr& a, const char* op) {
  if (a->shape.size() != 2) throw EngineError(std::string(op) + ": expected 2-d tensor");
}

}  // namespace

void Tape::backward(const NodePtr& root) {
  if (!root->is_scalar()) throw EngineError("backward: root must be scalar");
  root->ensure_grad();
  root->grad(0) = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node& n = **it;
    if (n.backward && n.grad.size() == n.value.size()) n.backward(n);
  }
}

uint64_t params_hash(const ParamList& ps) {
  Fnv f;
  for (const Parameter* p : ps) {
    f.update(p->name);
    for (long d : p->shape) f.update_pod(d);
    f.update(p->value.data(), static_cast<std::size_t>(p->value.size()) * sizeof(double));
  }
  return f.digest();
}

void write_params(std::ostream& os, const ParamList& ps) {
  for (const Parameter* p : ps) {
    uint64_t n = static_cast<uint64_t>(p->value.size());
    os.write(reinterpret_cast<const char*>(&n), sizeof(n));
    os.write(reinterpret_cast<const char*>(p->value.data()),
             static_cast<std::streamsize>(n * sizeof(double)));
  }
}

void read_params(std::istream& is, const ParamList& ps) {
  for (Parameter* p : ps) {
    uint64_t n = 0;
    is.read(reinterpret_cast<char*>(&n), sizeof(n));
    if (!is || n != static_cast<uint64_t>(p->value.size()))
      throw EngineError("read_params: size mismatch for " + p->name);
    is.read(reinterpret_cast<char*>(p->value.data()),
            static_cast<std::streamsize>(n * sizeof(double)));
    if (!is) throw EngineError("read_params: truncated stream at " + p->name);
  }
}

NodePtr constant(Tape*, const Mat& m) {
  auto n = std::make_shared<Node>();
  n->shape = {m.rows(), m.cols()};
  n->value = Arr::Map(m.data(), m.size());
  return n;
}

NodePtr constant(Tape*, Arr v, std::vector<long> shape) {
  if (shape_size(shape) != v.size()) throw EngineError("constant: shape/value mismatch");
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(v);
  return n;
}

NodePtr leaf(Tape* t, Parameter& p) {
  auto n = std::make_shared<Node>();
  n->shape = p.shape;
  n->value = p.value;
  n->needs_grad = t != nullptr;
  if (n->needs_grad) {
    Parameter* pp = &p;
    n->backward = [pp](Node& self) { pp->grad += self.grad; };
    t->record(n);
  }
  return n;
}

NodePtr matmul(Tape* t, const NodePtr& a, const NodePtr& b) {
  check2d(a, "matmul");
  check2d(b, "matmul");
  if (a->cols() != b->rows()) throw EngineError("matmul: inner dimension mismatch");
  auto out = make_node(t, {a->rows(), b->cols()}, {a, b});
  out->value.resize(out->rows() * out->cols());
  out->mat_mut().noalias() = a->mat() * b->mat();
  if (out->needs_grad) {
    NodePtr pa = a, pb = b;
    out->backward = [pa, pb](Node& self) {
      if (pa->needs_grad) {
        pa->ensure_grad();
        pa->gmat().noalias() += self.gmat() * pb->mat().transpose();
      }
      if (pb->needs_grad) {
        pb->ensure_grad();
        pb->gmat().noalias() += pa->mat().transpose() * self.gmat();
      }
    };
  }
  return out;
}

NodePtr matmul_nt(Tape* t, const NodePtr& a, const NodePtr& b) {
  check2d(a, "matmul_nt");
  check2d(b, "matmul_nt");
  if (a->cols() != b->cols()) throw EngineError("matmul_nt: inner dimension mismatch");
  auto out = make_node(t, {a->rows(), b->rows()}, {a, b});
  out->value.resize(out->rows() * out->cols());
  out->mat_mut().noalias() = a->mat() * b->mat().transpose();
  if (out->needs_grad) {
    NodePtr pa = a, pb = b;
    out->backward = [pa, pb](Node& self) {
      if (pa->needs_grad) {
        pa->ensure_grad();
        pa->gmat().noalias() += self.gmat() * pb->mat();
      }
      if (pb->needs_grad) {
        pb->ensure_grad();
        pb->gmat().noalias() += self.gmat().transpose() * pa->mat();
      }
    };
  }
  return out;
}

NodePtr add(Tape* t, const NodePtr& a, const NodePtr& b) {
  if (a->shape != b->shape) throw EngineError("add: shape mismatch");
  auto out = make_node(t, a->shape, {a, b});
  out->value = a->value + b->value;
  if (out->needs_grad) {
    NodePtr pa = a, pb = b;
    out->backward = [pa, pb](Node& self) {
      if (pa->needs_grad) {
        pa->ensure_grad();
        pa->grad += self.grad;
      }
      if (pb->needs_grad) {
        pb->ensure_grad();
        pb->grad += self.grad;
      }
    };
  }
  return out;
}

NodePtr add_rowvec(Tape* t, const NodePtr& a, const NodePtr& b) {
  check2d(a, "add_rowvec");
  if (b->rows() != 1 || b->cols() != a->cols()) throw EngineError("add_rowvec: bad bias shape");
  auto out = make_node(t, a->shape, {a, b});
  out->value.resize(a->size());
  out->mat_mut() = a->mat().rowwise() + b->mat().row(0);
  if (out->needs_grad) {
    NodePtr pa = a, pb = b;
    out->backward = [pa, pb](Node& self) {
      if (pa->needs_grad) {
        pa->ensure_grad();
        pa->grad += self.grad;
      }
      if (pb->needs_grad) {
        pb->ensure_grad();
        pb->gmat().row(0) += self.gmat().colwise().sum();
      }
    };
  }
  return out;
}

NodePtr sub(Tape* t, const NodePtr& a, const NodePtr& b) {
  if (a->shape != b->shape) throw EngineError("sub: shape mismatch");
  auto out = make_node(t, a->shape, {a, b});
  out->value = a->value - b->value;
  if (out->needs_grad) {
    NodePtr pa = a, pb = b;
    out->backward = [pa, pb](Node& self) {
      if (pa->needs_grad) {
        pa->ensure_grad();
        pa->grad += self.grad;
      }
      if (pb->needs_grad) {
        pb->ensure_grad();
        pb->grad -= self.grad;
      }
    };
  }
  return out;
}

NodePtr mul(Tape* t, const NodePtr& a, const NodePtr& b) {
  if (a->shape != b->shape) throw EngineError("mul: shape mismatch");
  auto out = make_node(t, a->shape, {a, b});
  out->value = a->value * b->value;
  if (out->needs_grad) {
    NodePtr pa = a, pb = b;
    out->backward = [pa, pb](Node& self) {
      if (pa->needs_grad) {
        pa->ensure_grad();
        pa->grad += self.grad * pb->value;
      }
      if (pb->needs_grad) {
        pb->ensure_grad();
        pb->grad += self.grad * pa->value;
      }
    };
  }
  return out;
}

NodePtr emax(Tape* t, const NodePtr& a, const NodePtr& b) {
  if (a->shape != b->shape) throw EngineError("emax: shape mismatch");
  auto out = make_node(t, a->shape, {a, b});
  out->value = a->value.max(b->value);
  if (out->needs_grad) {
    NodePtr pa = a, pb = b;
    out->backward = [pa, pb](Node& self) {
      // ties route the gradient to the first argument
      Arr take_a = (pa->value >= pb->value).cast<double>();
      if (pa->needs_grad) {
        pa->ensure_grad();
        pa->grad += self.grad * take_a;
      }
      if (pb->needs_grad) {
        pb->ensure_grad();
        pb->grad += self.grad * (1.0 - take_a);
      }
    };
  }
  return out;
}

NodePtr scale(Tape* t, const NodePtr& a, double c) {
  auto out = make_node(t, a->shape, {a});
  out->value = a->value * c;
  if (out->needs_grad) {
    NodePtr pa = a;
    out->backward = [pa, c](Node& self) {
      pa->ensure_grad();
      pa->grad += self.grad * c;
    };
  }
  return out;
}

NodePtr add_scalar(Tape* t, const NodePtr& a, double c) {
  auto out = make_node(t, a->shape, {a});
  out->value = a->value + c;
  if (out->needs_grad) {
    NodePtr pa = a;
    out->backward = [pa](Node& self) {
      pa->ensure_grad();
      pa->grad += self.grad;
    };
  }
  return out;
}

NodePtr relu(Tape* t, const NodePtr& a) {
  auto out = make_node(t, a->shape, {a});
  out->value = a->value.max(0.0);
  if (out->needs_grad) {
    NodePtr pa = a;
    out->backward = [pa](Node& self) {
      pa->ensure_grad();
      pa->grad += self.grad * (pa->value > 0.0).cast<double>();
    };
  }
  return out;
}

NodePtr gelu(Tape* t, const NodePtr& a) {
  auto out = make_node(t, a->shape, {a});
  const double inv_sqrt2 = 0.7071067811865475244;
  out->value = a->value.unaryExpr(
      [inv_sqrt2](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); });
  if (out->needs_grad) {
    NodePtr pa = a;
    out->backward = [pa, inv_sqrt2](Node& self) {
      pa->ensure_grad();
      const double inv_sqrt2pi = 0.3989422804014326779;
      pa->grad += self.grad * pa->value.unaryExpr([&](double x) {
        double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
        double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
        return cdf + x * pdf;
      });
    };
  }
  return out;
}

NodePtr tanh_act(Tape* t, const NodePtr& a) {
  auto out = make_node(t, a->shape, {a});
  out->value = a->value.tanh();
  if (out->needs_grad) {
    NodePtr pa = a;
    NodePtr self_keep = out;
    out->backward = [pa](Node& self) {
      pa->ensure_grad();
      pa->grad += self.grad * (1.0 - self.value.square());
    };
    (void)self_keep;
  }
  return out;
}

NodePtr concat_cols(Tape* t, const NodePtr& a, const NodePtr& b) {
  check2d(a, "concat_cols");
  check2d(b, "concat_cols");
  if (a->rows() != b->rows()) throw EngineError("concat_cols: row mismatch");
  auto out = make_node(t, {a->rows(), a->cols() + b->cols()}, {a, b});
  out->value.resize(out->rows() * out->cols());
  out->mat_mut().leftCols(a->cols()) = a->mat();
  out->mat_mut().rightCols(b->cols()) = b->mat();
  if (out->needs_grad) {
    NodePtr pa = a, pb = b;
    out->backward = [pa, pb](Node& self) {
      if (pa->needs_grad) {
        pa->ensure_grad();
        pa->gmat() += self.gmat().leftCols(pa->cols());
      }
      if (pb->needs_grad) {
        pb->ensure_grad();
        pb->gmat() += self.gmat().rightCols(pb->cols());
      }
    };
  }
  return out;
}

NodePtr slice_cols(Tape* t, const NodePtr& a, long first, long count) {
  check2d(a, "slice_cols");
  if (first < 0 || count < 0 || first + count > a->cols())
    throw EngineError("slice_cols: out of range");
  auto out = make_node(t, {a->rows(), count}, {a});
  out->value.resize(a->rows() * count);
  out->mat_mut() = a->mat().middleCols(first, count);
  if (out->needs_grad) {
    NodePtr pa = a;
    out->backward = [pa, first, count](Node& self) {
      pa->ensure_grad();
      pa->gmat().middleCols(first, count) += self.gmat();
    };
  }
  return out;
}

NodePtr softmax_rows(Tape* t, const NodePtr& a) {
  check2d(a, "softmax_rows");
  auto out = make_node(t, a->shape, {a});
  out->value.resize(a->size());
  MatMap o = out->mat_mut();
  CMatMap x = a->mat();
  for (long i = 0; i < x.rows(); ++i) {
    double m = x.row(i).maxCoeff();
    Eigen::RowVectorXd e = (x.row(i).array() - m).exp().matrix();
    o.row(i) = e / e.sum();
  }
  if (out->needs_grad) {
    NodePtr pa = a;
    out->backward = [pa](Node& self) {
      pa->ensure_grad();
      CMatMap y(self.value.data(), self.rows(), self.cols());
      CMatMap gy(self.grad.data(), self.rows(), self.cols());
      MatMap gx = pa->gmat();
      for (long i = 0; i < y.rows(); ++i) {
        double dot = (gy.row(i).array() * y.row(i).array()).sum();
        gx.row(i).array() += y.row(i).array() * (gy.row(i).array() - dot);
      }
    };
  }
  return out;
}

NodePtr layer_norm(Tape* t, const NodePtr& x, const NodePtr& gamma, const NodePtr& beta,
                   double eps) {
  check2d(x, "layer_norm");
  long n = x->cols();
  if (gamma->cols() != n || beta->cols() != n) throw EngineError("layer_norm: affine shape");
  auto out = make_node(t, x->shape, {x, gamma, beta});
  out->value.resize(x->size());
  Mat xhat(x->rows(), n);
  Eigen::VectorXd inv_std(x->rows());
  {
    CMatMap xm = x->mat();
    for (long i = 0; i < xm.rows(); ++i) {
      double mu = xm.row(i).mean();
      double var = (xm.row(i).array() - mu).square().mean();
      double is = 1.0 / std::sqrt(var + eps);
      inv_std(i) = is;
      xhat.row(i) = (xm.row(i).array() - mu) * is;
    }
    MatMap o = out->mat_mut();
    for (long i = 0; i < xm.rows(); ++i)
      o.row(i).array() =
          xhat.row(i).array() * gamma->mat().row(0).array() + beta->mat().row(0).array();
  }
  if (out->needs_grad) {
    NodePtr px = x, pg = gamma, pb = beta;
    auto xhat_keep = std::make_shared<Mat>(std::move(xhat));
    auto istd_keep = std::make_shared<Eigen::VectorXd>(std::move(inv_std));
    out->backward = [px, pg, pb, xhat_keep, istd_keep](Node& self) {
      CMatMap gy(self.grad.data(), self.rows(), self.cols());
      const Mat& xh = *xhat_keep;
      long n = self.cols();
      if (pg->needs_grad) {
        pg->ensure_grad();
        pg->gmat().row(0) += (gy.array() * xh.array()).colwise().sum().matrix();
      }
      if (pb->needs_grad) {
        pb->ensure_grad();
        pb->gmat().row(0) += gy.colwise().sum();
      }
      if (px->needs_grad) {
        px->ensure_grad();
        MatMap gx = px->gmat();
        Eigen::RowVectorXd g = pg->mat().row(0);
        for (long i = 0; i < self.rows(); ++i) {
          Eigen::RowVectorXd gyg = (gy.row(i).array() * g.array()).matrix();
          double mean_gyg = gyg.mean();
          double mean_gyg_xhat = (gyg.array() * xh.row(i).array()).mean();
          gx.row(i).array() += ((*istd_keep)(i)) *
                               (gyg.array() - mean_gyg - xh.row(i).array() * mean_gyg_xhat);
        }
        (void)n;
      }
    };
  }
  return out;
}

NodePtr gather_rows(Tape* t, const NodePtr& table, const std::vector<int>& idx) {
  check2d(table, "gather_rows");
  long m = static_cast<long>(idx.size());
  long dim = table->cols();
  for (int i : idx)
    if (i < 0 || i >= table->rows()) throw EngineError("gather_rows: index out of range");
  auto out = make_node(t, {m, dim}, {table});
  out->value.resize(m * dim);
  MatMap o = out->mat_mut();
  for (long i = 0; i < m; ++i) o.row(i) = table->mat().row(idx[static_cast<std::size_t>(i)]);
  if (out->needs_grad) {
    NodePtr pt = table;
    auto idx_keep = std::make_shared<std::vector<int>>(idx);
    out->backward = [pt, idx_keep](Node& self) {
      pt->ensure_grad();
      MatMap g = pt->gmat();
      CMatMap gy(self.grad.data(), self.rows(), self.cols());
      for (long i = 0; i < self.rows(); ++i)
        g.row((*idx_keep)[static_cast<std::size_t>(i)]) += gy.row(i);
    };
  }
  return out;
}

NodePtr mean_all(Tape* t, const NodePtr& a) {
  auto out = make_node(t, {1, 1}, {a});
  out->value = Arr::Constant(1, a->value.mean());
  if (out->needs_grad) {
    NodePtr pa = a;
    out->backward = [pa](Node& self) {
      pa->ensure_grad();
      pa->grad += self.grad(0) / static_cast<double>(pa->value.size());
    };
  }
  return out;
}

NodePtr sum_all(Tape* t, const NodePtr& a) {
  auto out = make_node(t, {1, 1}, {a});
  out->value = Arr::Constant(1, a->value.sum());
  if (out->needs_grad) {
    NodePtr pa = a;
    out->backward = [pa](Node& self) {
      pa->ensure_grad();
      pa->grad += self.grad(0);
    };
  }
  return out;
}

NodePtr rowwise_dot(Tape* t, const NodePtr& a, const NodePtr& b) {
  check2d(a, "rowwise_dot");
  if (a->shape != b->shape) throw EngineError("rowwise_dot: shape mismatch");
  const long m = a->rows();
  auto out = make_node(t, {m, 1}, {a, b});
  out->value = (a->mat().array() * b->mat().array()).rowwise().sum();
  if (out->needs_grad) {
    NodePtr pa = a, pb = b;
    out->backward = [pa, pb](Node& self) {
      pa->ensure_grad();
      pb->ensure_grad();
      Eigen::VectorXd g = self.gmat().col(0);
      pa->gmat() += g.asDiagonal() * pb->mat();
      pb->gmat() += g.asDiagonal() * pa->mat();
    };
  }
  return out;
}

NodePtr mul_colvec(Tape* t, const NodePtr& a, const NodePtr& c) {
  check2d(a, "mul_colvec");
  if (c->cols() != 1 || c->rows() != a->rows()) throw EngineError("mul_colvec: scale shape");
  auto out = make_node(t, a->shape, {a, c});
  Eigen::VectorXd s = c->mat().col(0);
  out->value = Arr(a->value.size());
  MatMap(out->value.data(), a->rows(), a->cols()) = s.asDiagonal() * a->mat();
  if (out->needs_grad) {
    NodePtr pa = a, pc = c;
    out->backward = [pa, pc](Node& self) {
      pa->ensure_grad();
      pc->ensure_grad();
      Eigen::VectorXd sv = pc->mat().col(0);
      pa->gmat() += sv.asDiagonal() * self.gmat();
      pc->gmat().col(0) += (self.gmat().array() * pa->mat().array()).rowwise().sum().matrix();
    };
  }
  return out;
}

NodePtr softmax_ce(Tape* t, const NodePtr& logits, const std::vector<int>& labels, long n_valid) {
  check2d(logits, "softmax_ce");
  long m = logits->rows();
  if (static_cast<long>(labels.size()) != m) throw EngineError("softmax_ce: label count");
  if (n_valid < 1 || n_valid > logits->cols()) throw EngineError("softmax_ce: n_valid");
  for (int y : labels)
    if (y < 0 || y >= n_valid) throw EngineError("softmax_ce: label out of range");

  auto probs = std::make_shared<Mat>(m, n_valid);
  CMatMap x = logits->mat();
  double loss = 0.0;
  for (long i = 0; i < m; ++i) {
    double mx = x.row(i).head(n_valid).maxCoeff();
    Eigen::RowVectorXd e = (x.row(i).head(n_valid).array() - mx).exp().matrix();
    double z = e.sum();
    probs->row(i) = e / z;
    loss -= std::log((*probs)(i, labels[static_cast<std::size_t>(i)]) + 1e-300);
  }
  loss /= static_cast<double>(m);

  auto out = make_node(t, {1, 1}, {logits});
  out->value = Arr::Constant(1, loss);
  if (out->needs_grad) {
    NodePtr pl = logits;
    auto labels_keep = std::make_shared<std::vector<int>>(labels);
    out->backward = [pl, probs, labels_keep, n_valid](Node& self) {
      pl->ensure_grad();
      MatMap g = pl->gmat();
      double s = self.grad(0) / static_cast<double>(probs->rows());
      for (long i = 0; i < probs->rows(); ++i) {
        g.row(i).head(n_valid) += s * probs->row(i);
        g(i, (*labels_keep)[static_cast<std::size_t>(i)]) -= s;
      }
    };
  }
  return out;
}

NodePtr mse_loss(Tape* t, const NodePtr& pred, const Arr& target) {
  if (pred->size() != target.size()) throw EngineError("mse_loss: size mismatch");
  auto out = make_node(t, {1, 1}, {pred});
  Arr diff = pred->value - target;
  out->value = Arr::Constant(1, diff.square().mean());
  if (out->needs_grad) {
    NodePtr pp = pred;
    auto diff_keep = std::make_shared<Arr>(std::move(diff));
    out->backward = [pp, diff_keep](Node& self) {
      pp->ensure_grad();
      pp->grad +=
          self.grad(0) * 2.0 / static_cast<double>(diff_keep->size()) * (*diff_keep);
    };
  }
  return out;
}

namespace {

struct ConvDims {
  long n, cin, h, w, cout, hout, wout;
  int kh, kw, stride, pad;
};

ConvDims conv_dims(const NodePtr& x, const NodePtr& w, int kh, int kw, int stride, int pad) {
  if (x->shape.size() != 4) throw EngineError("conv2d: input must be [N,C,H,W]");
  ConvDims d;
  d.n = x->shape[0];
  d.cin = x->shape[1];
  d.h = x->shape[2];
  d.w = x->shape[3];
  d.cout = w->rows();
  if (w->cols() != d.cin * kh * kw) throw EngineError("conv2d: weight shape mismatch");
  d.kh = kh;
  d.kw = kw;
  d.stride = stride;
  d.pad = pad;
  d.hout = (d.h + 2 * pad - kh) / stride + 1;
  d.wout = (d.w + 2 * pad - kw) / stride + 1;
  if (d.hout < 1 || d.wout < 1) throw EngineError("conv2d: output underflow");
  return d;
}

// Builds the [hout*wout, cin*kh*kw] patch matrix for one sample.
void im2col(const double* img, const ConvDims& d, Mat& cols) {
  cols.resize(d.hout * d.wout, d.cin * d.kh * d.kw);
  for (long oy = 0; oy < d.hout; ++oy) {
    for (long ox = 0; ox < d.wout; ++ox) {
      long row = oy * d.wout + ox;
      long col = 0;
      for (long c = 0; c < d.cin; ++c) {
        const double* plane = img + c * d.h * d.w;
        for (int ky = 0; ky < d.kh; ++ky) {
          long iy = oy * d.stride - d.pad + ky;
          for (int kx = 0; kx < d.kw; ++kx, ++col) {
            long ix = ox * d.stride - d.pad + kx;
            cols(row, col) =
                (iy >= 0 && iy < d.h && ix >= 0 && ix < d.w) ? plane[iy * d.w + ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const Mat& cols, const ConvDims& d, double* img) {
  for (long oy = 0; oy < d.hout; ++oy) {
    for (long ox = 0; ox < d.wout; ++ox) {
      long row = oy * d.wout + ox;
      long col = 0;
      for (long c = 0; c < d.cin; ++c) {
        double* plane = img + c * d.h * d.w;
        for (int ky = 0; ky < d.kh; ++ky) {
          long iy = oy * d.stride - d.pad + ky;
          for (int kx = 0; kx < d.kw; ++kx, ++col) {
            long ix = ox * d.stride - d.pad + kx;
            if (iy >= 0 && iy < d.h && ix >= 0 && ix < d.w) plane[iy * d.w + ix] += cols(row, col);
          }
        }
      }
    }
  }
}

}  // namespace

NodePtr conv2d(Tape* t, const NodePtr& x, const NodePtr& w, const NodePtr& b, int kh, int kw,
               int stride, int pad) {
  ConvDims d = conv_dims(x, w, kh, kw, stride, pad);
  if (b->size() != d.cout) throw EngineError("conv2d: bias shape mismatch");
  auto out = make_node(t, {d.n, d.cout, d.hout, d.wout}, {x, w, b});
  out->value.resize(d.n * d.cout * d.hout * d.wout);

  long plane = d.hout * d.wout;
  Mat cols;
  for (long s = 0; s < d.n; ++s) {
    im2col(x->value.data() + s * d.cin * d.h * d.w, d, cols);
    // result [cout, hout*wout]
    Mat res = w->mat() * cols.transpose();
    res.colwise() += Eigen::Map<const Eigen::VectorXd>(b->value.data(), d.cout);
    Arr::Map(out->value.data() + s * d.cout * plane, d.cout * plane) =
        Arr::Map(res.data(), d.cout * plane);
  }
  if (out->needs_grad) {
    NodePtr px = x, pw = w, pb = b;
    out->backward = [px, pw, pb, d](Node& self) {
      long plane = d.hout * d.wout;
      Mat cols;
      for (long s = 0; s < d.n; ++s) {
        CMatMap gy(self.grad.data() + s * d.cout * plane, d.cout, plane);
        im2col(px->value.data() + s * d.cin * d.h * d.w, d, cols);
        if (pw->needs_grad) {
          pw->ensure_grad();
          pw->gmat().noalias() += gy * cols;
        }
        if (pb->needs_grad) {
          pb->ensure_grad();
          Eigen::Map<Eigen::VectorXd>(pb->grad.data(), d.cout) += gy.rowwise().sum();
        }
        if (px->needs_grad) {
          px->ensure_grad();
          Mat gcols = gy.transpose() * pw->mat();  // [hout*wout, cin*kh*kw]
          col2im_add(gcols, d, px->grad.data() + s * d.cin * d.h * d.w);
        }
      }
    };
  }
  return out;
}

NodePtr global_avg_pool(Tape* t, const NodePtr& x) {
  if (x->shape.size() != 4) throw EngineError("global_avg_pool: input must be [N,C,H,W]");
  long n = x->shape[0], c = x->shape[1], plane = x->shape[2] * x->shape[3];
  auto out = make_node(t, {n, c}, {x});
  out->value.resize(n * c);
  for (long s = 0; s < n; ++s)
    for (long ch = 0; ch < c; ++ch)
      out->value(s * c + ch) = Arr::Map(x->value.data() + (s * c + ch) * plane, plane).mean();
  if (out->needs_grad) {
    NodePtr px = x;
    out->backward = [px, plane](Node& self) {
      px->ensure_grad();
      long n = self.rows(), c = self.cols();
      for (long s = 0; s < n; ++s)
        for (long ch = 0; ch < c; ++ch)
          Arr::Map(px->grad.data() + (s * c + ch) * plane, plane) +=
              self.grad(s * c + ch) / static_cast<double>(plane);
    };
  }
  return out;
}

NodePtr channel_affine(Tape* t, const NodePtr& x, const NodePtr& s, const NodePtr& o) {
  if (x->shape.size() != 4) throw EngineError("channel_affine: input must be [N,C,H,W]");
  long n = x->shape[0], c = x->shape[1], plane = x->shape[2] * x->shape[3];
  if (s->size() != c || o->size() != c) throw EngineError("channel_affine: param shape");
  auto out = make_node(t, x->shape, {x, s, o});
  out->value.resize(x->size());
  for (long i = 0; i < n; ++i)
    for (long ch = 0; ch < c; ++ch)
      Arr::Map(out->value.data() + (i * c + ch) * plane, plane) =
          Arr::Map(x->value.data() + (i * c + ch) * plane, plane) * s->value(ch) + o->value(ch);
  if (out->needs_grad) {
    NodePtr px = x, ps = s, po = o;
    out->backward = [px, ps, po, n, c, plane](Node& self) {
      for (long i = 0; i < n; ++i) {
        for (long ch = 0; ch < c; ++ch) {
          auto gy = Arr::Map(self.grad.data() + (i * c + ch) * plane, plane);
          if (px->needs_grad) {
            px->ensure_grad();
            Arr::Map(px->grad.data() + (i * c + ch) * plane, plane) += gy * ps->value(ch);
          }
          if (ps->needs_grad) {
            ps->ensure_grad();
            ps->grad(ch) +=
                (gy * Arr::Map(px->value.data() + (i * c + ch) * plane, plane)).sum();
          }
          if (po->needs_grad) {
            po->ensure_grad();
            po->grad(ch) += gy.sum();
          }
        }
      }
    };
  }
  return out;
}

// --- layers -----------------------------------------------------------------

Linear::Linear(const std::string& name, long in, long out, bool bias)
    : w(name + ".w", {out, in}), b(name + ".b", {1, out}), has_bias(bias) {}

void Linear::init_xavier(Rng& rng) {
  double bound = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
  for (long i = 0; i < w.size(); ++i) w.value(i) = rng.uniform(-bound, bound);
  b.value.setZero();
}

void Linear::init_zero() {
  w.value.setZero();
  b.value.setZero();
}

NodePtr Linear::forward(Tape* t, const NodePtr& x) const {
  auto& self = const_cast<Linear&>(*this);
  NodePtr wx = matmul_nt(t, x, leaf(t, self.w));
  if (!has_bias) return wx;
  return add_rowvec(t, wx, leaf(t, self.b));
}

LayerNorm::LayerNorm(const std::string& name, long n)
    : gamma(name + ".gamma", {1, n}), beta(name + ".beta", {1, n}) {
  gamma.value.setOnes();
}

NodePtr LayerNorm::forward(Tape* t, const NodePtr& x) const {
  auto& self = const_cast<LayerNorm&>(*this);
  return layer_norm(t, x, leaf(t, self.gamma), leaf(t, self.beta));
}

Embedding::Embedding(const std::string& name, long vocab, long dim)
    : table(name + ".table", {vocab, dim}) {}

void Embedding::init_normal(Rng& rng, double std) {
  for (long i = 0; i < table.size(); ++i) table.value(i) = rng.normal() * std;
}

NodePtr Embedding::forward(Tape* t, const std::vector<int>& idx) const {
  auto& self = const_cast<Embedding&>(*this);
  return gather_rows(t, leaf(t, self.table), idx);
}

// --- optimizer ----------------------------------------------------------------

AdamW::AdamW(ParamList params, double lr, double weight_decay, double beta1, double beta2,
             double eps)
    : params_(std::move(params)), lr_(lr), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Parameter* p : params_) {
    m_.push_back(Arr::Zero(p->size()));
    v_.push_back(Arr::Zero(p->size()));
  }
}

void AdamW::step() {
  ++t_;
  double bc1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter* p = params_[i];
    m_[i] = b1_ * m_[i] + (1.0 - b1_) * p->grad;
    v_[i] = b2_ * v_[i] + (1.0 - b2_) * p->grad.square();
    Arr mhat = m_[i] / bc1;
    Arr vhat = v_[i] / bc2;
    // decoupled weight decay
    p->value -= lr_ * (mhat / (vhat.sqrt() + eps_) + wd_ * p->value);
  }
}

void AdamW::zero_grad() {
  for (Parameter* p : params_) p->zero_grad();
}

double clip_grad_norm(const ParamList& params, double max_norm) {
  double sq = 0.0;
  for (const Parameter* p : params) sq += p->grad.square().sum();
  double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    double s = max_norm / norm;
    for (Parameter* p : params) p->grad *= s;
  }
  return norm;
}

}  // namespace tme::nn
