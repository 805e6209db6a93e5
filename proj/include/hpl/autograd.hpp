#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "hpl/errors.hpp"
#include "hpl/rng.hpp"
#include "hpl/tensor.hpp"

namespace hpl::ag {

template <class S>
class NodeT;

template <class S>
using VarT = std::shared_ptr<NodeT<S>>;

// Reverse-mode tape node. `backward_op` reads this node's grad and
// accumulates into the parents' grads. Parents hold the graph alive;
// the lambda only keeps raw access to its own node.
template <class S>
class NodeT {
 public:
  TensorT<S> val;
  TensorT<S> grad;
  bool requires_grad = false;
  std::vector<VarT<S>> parents;
  std::function<void(NodeT<S>&)> backward_op;

  void ensure_grad() {
    if (grad.numel() != val.numel()) grad = TensorT<S>(val.shape());
  }
  void zero_grad() { grad = TensorT<S>(); }
};

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
  ~NoGradGuard() { grad_mode() = prev; }
};

template <class S>
VarT<S> make_var(TensorT<S> value, bool requires_grad = false) {
  auto n = std::make_shared<NodeT<S>>();
  n->val = std::move(value);
  n->requires_grad = requires_grad;
  return n;
}

template <class S>
VarT<S> constant(TensorT<S> value) {
  return make_var(std::move(value), false);
}

namespace detail {

template <class S>
bool track(std::initializer_list<const VarT<S>*> ins) {
  if (!grad_mode()) return false;
  for (const auto* v : ins)
    if ((*v)->requires_grad) return true;
  return false;
}

template <class S>
void accum(const VarT<S>& p, const TensorT<S>& g) {
  if (!p->requires_grad) return;
  p->ensure_grad();
  p->grad.vec() += g.vec();
}

}  // namespace detail

// Runs the tape backward from a scalar root.
template <class S>
void backward(const VarT<S>& root) {
  if (root->val.numel() != 1) throw ParamError("backward: root must be scalar");
  std::vector<NodeT<S>*> order;
  std::unordered_set<NodeT<S>*> seen;
  std::vector<std::pair<NodeT<S>*, size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      NodeT<S>* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root->ensure_grad();
  root->grad.fill(S(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward_op && (*it)->grad.numel() > 0) (*it)->backward_op(**it);
  }
}

// ---------------------------------------------------------------------------
// Matrix products
// ---------------------------------------------------------------------------

template <class S>
VarT<S> matmul(const VarT<S>& a, const VarT<S>& b, bool ta = false, bool tb = false) {
  const auto A = a->val.mat();
  const auto B = b->val.mat();
  const long m = ta ? A.cols() : A.rows();
  const long ka = ta ? A.rows() : A.cols();
  const long kb = tb ? B.cols() : B.rows();
  const long n = tb ? B.rows() : B.cols();
  if (ka != kb)
    throw ParamError("matmul: inner dimensions " + a->val.shape_str() + " vs " +
                     b->val.shape_str());
  auto out = make_var(TensorT<S>({m, n}));
  auto C = out->val.mat();
  if (!ta && !tb) C.noalias() = A * B;
  else if (ta && !tb) C.noalias() = A.transpose() * B;
  else if (!ta && tb) C.noalias() = A * B.transpose();
  else C.noalias() = A.transpose() * B.transpose();

  if (detail::track<S>({&a, &b})) {
    out->requires_grad = true;
    out->parents = {a, b};
    out->backward_op = [a, b, ta, tb](NodeT<S>& o) {
      const auto G = o.grad.mat(o.val.rows(), o.val.cols());
      if (a->requires_grad) {
        a->ensure_grad();
        auto GA = a->grad.mat(a->val.rows(), a->val.cols());
        const auto B = b->val.mat();
        if (!ta && !tb) GA.noalias() += G * B.transpose();
        else if (!ta && tb) GA.noalias() += G * B;
        else if (ta && !tb) GA.noalias() += B * G.transpose();
        else GA.noalias() += B.transpose() * G.transpose();
      }
      if (b->requires_grad) {
        b->ensure_grad();
        auto GB = b->grad.mat(b->val.rows(), b->val.cols());
        const auto A = a->val.mat();
        if (!ta && !tb) GB.noalias() += A.transpose() * G;
        else if (ta && !tb) GB.noalias() += A * G;
        else if (!ta && tb) GB.noalias() += G.transpose() * A;
        else GB.noalias() += G.transpose() * A.transpose();
      }
    };
  }
  return out;
}

// Batched product over leading dim: a [B,m,k], b [B,k,n] (pre-transpose shapes).
template <class S>
VarT<S> bmm(const VarT<S>& a, const VarT<S>& b, bool ta = false, bool tb = false) {
  if (a->val.ndim() != 3 || b->val.ndim() != 3 || a->val.dim(0) != b->val.dim(0))
    throw ParamError("bmm: need matching 3-d tensors");
  const long Bn = a->val.dim(0);
  const long ra = a->val.dim(1), ca = a->val.dim(2);
  const long rb = b->val.dim(1), cb = b->val.dim(2);
  const long m = ta ? ca : ra, ka = ta ? ra : ca;
  const long kb = tb ? cb : rb, n = tb ? rb : cb;
  if (ka != kb) throw ParamError("bmm: inner dimensions mismatch");
  auto out = make_var(TensorT<S>({Bn, m, n}));
#pragma omp parallel for schedule(static)
  for (long i = 0; i < Bn; ++i) {
    typename TensorT<S>::CMapMat A(a->val.ptr() + i * ra * ca, ra, ca);
    typename TensorT<S>::CMapMat B(b->val.ptr() + i * rb * cb, rb, cb);
    typename TensorT<S>::MapMat C(out->val.ptr() + i * m * n, m, n);
    if (!ta && !tb) C.noalias() = A * B;
    else if (ta && !tb) C.noalias() = A.transpose() * B;
    else if (!ta && tb) C.noalias() = A * B.transpose();
    else C.noalias() = A.transpose() * B.transpose();
  }
  if (detail::track<S>({&a, &b})) {
    out->requires_grad = true;
    out->parents = {a, b};
    out->backward_op = [a, b, ta, tb, Bn, ra, ca, rb, cb, m, n](NodeT<S>& o) {
      if (a->requires_grad) a->ensure_grad();
      if (b->requires_grad) b->ensure_grad();
#pragma omp parallel for schedule(static)
      for (long i = 0; i < Bn; ++i) {
        typename TensorT<S>::CMapMat G(o.grad.ptr() + i * m * n, m, n);
        if (a->requires_grad) {
          typename TensorT<S>::MapMat GA(a->grad.ptr() + i * ra * ca, ra, ca);
          typename TensorT<S>::CMapMat B(b->val.ptr() + i * rb * cb, rb, cb);
          if (!ta && !tb) GA.noalias() += G * B.transpose();
          else if (!ta && tb) GA.noalias() += G * B;
          else if (ta && !tb) GA.noalias() += B * G.transpose();
          else GA.noalias() += B.transpose() * G.transpose();
        }
        if (b->requires_grad) {
          typename TensorT<S>::MapMat GB(b->grad.ptr() + i * rb * cb, rb, cb);
          typename TensorT<S>::CMapMat A(a->val.ptr() + i * ra * ca, ra, ca);
          if (!ta && !tb) GB.noalias() += A.transpose() * G;
          else if (ta && !tb) GB.noalias() += A * G;
          else if (!ta && tb) GB.noalias() += G.transpose() * A;
          else GB.noalias() += G.transpose() * A.transpose();
        }
      }
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise and broadcast arithmetic
// ---------------------------------------------------------------------------

template <class S>
VarT<S> add(const VarT<S>& a, const VarT<S>& b) {
  if (!a->val.same_shape(b->val)) throw ParamError("add: shape mismatch");
  auto out = make_var(TensorT<S>(a->val.shape()));
  out->val.vec() = a->val.vec() + b->val.vec();
  if (detail::track<S>({&a, &b})) {
    out->requires_grad = true;
    out->parents = {a, b};
    out->backward_op = [a, b](NodeT<S>& o) {
      detail::accum(a, o.grad);
      detail::accum(b, o.grad);
    };
  }
  return out;
}

template <class S>
VarT<S> mul(const VarT<S>& a, const VarT<S>& b) {
  if (!a->val.same_shape(b->val)) throw ParamError("mul: shape mismatch");
  auto out = make_var(TensorT<S>(a->val.shape()));
  out->val.vec() = a->val.vec().cwiseProduct(b->val.vec());
  if (detail::track<S>({&a, &b})) {
    out->requires_grad = true;
    out->parents = {a, b};
    out->backward_op = [a, b](NodeT<S>& o) {
      if (a->requires_grad) {
        a->ensure_grad();
        a->grad.vec() += o.grad.vec().cwiseProduct(b->val.vec());
      }
      if (b->requires_grad) {
        b->ensure_grad();
        b->grad.vec() += o.grad.vec().cwiseProduct(a->val.vec());
      }
    };
  }
  return out;
}

template <class S>
VarT<S> scale(const VarT<S>& a, S s) {
  auto out = make_var(TensorT<S>(a->val.shape()));
  out->val.vec() = a->val.vec() * s;
  if (detail::track<S>({&a})) {
    out->requires_grad = true;
    out->parents = {a};
    out->backward_op = [a, s](NodeT<S>& o) {
      if (!a->requires_grad) return;
      a->ensure_grad();
      a->grad.vec() += o.grad.vec() * s;
    };
  }
  return out;
}

// x [R,C] + v [C], broadcast over rows (bias add).
template <class S>
VarT<S> add_rowvec(const VarT<S>& x, const VarT<S>& v) {
  const long R = x->val.rows(), C = x->val.cols();
  if (v->val.numel() != C) throw ParamError("add_rowvec: width mismatch");
  auto out = make_var(TensorT<S>(x->val.shape()));
  out->val.mat() = x->val.mat().rowwise() + v->val.vec().transpose();
  if (detail::track<S>({&x, &v})) {
    out->requires_grad = true;
    out->parents = {x, v};
    out->backward_op = [x, v, R, C](NodeT<S>& o) {
      detail::accum(x, o.grad);
      if (v->requires_grad) {
        v->ensure_grad();
        v->grad.vec() += o.grad.mat(R, C).colwise().sum().transpose();
      }
    };
  }
  return out;
}

// x [B,T,D] + pos [T,D] tiled over B.
template <class S>
VarT<S> add_tiled(const VarT<S>& x, const VarT<S>& pos, long tile_rows) {
  const long R = x->val.rows(), C = x->val.cols();
  if (pos->val.rows() != tile_rows || pos->val.cols() != C || R % tile_rows != 0)
    throw ParamError("add_tiled: shape mismatch");
  const long B = R / tile_rows;
  auto out = make_var(TensorT<S>(x->val.shape()));
  for (long b = 0; b < B; ++b)
    out->val.mat().middleRows(b * tile_rows, tile_rows) =
        x->val.mat().middleRows(b * tile_rows, tile_rows) + pos->val.mat();
  if (detail::track<S>({&x, &pos})) {
    out->requires_grad = true;
    out->parents = {x, pos};
    out->backward_op = [x, pos, B, tile_rows, R, C](NodeT<S>& o) {
      detail::accum(x, o.grad);
      if (pos->requires_grad) {
        pos->ensure_grad();
        for (long b = 0; b < B; ++b)
          pos->grad.mat() += o.grad.mat(R, C).middleRows(b * tile_rows, tile_rows);
      }
    };
  }
  return out;
}

// x [B,m,n] + bias [m,n] (constant, e.g. causal mask), tiled over B.
template <class S>
VarT<S> add_const_tiled(const VarT<S>& x, const TensorT<S>& bias, long tile_rows) {
  const long R = x->val.rows(), C = x->val.cols();
  if (bias.rows() != tile_rows || bias.cols() != C || R % tile_rows != 0)
    throw ParamError("add_const_tiled: shape mismatch");
  auto out = make_var(TensorT<S>(x->val.shape()));
  const long B = R / tile_rows;
  for (long b = 0; b < B; ++b)
    out->val.mat().middleRows(b * tile_rows, tile_rows) =
        x->val.mat().middleRows(b * tile_rows, tile_rows) + bias.mat();
  if (detail::track<S>({&x})) {
    out->requires_grad = true;
    out->parents = {x};
    out->backward_op = [x](NodeT<S>& o) { detail::accum(x, o.grad); };
  }
  return out;
}

// ---------------------------------------------------------------------------
// Nonlinearities and normalization
// ---------------------------------------------------------------------------

template <class S>
VarT<S> gelu(const VarT<S>& x) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  auto out = make_var(TensorT<S>(x->val.shape()));
  const long n = x->val.numel();
  for (long i = 0; i < n; ++i) {
    const double v = x->val[i];
    out->val[i] = static_cast<S>(0.5 * v * (1.0 + std::tanh(kC * (v + kA * v * v * v))));
  }
  if (detail::track<S>({&x})) {
    out->requires_grad = true;
    out->parents = {x};
    out->backward_op = [x, n](NodeT<S>& o) {
      if (!x->requires_grad) return;
      x->ensure_grad();
      for (long i = 0; i < n; ++i) {
        const double v = x->val[i];
        const double t = std::tanh(kC * (v + kA * v * v * v));
        const double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * kC * (1.0 + 3.0 * kA * v * v);
        x->grad[i] += static_cast<S>(static_cast<double>(o.grad[i]) * d);
      }
    };
  }
  return out;
}

template <class S>
VarT<S> sigmoid(const VarT<S>& x) {
  auto out = make_var(TensorT<S>(x->val.shape()));
  const long n = x->val.numel();
  for (long i = 0; i < n; ++i)
    out->val[i] = static_cast<S>(1.0 / (1.0 + std::exp(-static_cast<double>(x->val[i]))));
  if (detail::track<S>({&x})) {
    out->requires_grad = true;
    out->parents = {x};
    out->backward_op = [x, n](NodeT<S>& o) {
      if (!x->requires_grad) return;
      x->ensure_grad();
      for (long i = 0; i < n; ++i) {
        const double y = o.val[i];
        x->grad[i] += static_cast<S>(static_cast<double>(o.grad[i]) * y * (1.0 - y));
      }
    };
  }
  return out;
}

// Row-wise layer norm over the last dimension with affine parameters.
template <class S>
VarT<S> layer_norm(const VarT<S>& x, const VarT<S>& gamma, const VarT<S>& beta,
                   double eps = 1e-6) {
  const long R = x->val.rows(), C = x->val.cols();
  if (gamma->val.numel() != C || beta->val.numel() != C)
    throw ParamError("layer_norm: affine size mismatch");
  auto out = make_var(TensorT<S>(x->val.shape()));
  auto xhat = std::make_shared<TensorT<S>>(std::vector<long>{R, C});
  auto inv_sigma = std::make_shared<TensorT<S>>(std::vector<long>{R});
  for (long r = 0; r < R; ++r) {
    const S* px = x->val.ptr() + r * C;
    double mean = 0, var = 0;
    for (long c = 0; c < C; ++c) mean += px[c];
    mean /= C;
    for (long c = 0; c < C; ++c) {
      const double d = px[c] - mean;
      var += d * d;
    }
    var /= C;
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_sigma)[r] = static_cast<S>(is);
    S* ph = xhat->ptr() + r * C;
    S* po = out->val.ptr() + r * C;
    for (long c = 0; c < C; ++c) {
      ph[c] = static_cast<S>((px[c] - mean) * is);
      po[c] = static_cast<S>(ph[c] * gamma->val[c] + beta->val[c]);
    }
  }
  if (detail::track<S>({&x, &gamma, &beta})) {
    out->requires_grad = true;
    out->parents = {x, gamma, beta};
    out->backward_op = [x, gamma, beta, xhat, inv_sigma, R, C](NodeT<S>& o) {
      if (gamma->requires_grad) gamma->ensure_grad();
      if (beta->requires_grad) beta->ensure_grad();
      if (x->requires_grad) x->ensure_grad();
      for (long r = 0; r < R; ++r) {
        const S* g = o.grad.ptr() + r * C;
        const S* h = xhat->ptr() + r * C;
        if (gamma->requires_grad)
          for (long c = 0; c < C; ++c) gamma->grad[c] += g[c] * h[c];
        if (beta->requires_grad)
          for (long c = 0; c < C; ++c) beta->grad[c] += g[c];
        if (x->requires_grad) {
          double mg = 0, mgh = 0;
          for (long c = 0; c < C; ++c) {
            const double gg = static_cast<double>(g[c]) * gamma->val[c];
            mg += gg;
            mgh += gg * h[c];
          }
          mg /= C;
          mgh /= C;
          S* gx = x->grad.ptr() + r * C;
          const double is = (*inv_sigma)[r];
          for (long c = 0; c < C; ++c) {
            const double gg = static_cast<double>(g[c]) * gamma->val[c];
            gx[c] += static_cast<S>((gg - mg - h[c] * mgh) * is);
          }
        }
      }
    };
  }
  return out;
}

// Column-wise batch norm over rows (training mode). Batch statistics are
// written to *batch_mean / *batch_var so the caller can maintain running
// estimates for evaluation.
template <class S>
VarT<S> batch_norm_train(const VarT<S>& x, const VarT<S>& gamma, const VarT<S>& beta,
                         TensorT<S>* batch_mean, TensorT<S>* batch_var, double eps = 1e-5) {
  const long R = x->val.rows(), C = x->val.cols();
  if (R < 1) throw ParamError("batch_norm: empty batch");
  auto out = make_var(TensorT<S>(x->val.shape()));
  auto xhat = std::make_shared<TensorT<S>>(std::vector<long>{R, C});
  auto inv_sigma = std::make_shared<TensorT<S>>(std::vector<long>{C});
  TensorT<S> mean({C}), var({C});
  const auto X = x->val.mat(R, C);
  for (long c = 0; c < C; ++c) {
    double m = X.col(c).template cast<double>().mean();
    double v = (X.col(c).template cast<double>().array() - m).square().mean();
    mean[c] = static_cast<S>(m);
    var[c] = static_cast<S>(v);
    (*inv_sigma)[c] = static_cast<S>(1.0 / std::sqrt(v + eps));
  }
  for (long r = 0; r < R; ++r)
    for (long c = 0; c < C; ++c) {
      const S h = (x->val[r * C + c] - mean[c]) * (*inv_sigma)[c];
      (*xhat)[r * C + c] = h;
      out->val[r * C + c] = h * gamma->val[c] + beta->val[c];
    }
  if (batch_mean) *batch_mean = mean;
  if (batch_var) *batch_var = var;
  if (detail::track<S>({&x, &gamma, &beta})) {
    out->requires_grad = true;
    out->parents = {x, gamma, beta};
    out->backward_op = [x, gamma, beta, xhat, inv_sigma, R, C](NodeT<S>& o) {
      if (gamma->requires_grad) gamma->ensure_grad();
      if (beta->requires_grad) beta->ensure_grad();
      if (x->requires_grad) x->ensure_grad();
      for (long c = 0; c < C; ++c) {
        double sg = 0, sgh = 0;
        for (long r = 0; r < R; ++r) {
          const double g = o.grad[r * C + c];
          sg += g;
          sgh += g * (*xhat)[r * C + c];
        }
        if (gamma->requires_grad) gamma->grad[c] += static_cast<S>(sgh);
        if (beta->requires_grad) beta->grad[c] += static_cast<S>(sg);
        if (x->requires_grad) {
          const double is = (*inv_sigma)[c];
          const double gm = gamma->val[c];
          for (long r = 0; r < R; ++r) {
            const double g = static_cast<double>(o.grad[r * C + c]) * gm;
            const double h = (*xhat)[r * C + c];
            x->grad[r * C + c] += static_cast<S>((g - sg * gm / R - h * sgh * gm / R) * is);
          }
        }
      }
    };
  }
  return out;
}

template <class S>
VarT<S> batch_norm_eval(const VarT<S>& x, const VarT<S>& gamma, const VarT<S>& beta,
                        const TensorT<S>& run_mean, const TensorT<S>& run_var,
                        double eps = 1e-5) {
  const long R = x->val.rows(), C = x->val.cols();
  auto out = make_var(TensorT<S>(x->val.shape()));
  TensorT<S> is({C});
  for (long c = 0; c < C; ++c) is[c] = static_cast<S>(1.0 / std::sqrt(run_var[c] + eps));
  for (long r = 0; r < R; ++r)
    for (long c = 0; c < C; ++c)
      out->val[r * C + c] =
          (x->val[r * C + c] - run_mean[c]) * is[c] * gamma->val[c] + beta->val[c];
  if (detail::track<S>({&x, &gamma, &beta})) {
    out->requires_grad = true;
    out->parents = {x, gamma, beta};
    auto isv = std::make_shared<TensorT<S>>(is);
    auto rm = std::make_shared<TensorT<S>>(run_mean);
    out->backward_op = [x, gamma, beta, isv, rm, R, C](NodeT<S>& o) {
      if (x->requires_grad) x->ensure_grad();
      if (gamma->requires_grad) gamma->ensure_grad();
      if (beta->requires_grad) beta->ensure_grad();
      for (long r = 0; r < R; ++r)
        for (long c = 0; c < C; ++c) {
          const S g = o.grad[r * C + c];
          const S h = (x->val[r * C + c] - (*rm)[c]) * (*isv)[c];
          if (x->requires_grad) x->grad[r * C + c] += g * (*isv)[c] * gamma->val[c];
          if (gamma->requires_grad) gamma->grad[c] += g * h;
          if (beta->requires_grad) beta->grad[c] += g;
        }
    };
  }
  return out;
}

template <class S>
VarT<S> softmax_rows(const VarT<S>& x) {
  const long R = x->val.rows(), C = x->val.cols();
  auto out = make_var(TensorT<S>(x->val.shape()));
  for (long r = 0; r < R; ++r) {
    const S* px = x->val.ptr() + r * C;
    S* po = out->val.ptr() + r * C;
    double mx = px[0];
    for (long c = 1; c < C; ++c) mx = std::max(mx, static_cast<double>(px[c]));
    double sum = 0;
    for (long c = 0; c < C; ++c) {
      const double e = std::exp(px[c] - mx);
      po[c] = static_cast<S>(e);
      sum += e;
    }
    for (long c = 0; c < C; ++c) po[c] = static_cast<S>(po[c] / sum);
  }
  if (detail::track<S>({&x})) {
    out->requires_grad = true;
    out->parents = {x};
    out->backward_op = [x, R, C](NodeT<S>& o) {
      if (!x->requires_grad) return;
      x->ensure_grad();
      for (long r = 0; r < R; ++r) {
        const S* y = o.val.ptr() + r * C;
        const S* g = o.grad.ptr() + r * C;
        double dot = 0;
        for (long c = 0; c < C; ++c) dot += static_cast<double>(y[c]) * g[c];
        S* gx = x->grad.ptr() + r * C;
        for (long c = 0; c < C; ++c)
          gx[c] += static_cast<S>(y[c] * (static_cast<double>(g[c]) - dot));
      }
    };
  }
  return out;
}

template <class S>
VarT<S> log_softmax_rows(const VarT<S>& x) {
  const long R = x->val.rows(), C = x->val.cols();
  auto out = make_var(TensorT<S>(x->val.shape()));
  for (long r = 0; r < R; ++r) {
    const S* px = x->val.ptr() + r * C;
    S* po = out->val.ptr() + r * C;
    double mx = px[0];
    for (long c = 1; c < C; ++c) mx = std::max(mx, static_cast<double>(px[c]));
    double sum = 0;
    for (long c = 0; c < C; ++c) sum += std::exp(px[c] - mx);
    const double lse = mx + std::log(sum);
    for (long c = 0; c < C; ++c) po[c] = static_cast<S>(px[c] - lse);
  }
  if (detail::track<S>({&x})) {
    out->requires_grad = true;
    out->parents = {x};
    out->backward_op = [x, R, C](NodeT<S>& o) {
      if (!x->requires_grad) return;
      x->ensure_grad();
      for (long r = 0; r < R; ++r) {
        const S* y = o.val.ptr() + r * C;
        const S* g = o.grad.ptr() + r * C;
        double gsum = 0;
        for (long c = 0; c < C; ++c) gsum += g[c];
        S* gx = x->grad.ptr() + r * C;
        for (long c = 0; c < C; ++c)
          gx[c] += static_cast<S>(g[c] - std::exp(static_cast<double>(y[c])) * gsum);
      }
    };
  }
  return out;
}

template <class S>
VarT<S> l2_normalize_rows(const VarT<S>& x, double eps = 1e-12) {
  const long R = x->val.rows(), C = x->val.cols();
  auto out = make_var(TensorT<S>(x->val.shape()));
  auto norms = std::make_shared<TensorT<S>>(std::vector<long>{R});
  for (long r = 0; r < R; ++r) {
    const double n = x->val.mat(R, C).row(r).template cast<double>().norm();
    const double d = std::max(n, eps);
    (*norms)[r] = static_cast<S>(d);
    out->val.mat(R, C).row(r) = x->val.mat(R, C).row(r) / static_cast<S>(d);
  }
  if (detail::track<S>({&x})) {
    out->requires_grad = true;
    out->parents = {x};
    out->backward_op = [x, norms, R, C, eps](NodeT<S>& o) {
      if (!x->requires_grad) return;
      x->ensure_grad();
      for (long r = 0; r < R; ++r) {
        const S* y = o.val.ptr() + r * C;
        const S* g = o.grad.ptr() + r * C;
        S* gx = x->grad.ptr() + r * C;
        const double n = (*norms)[r];
        const double raw_norm = x->val.mat(R, C).row(r).template cast<double>().norm();
        if (raw_norm <= eps) {
          for (long c = 0; c < C; ++c) gx[c] += static_cast<S>(g[c] / n);
        } else {
          double dot = 0;
          for (long c = 0; c < C; ++c) dot += static_cast<double>(y[c]) * g[c];
          for (long c = 0; c < C; ++c)
            gx[c] += static_cast<S>((static_cast<double>(g[c]) - y[c] * dot) / n);
        }
      }
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// Shape surgery
// ---------------------------------------------------------------------------

template <class S>
VarT<S> reshape(const VarT<S>& x, std::vector<long> shape) {
  auto out = make_var(x->val.reshaped(std::move(shape)));
  if (detail::track<S>({&x})) {
    out->requires_grad = true;
    out->parents = {x};
    out->backward_op = [x](NodeT<S>& o) {
      if (!x->requires_grad) return;
      x->ensure_grad();
      x->grad.vec() += o.grad.vec();
    };
  }
  return out;
}

template <class S>
VarT<S> select_rows(const VarT<S>& x, std::shared_ptr<IndexVec> idx) {
  const long C = x->val.cols(), R = x->val.rows();
  const long r = static_cast<long>(idx->size());
  auto out = make_var(TensorT<S>({r, C}));
  for (long t = 0; t < r; ++t) {
    const long src = (*idx)[t];
    if (src < 0 || src >= R) throw ParamError("select_rows: index out of range");
    std::copy_n(x->val.ptr() + src * C, C, out->val.ptr() + t * C);
  }
  if (detail::track<S>({&x})) {
    out->requires_grad = true;
    out->parents = {x};
    out->backward_op = [x, idx, C](NodeT<S>& o) {
      if (!x->requires_grad) return;
      x->ensure_grad();
      const long r = static_cast<long>(idx->size());
      for (long t = 0; t < r; ++t) {
        S* dst = x->grad.ptr() + (*idx)[t] * C;
        const S* g = o.grad.ptr() + t * C;
        for (long c = 0; c < C; ++c) dst[c] += g[c];
      }
    };
  }
  return out;
}

template <class S>
VarT<S> select_rows(const VarT<S>& x, IndexVec idx) {
  return select_rows(x, std::make_shared<IndexVec>(std::move(idx)));
}

template <class S>
VarT<S> concat_rows(const std::vector<VarT<S>>& xs) {
  if (xs.empty()) throw ParamError("concat_rows: empty input");
  const long C = xs[0]->val.cols();
  long R = 0;
  for (const auto& x : xs) {
    if (x->val.cols() != C) throw ParamError("concat_rows: width mismatch");
    R += x->val.rows();
  }
  auto out = make_var(TensorT<S>({R, C}));
  long off = 0;
  for (const auto& x : xs) {
    std::copy_n(x->val.ptr(), x->val.numel(), out->val.ptr() + off * C);
    off += x->val.rows();
  }
  bool need = false;
  if (grad_mode())
    for (const auto& x : xs) need = need || x->requires_grad;
  if (need) {
    out->requires_grad = true;
    out->parents = xs;
    out->backward_op = [xs, C](NodeT<S>& o) {
      long off = 0;
      for (const auto& x : xs) {
        const long n = x->val.numel();
        if (x->requires_grad) {
          x->ensure_grad();
          typename TensorT<S>::MapVec(x->grad.ptr(), n).array() +=
              typename TensorT<S>::CMapVec(o.grad.ptr() + off, n).array();
        }
        off += n;
      }
    };
  }
  return out;
}

template <class S>
VarT<S> concat_cols(const std::vector<VarT<S>>& xs) {
  if (xs.empty()) throw ParamError("concat_cols: empty input");
  const long R = xs[0]->val.rows();
  long C = 0;
  for (const auto& x : xs) {
    if (x->val.rows() != R) throw ParamError("concat_cols: row mismatch");
    C += x->val.cols();
  }
  auto out = make_var(TensorT<S>({R, C}));
  long off = 0;
  for (const auto& x : xs) {
    out->val.mat(R, C).middleCols(off, x->val.cols()) = x->val.mat();
    off += x->val.cols();
  }
  bool need = false;
  if (grad_mode())
    for (const auto& x : xs) need = need || x->requires_grad;
  if (need) {
    out->requires_grad = true;
    out->parents = xs;
    out->backward_op = [xs, R, C](NodeT<S>& o) {
      long off = 0;
      for (const auto& x : xs) {
        if (x->requires_grad) {
          x->ensure_grad();
          x->grad.mat() += o.grad.mat(R, C).middleCols(off, x->val.cols());
        }
        off += x->val.cols();
      }
    };
  }
  return out;
}

template <class S>
VarT<S> slice_cols(const VarT<S>& x, long c0, long len) {
  const long R = x->val.rows(), C = x->val.cols();
  if (c0 < 0 || c0 + len > C) throw ParamError("slice_cols: out of range");
  auto out = make_var(TensorT<S>({R, len}));
  out->val.mat(R, len) = x->val.mat(R, C).middleCols(c0, len);
  if (detail::track<S>({&x})) {
    out->requires_grad = true;
    out->parents = {x};
    out->backward_op = [x, c0, len, R, C](NodeT<S>& o) {
      if (!x->requires_grad) return;
      x->ensure_grad();
      x->grad.mat(R, C).middleCols(c0, len) += o.grad.mat(R, len);
    };
  }
  return out;
}

// [B,T,D] -> [B*H, T, D/H]
template <class S>
VarT<S> split_heads(const VarT<S>& x, long B, long T, long H) {
  const long D = x->val.cols();
  if (x->val.rows() != B * T || D % H != 0) throw ParamError("split_heads: shape mismatch");
  const long dh = D / H;
  auto out = make_var(TensorT<S>({B * H, T, dh}));
#pragma omp parallel for schedule(static)
  for (long b = 0; b < B; ++b)
    for (long h = 0; h < H; ++h)
      for (long t = 0; t < T; ++t)
        std::copy_n(x->val.ptr() + (b * T + t) * D + h * dh, dh,
                    out->val.ptr() + ((b * H + h) * T + t) * dh);
  if (detail::track<S>({&x})) {
    out->requires_grad = true;
    out->parents = {x};
    out->backward_op = [x, B, T, H, D, dh](NodeT<S>& o) {
      if (!x->requires_grad) return;
      x->ensure_grad();
      for (long b = 0; b < B; ++b)
        for (long h = 0; h < H; ++h)
          for (long t = 0; t < T; ++t) {
            const S* g = o.grad.ptr() + ((b * H + h) * T + t) * dh;
            S* dst = x->grad.ptr() + (b * T + t) * D + h * dh;
            for (long c = 0; c < dh; ++c) dst[c] += g[c];
          }
    };
  }
  return out;
}

// [B*H, T, dh] -> [B,T,D]
template <class S>
VarT<S> merge_heads(const VarT<S>& x, long B, long T, long H) {
  const long dh = x->val.cols();
  if (x->val.dim(0) != B * H || x->val.dim(1) != T) throw ParamError("merge_heads: shape mismatch");
  const long D = dh * H;
  auto out = make_var(TensorT<S>({B * T, D}));
#pragma omp parallel for schedule(static)
  for (long b = 0; b < B; ++b)
    for (long h = 0; h < H; ++h)
      for (long t = 0; t < T; ++t)
        std::copy_n(x->val.ptr() + ((b * H + h) * T + t) * dh, dh,
                    out->val.ptr() + (b * T + t) * D + h * dh);
  if (detail::track<S>({&x})) {
    out->requires_grad = true;
    out->parents = {x};
    out->backward_op = [x, B, T, H, D, dh](NodeT<S>& o) {
      if (!x->requires_grad) return;
      x->ensure_grad();
      for (long b = 0; b < B; ++b)
        for (long h = 0; h < H; ++h)
          for (long t = 0; t < T; ++t) {
            const S* g = o.grad.ptr() + (b * T + t) * D + h * dh;
            S* dst = x->grad.ptr() + ((b * H + h) * T + t) * dh;
            for (long c = 0; c < dh; ++c) dst[c] += g[c];
          }
    };
  }
  return out;
}

// Prepends one learned token row per batch element: [B,T,D] -> [B,T+1,D].
template <class S>
VarT<S> prepend_token(const VarT<S>& x, const VarT<S>& tok, long B, long T) {
  const long D = x->val.cols();
  if (x->val.rows() != B * T || tok->val.numel() != D)
    throw ParamError("prepend_token: shape mismatch");
  auto out = make_var(TensorT<S>({B * (T + 1), D}));
  for (long b = 0; b < B; ++b) {
    std::copy_n(tok->val.ptr(), D, out->val.ptr() + b * (T + 1) * D);
    std::copy_n(x->val.ptr() + b * T * D, T * D, out->val.ptr() + (b * (T + 1) + 1) * D);
  }
  out->val = out->val.reshaped({B, T + 1, D});
  if (detail::track<S>({&x, &tok})) {
    out->requires_grad = true;
    out->parents = {x, tok};
    out->backward_op = [x, tok, B, T, D](NodeT<S>& o) {
      if (tok->requires_grad) tok->ensure_grad();
      if (x->requires_grad) x->ensure_grad();
      for (long b = 0; b < B; ++b) {
        const S* g0 = o.grad.ptr() + b * (T + 1) * D;
        if (tok->requires_grad)
          for (long c = 0; c < D; ++c) tok->grad[c] += g0[c];
        if (x->requires_grad) {
          S* gx = x->grad.ptr() + b * T * D;
          const S* g = g0 + D;
          for (long i = 0; i < T * D; ++i) gx[i] += g[i];
        }
      }
    };
  }
  return out;
}

// Replaces masked token rows with a learned mask token (pre-positional).
template <class S>
VarT<S> mask_token_fill(const VarT<S>& x, std::shared_ptr<ByteTensor> mask, const VarT<S>& tok) {
  const long R = x->val.rows(), D = x->val.cols();
  if (mask->numel() != R || tok->val.numel() != D)
    throw ParamError("mask_token_fill: shape mismatch");
  auto out = make_var(TensorT<S>(x->val.shape()));
  for (long r = 0; r < R; ++r) {
    const S* src = (*mask)[r] ? tok->val.ptr() : x->val.ptr() + r * D;
    std::copy_n(src, D, out->val.ptr() + r * D);
  }
  if (detail::track<S>({&x, &tok})) {
    out->requires_grad = true;
    out->parents = {x, tok};
    out->backward_op = [x, tok, mask, R, D](NodeT<S>& o) {
      if (x->requires_grad) x->ensure_grad();
      if (tok->requires_grad) tok->ensure_grad();
      for (long r = 0; r < R; ++r) {
        const S* g = o.grad.ptr() + r * D;
        if ((*mask)[r]) {
          if (tok->requires_grad)
            for (long c = 0; c < D; ++c) tok->grad[c] += g[c];
        } else if (x->requires_grad) {
          S* gx = x->grad.ptr() + r * D;
          for (long c = 0; c < D; ++c) gx[c] += g[c];
        }
      }
    };
  }
  return out;
}

template <class S>
VarT<S> dropout(const VarT<S>& x, double p, Rng& rng) {
  if (p <= 0.0) return x;
  if (p >= 1.0) throw ParamError("dropout: p must be < 1");
  const long n = x->val.numel();
  auto keep = std::make_shared<ByteTensor>(x->val.shape());
  const S inv = static_cast<S>(1.0 / (1.0 - p));
  auto out = make_var(TensorT<S>(x->val.shape()));
  for (long i = 0; i < n; ++i) {
    const bool k = !rng.bernoulli(p);
    (*keep)[i] = k;
    out->val[i] = k ? x->val[i] * inv : S(0);
  }
  if (detail::track<S>({&x})) {
    out->requires_grad = true;
    out->parents = {x};
    out->backward_op = [x, keep, inv, n](NodeT<S>& o) {
      if (!x->requires_grad) return;
      x->ensure_grad();
      for (long i = 0; i < n; ++i)
        if ((*keep)[i]) x->grad[i] += o.grad[i] * inv;
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions and losses
// ---------------------------------------------------------------------------

template <class S>
VarT<S> sum_all(const VarT<S>& x) {
  auto out = make_var(TensorT<S>::scalar(static_cast<S>(x->val.vec().template cast<double>().sum())));
  if (detail::track<S>({&x})) {
    out->requires_grad = true;
    out->parents = {x};
    out->backward_op = [x](NodeT<S>& o) {
      if (!x->requires_grad) return;
      x->ensure_grad();
      x->grad.vec().array() += o.grad[0];
    };
  }
  return out;
}

template <class S>
VarT<S> mean_all(const VarT<S>& x) {
  const long n = x->val.numel();
  return scale(sum_all(x), static_cast<S>(1.0 / n));
}

// Negative log likelihood over rows of log-probabilities; targets < 0 are
// ignored. Mean over non-ignored rows.
template <class S>
VarT<S> nll_rows(const VarT<S>& logp, std::shared_ptr<IndexVec> targets) {
  const long R = logp->val.rows(), C = logp->val.cols();
  if (static_cast<long>(targets->size()) != R) throw ParamError("nll_rows: target size mismatch");
  long valid = 0;
  double loss = 0;
  for (long r = 0; r < R; ++r) {
    const long t = (*targets)[r];
    if (t < 0) continue;
    if (t >= C) throw ParamError("nll_rows: target out of range");
    loss -= logp->val[r * C + t];
    ++valid;
  }
  if (valid == 0) valid = 1;
  auto out = make_var(TensorT<S>::scalar(static_cast<S>(loss / valid)));
  if (detail::track<S>({&logp})) {
    out->requires_grad = true;
    out->parents = {logp};
    out->backward_op = [logp, targets, R, C, valid](NodeT<S>& o) {
      if (!logp->requires_grad) return;
      logp->ensure_grad();
      const S g = o.grad[0] / static_cast<S>(valid);
      for (long r = 0; r < R; ++r) {
        const long t = (*targets)[r];
        if (t >= 0) logp->grad[r * C + t] -= g;
      }
    };
  }
  return out;
}

// Weighted soft cross entropy: sum_r w_r * sum_k (-q_rk * logp_rk).
// q and w are constants (teacher side).
template <class S>
VarT<S> soft_ce_rows(const VarT<S>& logp, std::shared_ptr<TensorT<S>> q,
                     std::shared_ptr<TensorT<S>> w) {
  const long R = logp->val.rows(), C = logp->val.cols();
  if (q->rows() != R || q->cols() != C || w->numel() != R)
    throw ParamError("soft_ce_rows: shape mismatch");
  double loss = 0;
  for (long r = 0; r < R; ++r) {
    const S* pq = q->ptr() + r * C;
    const S* pl = logp->val.ptr() + r * C;
    double s = 0;
    for (long c = 0; c < C; ++c) s += static_cast<double>(pq[c]) * pl[c];
    loss -= (*w)[r] * s;
  }
  auto out = make_var(TensorT<S>::scalar(static_cast<S>(loss)));
  if (detail::track<S>({&logp})) {
    out->requires_grad = true;
    out->parents = {logp};
    out->backward_op = [logp, q, w, R, C](NodeT<S>& o) {
      if (!logp->requires_grad) return;
      logp->ensure_grad();
      const double g = o.grad[0];
      for (long r = 0; r < R; ++r) {
        const S* pq = q->ptr() + r * C;
        S* gl = logp->grad.ptr() + r * C;
        const double wr = (*w)[r];
        for (long c = 0; c < C; ++c) gl[c] -= static_cast<S>(g * wr * pq[c]);
      }
    };
  }
  return out;
}

// Per-row masked binary cross entropy from logits:
//   (1/R) * sum_r [ (1/sum_j n_rj) * sum_j n_rj * bce(z_rj, y_rj) ]
// Rows with all n_rj = 0 contribute 0.
template <class S>
VarT<S> masked_bce_logits(const VarT<S>& z, std::shared_ptr<TensorT<S>> y,
                          std::shared_ptr<TensorT<S>> n) {
  const long R = z->val.rows(), C = z->val.cols();
  if (y->rows() != R || y->cols() != C || n->rows() != R || n->cols() != C)
    throw ParamError("masked_bce_logits: shape mismatch");
  double loss = 0;
  std::vector<double> row_scale(R, 0.0);
  for (long r = 0; r < R; ++r) {
    double cnt = 0;
    for (long c = 0; c < C; ++c) cnt += (*n)[r * C + c];
    if (cnt <= 0) continue;
    row_scale[r] = 1.0 / cnt;
    double s = 0;
    for (long c = 0; c < C; ++c) {
      if ((*n)[r * C + c] == S(0)) continue;
      const double zv = z->val[r * C + c];
      const double yv = (*y)[r * C + c];
      s += std::max(zv, 0.0) - zv * yv + std::log1p(std::exp(-std::abs(zv)));
    }
    loss += s / cnt;
  }
  auto out = make_var(TensorT<S>::scalar(static_cast<S>(loss / R)));
  if (detail::track<S>({&z})) {
    out->requires_grad = true;
    out->parents = {z};
    auto rs = std::make_shared<std::vector<double>>(std::move(row_scale));
    out->backward_op = [z, y, n, rs, R, C](NodeT<S>& o) {
      if (!z->requires_grad) return;
      z->ensure_grad();
      const double g = static_cast<double>(o.grad[0]) / R;
      for (long r = 0; r < R; ++r) {
        if ((*rs)[r] == 0.0) continue;
        for (long c = 0; c < C; ++c) {
          if ((*n)[r * C + c] == S(0)) continue;
          const double zv = z->val[r * C + c];
          const double sig = 1.0 / (1.0 + std::exp(-zv));
          z->grad[r * C + c] += static_cast<S>(g * (*rs)[r] * (sig - (*y)[r * C + c]));
        }
      }
    };
  }
  return out;
}

// KoLeo spreading regularizer on already-normalized rows:
//   -(1/B) * sum_i log(d_i + eps), d_i = distance to nearest other row.
template <class S>
VarT<S> koleo_core(const VarT<S>& x, double eps = 1e-8) {
  const long B = x->val.rows(), D = x->val.cols();
  if (B < 2) throw ParamError("koleo: need at least 2 rows");
  auto nn_idx = std::make_shared<IndexVec>(B);
  auto nn_dist = std::make_shared<std::vector<double>>(B);
  const auto X = x->val.mat(B, D);
  double loss = 0;
  for (long i = 0; i < B; ++i) {
    double best = std::numeric_limits<double>::infinity();
    long bj = -1;
    for (long j = 0; j < B; ++j) {
      if (j == i) continue;
      const double d = (X.row(i) - X.row(j)).template cast<double>().norm();
      if (d < best) {
        best = d;
        bj = j;
      }
    }
    (*nn_idx)[i] = bj;
    (*nn_dist)[i] = best;
    loss -= std::log(best + eps);
  }
  auto out = make_var(TensorT<S>::scalar(static_cast<S>(loss / B)));
  if (detail::track<S>({&x})) {
    out->requires_grad = true;
    out->parents = {x};
    out->backward_op = [x, nn_idx, nn_dist, B, D, eps](NodeT<S>& o) {
      if (!x->requires_grad) return;
      x->ensure_grad();
      const double g = static_cast<double>(o.grad[0]) / B;
      for (long i = 0; i < B; ++i) {
        const long j = (*nn_idx)[i];
        const double d = (*nn_dist)[i];
        if (d <= 0) continue;  // duplicate rows: subgradient 0
        const double coef = -g / ((d + eps) * d);
        for (long c = 0; c < D; ++c) {
          const double u = static_cast<double>(x->val[i * D + c]) - x->val[j * D + c];
          x->grad[i * D + c] += static_cast<S>(coef * u);
          x->grad[j * D + c] -= static_cast<S>(coef * u);
        }
      }
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// Grid operations (channel-last [B,h,w,C] layout)
// ---------------------------------------------------------------------------

template <class S>
VarT<S> bilinear_upsample(const VarT<S>& x, long B, long h, long w, long H, long W) {
  const long C = x->val.cols();
  if (x->val.rows() != B * h * w) throw ParamError("bilinear_upsample: shape mismatch");
  struct Tap {
    long i0, i1, j0, j1;
    double wi, wj;
  };
  auto taps = std::make_shared<std::vector<Tap>>(H * W);
  for (long oi = 0; oi < H; ++oi)
    for (long oj = 0; oj < W; ++oj) {
      const double si = std::clamp((oi + 0.5) * h / H - 0.5, 0.0, h - 1.0);
      const double sj = std::clamp((oj + 0.5) * w / W - 0.5, 0.0, w - 1.0);
      Tap t;
      t.i0 = static_cast<long>(std::floor(si));
      t.j0 = static_cast<long>(std::floor(sj));
      t.i1 = std::min(t.i0 + 1, h - 1);
      t.j1 = std::min(t.j0 + 1, w - 1);
      t.wi = si - t.i0;
      t.wj = sj - t.j0;
      (*taps)[oi * W + oj] = t;
    }
  auto out = make_var(TensorT<S>({B, H, W, C}));
#pragma omp parallel for schedule(static)
  for (long b = 0; b < B; ++b)
    for (long p = 0; p < H * W; ++p) {
      const Tap& t = (*taps)[p];
      const S* p00 = x->val.ptr() + ((b * h + t.i0) * w + t.j0) * C;
      const S* p01 = x->val.ptr() + ((b * h + t.i0) * w + t.j1) * C;
      const S* p10 = x->val.ptr() + ((b * h + t.i1) * w + t.j0) * C;
      const S* p11 = x->val.ptr() + ((b * h + t.i1) * w + t.j1) * C;
      S* po = out->val.ptr() + (b * H * W + p) * C;
      for (long c = 0; c < C; ++c) {
        const double top = p00[c] * (1 - t.wj) + p01[c] * t.wj;
        const double bot = p10[c] * (1 - t.wj) + p11[c] * t.wj;
        po[c] = static_cast<S>(top * (1 - t.wi) + bot * t.wi);
      }
    }
  if (detail::track<S>({&x})) {
    out->requires_grad = true;
    out->parents = {x};
    out->backward_op = [x, taps, B, h, w, H, W, C](NodeT<S>& o) {
      if (!x->requires_grad) return;
      x->ensure_grad();
      for (long b = 0; b < B; ++b)
        for (long p = 0; p < H * W; ++p) {
          const Tap& t = (*taps)[p];
          const S* g = o.grad.ptr() + (b * H * W + p) * C;
          S* g00 = x->grad.ptr() + ((b * h + t.i0) * w + t.j0) * C;
          S* g01 = x->grad.ptr() + ((b * h + t.i0) * w + t.j1) * C;
          S* g10 = x->grad.ptr() + ((b * h + t.i1) * w + t.j0) * C;
          S* g11 = x->grad.ptr() + ((b * h + t.i1) * w + t.j1) * C;
          for (long c = 0; c < C; ++c) {
            const double gv = g[c];
            g00[c] += static_cast<S>(gv * (1 - t.wi) * (1 - t.wj));
            g01[c] += static_cast<S>(gv * (1 - t.wi) * t.wj);
            g10[c] += static_cast<S>(gv * t.wi * (1 - t.wj));
            g11[c] += static_cast<S>(gv * t.wi * t.wj);
          }
        }
    };
  }
  return out;
}

template <class S>
VarT<S> adaptive_avg_pool(const VarT<S>& x, long B, long h, long w, long s) {
  const long C = x->val.cols();
  if (x->val.rows() != B * h * w) throw ParamError("adaptive_avg_pool: shape mismatch");
  auto out = make_var(TensorT<S>({B, s, s, C}));
  auto bin = [](long i, long n, long s) {
    return std::pair<long, long>{(i * n) / s, ((i + 1) * n + s - 1) / s};
  };
  for (long b = 0; b < B; ++b)
    for (long oi = 0; oi < s; ++oi)
      for (long oj = 0; oj < s; ++oj) {
        auto [i0, i1] = bin(oi, h, s);
        auto [j0, j1] = bin(oj, w, s);
        const double inv = 1.0 / ((i1 - i0) * (j1 - j0));
        S* po = out->val.ptr() + ((b * s + oi) * s + oj) * C;
        for (long c = 0; c < C; ++c) po[c] = S(0);
        for (long i = i0; i < i1; ++i)
          for (long j = j0; j < j1; ++j) {
            const S* px = x->val.ptr() + ((b * h + i) * w + j) * C;
            for (long c = 0; c < C; ++c) po[c] += static_cast<S>(px[c] * inv);
          }
      }
  if (detail::track<S>({&x})) {
    out->requires_grad = true;
    out->parents = {x};
    out->backward_op = [x, B, h, w, s, C, bin](NodeT<S>& o) {
      if (!x->requires_grad) return;
      x->ensure_grad();
      for (long b = 0; b < B; ++b)
        for (long oi = 0; oi < s; ++oi)
          for (long oj = 0; oj < s; ++oj) {
            auto [i0, i1] = bin(oi, h, s);
            auto [j0, j1] = bin(oj, w, s);
            const double inv = 1.0 / ((i1 - i0) * (j1 - j0));
            const S* g = o.grad.ptr() + ((b * s + oi) * s + oj) * C;
            for (long i = i0; i < i1; ++i)
              for (long j = j0; j < j1; ++j) {
                S* gx = x->grad.ptr() + ((b * h + i) * w + j) * C;
                for (long c = 0; c < C; ++c) gx[c] += static_cast<S>(g[c] * inv);
              }
          }
    };
  }
  return out;
}

// Convenience: x @ W^T + b with W stored [out,in].
template <class S>
VarT<S> linear(const VarT<S>& x, const VarT<S>& W, const VarT<S>& b) {
  return add_rowvec(matmul(x, W, false, true), b);
}

template <class S>
VarT<S> linear_nobias(const VarT<S>& x, const VarT<S>& W) {
  return matmul(x, W, false, true);
}

}  // namespace hpl::ag
