// Numerics: attention primitive, MLP, named parameter store, AdamW, and
// finite-difference gradient checking.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "baton/common.hpp"
#include "baton/rng.hpp"
#include "baton/tensor.hpp"

namespace baton {

template <class Real>
inline Real gelu_val(Real x) {
  return static_cast<Real>(0.5 * static_cast<double>(x) *
                           (1.0 + std::erf(static_cast<double>(x) * 0.7071067811865475244)));
}

template <class Real>
inline Real gelu_grad(Real x) {
  const double xd = static_cast<double>(x);
  const double phi = std::exp(-0.5 * xd * xd) * 0.3989422804014326779;  // N(0,1) pdf
  const double Phi = 0.5 * (1.0 + std::erf(xd * 0.7071067811865475244));
  return static_cast<Real>(Phi + xd * phi);
}

// ---------------------------------------------------------------------------
// Attention primitive: softmax(Q Kᵀ / sqrt(d_h) + mask) V.
//
// mask[i][k] == true means query i may attend to key k. Per-row accumulation
// order is canonicalized (sorted by weight, then value row) so that logically
// identical key/value multisets reduce bit-identically, e.g. under key
// permutation.
// ---------------------------------------------------------------------------

template <class Real>
Tensor<Real> attention(const Tensor<Real>& q, const Tensor<Real>& k,
                       const Tensor<Real>& v,
                       const std::vector<std::uint8_t>* mask = nullptr) {
  const std::int64_t n_q = q.rows(), d_h = q.cols();
  const std::int64_t n_k = k.rows(), d_v = v.cols();
  if (k.cols() != d_h) throw ShapeError("attention: q/k width mismatch");
  if (v.rows() != n_k) throw ShapeError("attention: k/v row mismatch");
  if (mask && static_cast<std::int64_t>(mask->size()) != n_q * n_k)
    throw ShapeError("attention: mask size mismatch");

  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d_h));
  Tensor<Real> out(Shape{n_q, d_v});
  std::vector<double> logits(static_cast<std::size_t>(n_k));
  std::vector<std::int64_t> order(static_cast<std::size_t>(n_k));

  for (std::int64_t i = 0; i < n_q; ++i) {
    std::int64_t n_alive = 0;
    double max_logit = -std::numeric_limits<double>::infinity();
    for (std::int64_t j = 0; j < n_k; ++j) {
      if (mask && !(*mask)[static_cast<std::size_t>(i * n_k + j)]) continue;
      double s = 0;
      for (std::int64_t c = 0; c < d_h; ++c)
        s += static_cast<double>(q.at2(i, c)) * static_cast<double>(k.at2(j, c));
      s *= inv_sqrt_d;
      logits[static_cast<std::size_t>(j)] = s;
      order[static_cast<std::size_t>(n_alive++)] = j;
      max_logit = std::max(max_logit, s);
    }
    if (n_alive == 0)
      throw NumericError("attention: fully masked query row " + std::to_string(i));

    for (std::int64_t a = 0; a < n_alive; ++a) {
      const auto j = order[static_cast<std::size_t>(a)];
      logits[static_cast<std::size_t>(j)] =
          std::exp(logits[static_cast<std::size_t>(j)] - max_logit);
    }
    std::sort(order.begin(), order.begin() + n_alive,
              [&](std::int64_t a, std::int64_t b) {
                const double wa = logits[static_cast<std::size_t>(a)];
                const double wb = logits[static_cast<std::size_t>(b)];
                if (wa != wb) return wa < wb;
                for (std::int64_t c = 0; c < d_v; ++c) {
                  if (v.at2(a, c) != v.at2(b, c)) return v.at2(a, c) < v.at2(b, c);
                }
                return false;
              });
    double denom = 0;
    for (std::int64_t a = 0; a < n_alive; ++a)
      denom += logits[static_cast<std::size_t>(order[static_cast<std::size_t>(a)])];
    for (std::int64_t c = 0; c < d_v; ++c) {
      double acc = 0;
      for (std::int64_t a = 0; a < n_alive; ++a) {
        const auto j = order[static_cast<std::size_t>(a)];
        acc += logits[static_cast<std::size_t>(j)] *
               static_cast<double>(v.at2(j, c));
      }
      out.at2(i, c) = static_cast<Real>(acc / denom);
    }
  }
  out.require_finite("attention");
  return out;
}

// ---------------------------------------------------------------------------
// MLP: affine layers with an activation between them, none after the last.
// ---------------------------------------------------------------------------

enum class Activation { gelu, identity };

template <class Real>
struct Mlp {
  struct Layer {
    Tensor<Real> w;  // [in, out]
    Tensor<Real> b;  // [1, out]
  };
  std::vector<Layer> layers;
  Activation act = Activation::gelu;

  void validate() const {
    for (std::size_t i = 0; i + 1 < layers.size(); ++i)
      if (layers[i].w.dim(1) != layers[i + 1].w.dim(0))
        throw ShapeError("mlp: layer dims do not compose");
    for (const auto& l : layers)
      if (l.b.rows() != 1 || l.b.cols() != l.w.dim(1))
        throw ShapeError("mlp: bias shape");
  }
};

template <class Real>
Tensor<Real> mlp_apply(const Mlp<Real>& m, const Tensor<Real>& x) {
  m.validate();
  if (m.layers.empty()) throw ShapeError("mlp_apply: no layers");
  if (x.cols() != m.layers.front().w.dim(0))
    throw ShapeError("mlp_apply: input width " + std::to_string(x.cols()) +
                     " != first layer in " + std::to_string(m.layers.front().w.dim(0)));
  Tensor<Real> h = x;
  for (std::size_t li = 0; li < m.layers.size(); ++li) {
    Tensor<Real> y = matmul(h, m.layers[li].w);
    for (std::int64_t r = 0; r < y.rows(); ++r)
      for (std::int64_t c = 0; c < y.cols(); ++c)
        y.at2(r, c) += m.layers[li].b.at2(0, c);
    if (li + 1 < m.layers.size() && m.act == Activation::gelu)
      for (std::int64_t i = 0; i < y.numel(); ++i) y[i] = gelu_val(y[i]);
    h = std::move(y);
  }
  h.require_finite("mlp_apply");
  return h;
}

// ---------------------------------------------------------------------------
// Named parameter store (deterministic order) and AdamW.
// ---------------------------------------------------------------------------

template <class Real>
class ParamStore {
 public:
  void add(const std::string& name, Tensor<Real> t) {
    if (index_.count(name)) throw ShapeError("duplicate parameter: " + name);
    index_[name] = names_.size();
    names_.push_back(name);
    values_.push_back(std::move(t));
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  Tensor<Real>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ShapeError("unknown parameter: " + name);
    return values_[it->second];
  }
  const Tensor<Real>& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ShapeError("unknown parameter: " + name);
    return values_[it->second];
  }

  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  Tensor<Real>& value(std::size_t i) { return values_[i]; }
  const Tensor<Real>& value(std::size_t i) const { return values_[i]; }

  std::int64_t total_elems() const {
    std::int64_t n = 0;
    for (const auto& v : values_) n += v.numel();
    return n;
  }

  std::uint64_t content_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (std::size_t i = 0; i < values_.size(); ++i) {
      h = fnv1a(names_[i], h);
      h = fnv1a(values_[i].data(), sizeof(Real) * static_cast<std::size_t>(values_[i].numel()), h);
    }
    return h;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor<Real>> values_;
  std::unordered_map<std::string, std::size_t> index_;
};

template <class Real>
struct AdamW {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;

  std::int64_t step_count = 0;
  std::vector<Tensor<Real>> m, v;

  void init(const ParamStore<Real>& params) {
    step_count = 0;
    m.clear();
    v.clear();
    for (std::size_t i = 0; i < params.size(); ++i) {
      m.push_back(Tensor<Real>(params.value(i).shape()));
      v.push_back(Tensor<Real>(params.value(i).shape()));
    }
  }

  // grads[i] aligned with params order; decoupled weight decay.
  void step(ParamStore<Real>& params, const std::vector<Tensor<Real>>& grads) {
    if (grads.size() != params.size() || m.size() != params.size())
      throw ShapeError("adamw_step: state/grads misaligned");
    ++step_count;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor<Real>& p = params.value(i);
      const Tensor<Real>& g = grads[i];
      if (!p.same_shape(g)) throw ShapeError("adamw_step: grad shape mismatch");
      if (!g.all_finite())
        throw NumericError("adamw_step: non-finite gradient in " + params.names()[i]);
      for (std::int64_t j = 0; j < p.numel(); ++j) {
        const double gj = static_cast<double>(g[j]);
        const double mj = beta1 * static_cast<double>(m[i][j]) + (1.0 - beta1) * gj;
        const double vj = beta2 * static_cast<double>(v[i][j]) + (1.0 - beta2) * gj * gj;
        m[i][j] = static_cast<Real>(mj);
        v[i][j] = static_cast<Real>(vj);
        const double mhat = mj / bc1;
        const double vhat = vj / bc2;
        const double pj = static_cast<double>(p[j]);
        p[j] = static_cast<Real>(pj - lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * pj));
      }
    }
  }
};

// ---------------------------------------------------------------------------
// Gradient checking against central differences, Richardson-refined:
// D(h) and D(h/2) combine to (4 D(h/2) - D(h)) / 3, cancelling the h^2
// truncation term. The relative-error denominator is floored at the finite-
// difference measurement limit (scales with the loss magnitude), so
// gradients smaller than what central differences can resolve are compared
// absolutely at that floor. 64-bit only.
// ---------------------------------------------------------------------------

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  std::int64_t worst_index = -1;
  double analytic = 0.0, numeric = 0.0;
};

inline GradCheckReport grad_check(
    ParamStore<double>& params,
    const std::function<double()>& loss_value,
    const std::vector<Tensor<double>>& analytic, double eps) {
  if (analytic.size() != params.size())
    throw ShapeError("grad_check: analytic grads misaligned");
  const double floor = std::max(1e-6, std::abs(loss_value()) * 3e-8);
  GradCheckReport rep;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<double>& p = params.value(i);
    for (std::int64_t j = 0; j < p.numel(); ++j) {
      const double orig = p[j];
      const double h = eps * std::max(1.0, std::abs(orig));
      auto central = [&](double step) {
        p[j] = orig + step;
        const double fp = loss_value();
        p[j] = orig - step;
        const double fm = loss_value();
        p[j] = orig;
        return (fp - fm) / (2.0 * step);
      };
      const double num = (4.0 * central(0.5 * h) - central(h)) / 3.0;
      const double ana = analytic[i][j];
      const double denom = std::max({std::abs(num), std::abs(ana), floor});
      const double rel = std::abs(num - ana) / denom;
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst_param = params.names()[i];
        rep.worst_index = j;
        rep.analytic = ana;
        rep.numeric = num;
      }
    }
  }
  return rep;
}

}  // namespace baton
