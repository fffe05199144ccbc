// Reverse-mode accumulation over a closed op set. A Tape owns the forward
// values and gradients of one computation; models build their forward pass
// by appending nodes and read gradients back after backward().
//
// Correctness is defined by grad_check (central differences), not by the
// mechanism; every op here is covered by the gradient suite.
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "baton/common.hpp"
#include "baton/nn.hpp"
#include "baton/tensor.hpp"

namespace baton {

template <class Real>
class Tape {
 public:
  using Id = std::int32_t;

  Id leaf(Tensor<Real> value, bool requires_grad) {
    return push(std::move(value), requires_grad, nullptr);
  }

  const Tensor<Real>& val(Id id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  const Tensor<Real>& grad(Id id) const { return nodes_[static_cast<std::size_t>(id)].grad; }
  bool requires_grad(Id id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  Id add(Id a, Id b) {
    check_same(a, b, "add");
    Tensor<Real> y = val(a) + val(b);
    return push(std::move(y), needs(a) || needs(b), [this, a, b](const Tensor<Real>& g) {
      accumulate(a, g, Real(1));
      accumulate(b, g, Real(1));
    });
  }

  Id sub(Id a, Id b) {
    check_same(a, b, "sub");
    Tensor<Real> y = val(a) - val(b);
    return push(std::move(y), needs(a) || needs(b), [this, a, b](const Tensor<Real>& g) {
      accumulate(a, g, Real(1));
      accumulate(b, g, Real(-1));
    });
  }

  Id scale(Id a, Real s) {
    Tensor<Real> y = val(a) * s;
    return push(std::move(y), needs(a), [this, a, s](const Tensor<Real>& g) {
      accumulate(a, g, s);
    });
  }

  // C = A(n,k) B(k,m)
  Id matmul(Id a, Id b) {
    Tensor<Real> y = baton::matmul(val(a), val(b));
    return push(std::move(y), needs(a) || needs(b), [this, a, b](const Tensor<Real>& g) {
      const Tensor<Real>& A = val(a);
      const Tensor<Real>& B = val(b);
      if (needs(a)) {  // gA += g Bᵀ
        Tensor<Real>& ga = grad_mut(a);
        const std::int64_t n = A.rows(), k = A.cols(), m = B.cols();
        for (std::int64_t i = 0; i < n; ++i)
          for (std::int64_t j = 0; j < m; ++j) {
            const Real gij = g.at2(i, j);
            if (gij == Real(0)) continue;
            for (std::int64_t p = 0; p < k; ++p) ga.at2(i, p) += gij * B.at2(p, j);
          }
      }
      if (needs(b)) {  // gB += Aᵀ g
        Tensor<Real>& gb = grad_mut(b);
        const std::int64_t n = A.rows(), k = A.cols(), m = B.cols();
        for (std::int64_t i = 0; i < n; ++i)
          for (std::int64_t p = 0; p < k; ++p) {
            const Real aip = A.at2(i, p);
            if (aip == Real(0)) continue;
            for (std::int64_t j = 0; j < m; ++j) gb.at2(p, j) += aip * g.at2(i, j);
          }
      }
    });
  }

  // C = A(n,k) B(m,k)ᵀ
  Id matmul_nt(Id a, Id b) {
    const Tensor<Real>& A = val(a);
    const Tensor<Real>& B = val(b);
    const std::int64_t n = A.rows(), k = A.cols(), m = B.rows();
    if (B.cols() != k) throw ShapeError("matmul_nt: inner dims");
    Tensor<Real> y(Shape{n, m});
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < m; ++j) {
        Real s = 0;
        for (std::int64_t p = 0; p < k; ++p) s += A.at2(i, p) * B.at2(j, p);
        y.at2(i, j) = s;
      }
    return push(std::move(y), needs(a) || needs(b), [this, a, b](const Tensor<Real>& g) {
      const Tensor<Real>& A = val(a);
      const Tensor<Real>& B = val(b);
      const std::int64_t n = A.rows(), k = A.cols(), m = B.rows();
      if (needs(a)) {  // gA += g B
        Tensor<Real>& ga = grad_mut(a);
        for (std::int64_t i = 0; i < n; ++i)
          for (std::int64_t j = 0; j < m; ++j) {
            const Real gij = g.at2(i, j);
            if (gij == Real(0)) continue;
            for (std::int64_t p = 0; p < k; ++p) ga.at2(i, p) += gij * B.at2(j, p);
          }
      }
      if (needs(b)) {  // gB += gᵀ A
        Tensor<Real>& gb = grad_mut(b);
        for (std::int64_t i = 0; i < n; ++i)
          for (std::int64_t j = 0; j < m; ++j) {
            const Real gij = g.at2(i, j);
            if (gij == Real(0)) continue;
            for (std::int64_t p = 0; p < k; ++p) gb.at2(j, p) += gij * A.at2(i, p);
          }
      }
    });
  }

  // y = a + bias (bias is 1 x m, broadcast over rows)
  Id add_row(Id a, Id bias) {
    const Tensor<Real>& A = val(a);
    const Tensor<Real>& B = val(bias);
    if (B.rows() != 1 || B.cols() != A.cols()) throw ShapeError("add_row: bias shape");
    Tensor<Real> y = A;
    for (std::int64_t r = 0; r < y.rows(); ++r)
      for (std::int64_t c = 0; c < y.cols(); ++c) y.at2(r, c) += B.at2(0, c);
    return push(std::move(y), needs(a) || needs(bias), [this, a, bias](const Tensor<Real>& g) {
      accumulate(a, g, Real(1));
      if (needs(bias)) {
        Tensor<Real>& gb = grad_mut(bias);
        for (std::int64_t r = 0; r < g.rows(); ++r)
          for (std::int64_t c = 0; c < g.cols(); ++c) gb.at2(0, c) += g.at2(r, c);
      }
    });
  }

  Id gelu(Id a) {
    Tensor<Real> y = val(a);
    for (std::int64_t i = 0; i < y.numel(); ++i) y[i] = gelu_val(y[i]);
    return push(std::move(y), needs(a), [this, a](const Tensor<Real>& g) {
      if (!needs(a)) return;
      Tensor<Real>& ga = grad_mut(a);
      const Tensor<Real>& x = val(a);
      for (std::int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * gelu_grad(x[i]);
    });
  }

  // Row softmax; keep[i*n_k+j]==0 excludes key j for row i (grad zero there).
  Id softmax_rows(Id a, const std::vector<std::uint8_t>* keep = nullptr) {
    const Tensor<Real>& A = val(a);
    const std::int64_t n = A.rows(), m = A.cols();
    if (keep && static_cast<std::int64_t>(keep->size()) != n * m)
      throw ShapeError("softmax_rows: mask size");
    Tensor<Real> y(A.shape());
    for (std::int64_t i = 0; i < n; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      bool alive = false;
      for (std::int64_t j = 0; j < m; ++j) {
        if (keep && !(*keep)[static_cast<std::size_t>(i * m + j)]) continue;
        mx = std::max(mx, static_cast<double>(A.at2(i, j)));
        alive = true;
      }
      if (!alive) throw NumericError("softmax_rows: fully masked row");
      double denom = 0;
      for (std::int64_t j = 0; j < m; ++j) {
        if (keep && !(*keep)[static_cast<std::size_t>(i * m + j)]) {
          y.at2(i, j) = Real(0);
          continue;
        }
        const double e = std::exp(static_cast<double>(A.at2(i, j)) - mx);
        y.at2(i, j) = static_cast<Real>(e);
        denom += e;
      }
      for (std::int64_t j = 0; j < m; ++j)
        y.at2(i, j) = static_cast<Real>(static_cast<double>(y.at2(i, j)) / denom);
    }
    return push(std::move(y), needs(a), [this, a](const Tensor<Real>& g, Id self) {
      if (!needs(a)) return;
      Tensor<Real>& ga = grad_mut(a);
      const Tensor<Real>& y = val(self);
      const std::int64_t n = y.rows(), m = y.cols();
      for (std::int64_t i = 0; i < n; ++i) {
        double dotgy = 0;
        for (std::int64_t j = 0; j < m; ++j)
          dotgy += static_cast<double>(g.at2(i, j)) * static_cast<double>(y.at2(i, j));
        for (std::int64_t j = 0; j < m; ++j)
          ga.at2(i, j) += static_cast<Real>(
              static_cast<double>(y.at2(i, j)) *
              (static_cast<double>(g.at2(i, j)) - dotgy));
      }
    });
  }

  // y = a .* cos + rotate_half(a) .* sin, with constant per-row tables.
  // rotate_half maps each adjacent pair (u, v) to (-v, u).
  Id rope_rows(Id a, const Tensor<Real>& cos_tab, const Tensor<Real>& sin_tab) {
    const Tensor<Real>& A = val(a);
    if (!A.same_shape(cos_tab) || !A.same_shape(sin_tab))
      throw ShapeError("rope_rows: table shape mismatch");
    if (A.cols() % 2 != 0) throw ShapeError("rope_rows: odd feature dim");
    Tensor<Real> y(A.shape());
    const std::int64_t n = A.rows(), m = A.cols();
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < m; j += 2) {
        const Real u = A.at2(i, j), v = A.at2(i, j + 1);
        y.at2(i, j) = u * cos_tab.at2(i, j) - v * sin_tab.at2(i, j);
        y.at2(i, j + 1) = v * cos_tab.at2(i, j + 1) + u * sin_tab.at2(i, j + 1);
      }
    // Backward is rotation by the negated angle applied to the gradient.
    return push(std::move(y), needs(a),
                [this, a, cos_tab, sin_tab](const Tensor<Real>& g) {
                  if (!needs(a)) return;
                  Tensor<Real>& ga = grad_mut(a);
                  const std::int64_t n = g.rows(), m = g.cols();
                  for (std::int64_t i = 0; i < n; ++i)
                    for (std::int64_t j = 0; j < m; j += 2) {
                      const Real gu = g.at2(i, j), gv = g.at2(i, j + 1);
                      ga.at2(i, j) += gu * cos_tab.at2(i, j) + gv * sin_tab.at2(i, j + 1);
                      ga.at2(i, j + 1) += gv * cos_tab.at2(i, j + 1) - gu * sin_tab.at2(i, j);
                    }
                });
  }

  Id slice_cols(Id a, std::int64_t c0, std::int64_t c1) {
    const Tensor<Real>& A = val(a);
    if (c0 < 0 || c1 <= c0 || c1 > A.cols()) throw ShapeError("slice_cols: range");
    const std::int64_t n = A.rows(), w = c1 - c0;
    Tensor<Real> y(Shape{n, w});
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < w; ++j) y.at2(i, j) = A.at2(i, c0 + j);
    return push(std::move(y), needs(a), [this, a, c0, w](const Tensor<Real>& g) {
      if (!needs(a)) return;
      Tensor<Real>& ga = grad_mut(a);
      for (std::int64_t i = 0; i < g.rows(); ++i)
        for (std::int64_t j = 0; j < w; ++j) ga.at2(i, c0 + j) += g.at2(i, j);
    });
  }

  Id concat_cols(const std::vector<Id>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: empty");
    const std::int64_t n = val(parts[0]).rows();
    std::int64_t total = 0;
    bool any = false;
    for (Id p : parts) {
      if (val(p).rows() != n) throw ShapeError("concat_cols: row mismatch");
      total += val(p).cols();
      any = any || needs(p);
    }
    Tensor<Real> y(Shape{n, total});
    std::int64_t off = 0;
    for (Id p : parts) {
      const Tensor<Real>& P = val(p);
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < P.cols(); ++j) y.at2(i, off + j) = P.at2(i, j);
      off += P.cols();
    }
    return push(std::move(y), any, [this, parts](const Tensor<Real>& g) {
      std::int64_t off = 0;
      for (Id p : parts) {
        const std::int64_t w = val(p).cols();
        if (needs(p)) {
          Tensor<Real>& gp = grad_mut(p);
          for (std::int64_t i = 0; i < g.rows(); ++i)
            for (std::int64_t j = 0; j < w; ++j) gp.at2(i, j) += g.at2(i, off + j);
        }
        off += w;
      }
    });
  }

  Id concat_rows(const std::vector<Id>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: empty");
    const std::int64_t m = val(parts[0]).cols();
    std::int64_t total = 0;
    bool any = false;
    for (Id p : parts) {
      if (val(p).cols() != m) throw ShapeError("concat_rows: col mismatch");
      total += val(p).rows();
      any = any || needs(p);
    }
    Tensor<Real> y(Shape{total, m});
    std::int64_t off = 0;
    for (Id p : parts) {
      const Tensor<Real>& P = val(p);
      for (std::int64_t i = 0; i < P.rows(); ++i)
        for (std::int64_t j = 0; j < m; ++j) y.at2(off + i, j) = P.at2(i, j);
      off += P.rows();
    }
    return push(std::move(y), any, [this, parts](const Tensor<Real>& g) {
      std::int64_t off = 0;
      for (Id p : parts) {
        const std::int64_t r = val(p).rows();
        if (needs(p)) {
          Tensor<Real>& gp = grad_mut(p);
          for (std::int64_t i = 0; i < r; ++i)
            for (std::int64_t j = 0; j < g.cols(); ++j) gp.at2(i, j) += g.at2(off + i, j);
        }
        off += r;
      }
    });
  }

  // Row gather; used both for embedding lookup and pad-position extraction.
  Id gather_rows(Id a, std::vector<std::int64_t> idx) {
    const Tensor<Real>& A = val(a);
    for (auto r : idx)
      if (r < 0 || r >= A.rows()) throw ShapeError("gather_rows: index out of range");
    Tensor<Real> y(Shape{static_cast<std::int64_t>(idx.size()), A.cols()});
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::int64_t j = 0; j < A.cols(); ++j)
        y.at2(static_cast<std::int64_t>(i), j) = A.at2(idx[i], j);
    return push(std::move(y), needs(a), [this, a, idx](const Tensor<Real>& g) {
      if (!needs(a)) return;
      Tensor<Real>& ga = grad_mut(a);
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::int64_t j = 0; j < g.cols(); ++j)
          ga.at2(idx[i], j) += g.at2(static_cast<std::int64_t>(i), j);
    });
  }

  // Per-row layernorm with learnable gain/bias (each 1 x d).
  Id layernorm(Id a, Id gain, Id bias) {
    const Tensor<Real>& A = val(a);
    const std::int64_t n = A.rows(), d = A.cols();
    if (val(gain).cols() != d || val(bias).cols() != d)
      throw ShapeError("layernorm: gain/bias width");
    constexpr double kEps = 1e-5;
    Tensor<Real> xhat(A.shape());
    Tensor<Real> y(A.shape());
    std::vector<Real> inv_std(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
      double mu = 0;
      for (std::int64_t j = 0; j < d; ++j) mu += static_cast<double>(A.at2(i, j));
      mu /= static_cast<double>(d);
      double var = 0;
      for (std::int64_t j = 0; j < d; ++j) {
        const double c = static_cast<double>(A.at2(i, j)) - mu;
        var += c * c;
      }
      var /= static_cast<double>(d);
      const double is = 1.0 / std::sqrt(var + kEps);
      inv_std[static_cast<std::size_t>(i)] = static_cast<Real>(is);
      for (std::int64_t j = 0; j < d; ++j) {
        const double xh = (static_cast<double>(A.at2(i, j)) - mu) * is;
        xhat.at2(i, j) = static_cast<Real>(xh);
        y.at2(i, j) = static_cast<Real>(xh * static_cast<double>(val(gain).at2(0, j)) +
                                        static_cast<double>(val(bias).at2(0, j)));
      }
    }
    auto xhat_copy = std::make_shared<Tensor<Real>>(std::move(xhat));
    auto inv_copy = std::make_shared<std::vector<Real>>(std::move(inv_std));
    return push(std::move(y), needs(a) || needs(gain) || needs(bias),
                [this, a, gain, bias, xhat_copy, inv_copy](const Tensor<Real>& g) {
                  const Tensor<Real>& xh = *xhat_copy;
                  const std::int64_t n = g.rows(), d = g.cols();
                  if (needs(gain)) {
                    Tensor<Real>& gg = grad_mut(gain);
                    for (std::int64_t i = 0; i < n; ++i)
                      for (std::int64_t j = 0; j < d; ++j)
                        gg.at2(0, j) += g.at2(i, j) * xh.at2(i, j);
                  }
                  if (needs(bias)) {
                    Tensor<Real>& gb = grad_mut(bias);
                    for (std::int64_t i = 0; i < n; ++i)
                      for (std::int64_t j = 0; j < d; ++j) gb.at2(0, j) += g.at2(i, j);
                  }
                  if (needs(a)) {
                    Tensor<Real>& ga = grad_mut(a);
                    const Tensor<Real>& gn = val(gain);
                    for (std::int64_t i = 0; i < n; ++i) {
                      double mean_gx = 0, mean_gxxh = 0;
                      for (std::int64_t j = 0; j < d; ++j) {
                        const double gx = static_cast<double>(g.at2(i, j)) *
                                          static_cast<double>(gn.at2(0, j));
                        mean_gx += gx;
                        mean_gxxh += gx * static_cast<double>(xh.at2(i, j));
                      }
                      mean_gx /= static_cast<double>(d);
                      mean_gxxh /= static_cast<double>(d);
                      const double is = static_cast<double>((*inv_copy)[static_cast<std::size_t>(i)]);
                      for (std::int64_t j = 0; j < d; ++j) {
                        const double gx = static_cast<double>(g.at2(i, j)) *
                                          static_cast<double>(gn.at2(0, j));
                        ga.at2(i, j) += static_cast<Real>(
                            is * (gx - mean_gx -
                                  static_cast<double>(xh.at2(i, j)) * mean_gxxh));
                      }
                    }
                  }
                });
  }

  // y = x .* (1 + s) + b with s, b broadcast over rows (timestep modulation).
  Id row_affine(Id x, Id s, Id b) {
    const Tensor<Real>& X = val(x);
    const std::int64_t n = X.rows(), d = X.cols();
    if (val(s).cols() != d || val(b).cols() != d) throw ShapeError("row_affine: width");
    Tensor<Real> y(X.shape());
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < d; ++j)
        y.at2(i, j) = X.at2(i, j) * (Real(1) + val(s).at2(0, j)) + val(b).at2(0, j);
    return push(std::move(y), needs(x) || needs(s) || needs(b),
                [this, x, s, b](const Tensor<Real>& g) {
                  const Tensor<Real>& X = val(x);
                  const std::int64_t n = g.rows(), d = g.cols();
                  if (needs(x)) {
                    Tensor<Real>& gx = grad_mut(x);
                    for (std::int64_t i = 0; i < n; ++i)
                      for (std::int64_t j = 0; j < d; ++j)
                        gx.at2(i, j) += g.at2(i, j) * (Real(1) + val(s).at2(0, j));
                  }
                  if (needs(s)) {
                    Tensor<Real>& gs = grad_mut(s);
                    for (std::int64_t i = 0; i < n; ++i)
                      for (std::int64_t j = 0; j < d; ++j)
                        gs.at2(0, j) += g.at2(i, j) * X.at2(i, j);
                  }
                  if (needs(b)) {
                    Tensor<Real>& gb = grad_mut(b);
                    for (std::int64_t i = 0; i < n; ++i)
                      for (std::int64_t j = 0; j < d; ++j) gb.at2(0, j) += g.at2(i, j);
                  }
                });
  }

  // Scalar sum of squared differences against a constant target.
  Id sum_sq_diff(Id a, const Tensor<Real>& target) {
    const Tensor<Real>& A = val(a);
    if (!A.same_shape(target)) throw ShapeError("sum_sq_diff: shape mismatch");
    double s = 0;
    for (std::int64_t i = 0; i < A.numel(); ++i) {
      const double d = static_cast<double>(A[i]) - static_cast<double>(target[i]);
      s += d * d;
    }
    Tensor<Real> y(Shape{1, 1});
    y[0] = static_cast<Real>(s);
    return push(std::move(y), needs(a), [this, a, target](const Tensor<Real>& g) {
      if (!needs(a)) return;
      Tensor<Real>& ga = grad_mut(a);
      const Tensor<Real>& A = val(a);
      const Real g0 = g[0];
      for (std::int64_t i = 0; i < A.numel(); ++i)
        ga[i] += Real(2) * (A[i] - target[i]) * g0;
    });
  }

  // Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse.
  void backward(Id loss) {
    if (val(loss).numel() != 1) throw ShapeError("backward: loss must be scalar");
    for (auto& n : nodes_)
      if (n.requires_grad && n.grad.numel() == 0) n.grad = Tensor<Real>(n.value.shape());
    Node& ln = nodes_[static_cast<std::size_t>(loss)];
    if (!ln.requires_grad) return;
    ln.grad[0] = Real(1);
    for (std::int64_t i = loss; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.requires_grad || !n.back) continue;
      n.back(n.grad, static_cast<Id>(i));
    }
  }

 private:
  struct Node {
    Tensor<Real> value;
    Tensor<Real> grad;
    bool requires_grad = false;
    std::function<void(const Tensor<Real>&, Id)> back;
  };

  bool needs(Id a) const { return nodes_[static_cast<std::size_t>(a)].requires_grad; }

  void accumulate(Id a, const Tensor<Real>& g, Real s) {
    if (!needs(a)) return;
    Tensor<Real>& ga = grad_mut(a);
    for (std::int64_t i = 0; i < g.numel(); ++i) ga[i] += s * g[i];
  }

  Tensor<Real>& grad_mut(Id a) {
    Node& n = nodes_[static_cast<std::size_t>(a)];
    if (n.grad.numel() == 0) n.grad = Tensor<Real>(n.value.shape());
    return n.grad;
  }

  void check_same(Id a, Id b, const char* op) const {
    if (!val(a).same_shape(val(b)))
      throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(val(a).shape()) +
                       " vs " + shape_str(val(b).shape()));
  }

  template <class Fn>
  Id push(Tensor<Real> value, bool requires_grad, Fn&& back) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    if constexpr (!std::is_same_v<std::decay_t<Fn>, std::nullptr_t>) {
      if (requires_grad) {
        if constexpr (std::is_invocable_v<Fn, const Tensor<Real>&, Id>)
          n.back = std::forward<Fn>(back);
        else
          n.back = [f = std::forward<Fn>(back)](const Tensor<Real>& g, Id) { f(g); };
      }
    }
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
};

}  // namespace baton
