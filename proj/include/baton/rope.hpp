// Rotary position machinery: rotate-half, 1D RoPE, per-head 3D RoPE with an
// axis split, and the relative-semantic position maps that place planned
// tokens and diffusion latents in one coordinate frame.
//
// Frequencies follow omega_k = theta^(-2k/d) for pair k over a d-wide
// segment; rotate_half maps each adjacent pair (a, b) to (-b, a).
#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "baton/common.hpp"
#include "baton/tensor.hpp"

namespace baton {

struct RopeConfig {
  double theta = 10000.0;
  std::int64_t head_dim = 0;
  // 3D axis split (t, h, w); parts are even and sum to head_dim.
  std::int64_t d_t = 0, d_h = 0, d_w = 0;

  bool has_split() const { return d_t + d_h + d_w == head_dim && head_dim > 0; }

  static RopeConfig oned(std::int64_t head_dim, double theta = 10000.0) {
    if (head_dim <= 0 || head_dim % 2 != 0)
      throw ShapeError("rope: head_dim must be positive and even");
    RopeConfig c;
    c.theta = theta;
    c.head_dim = head_dim;
    return c;
  }

  // Default split: equal thirds rounded down to even, remainder to the
  // temporal axis.
  static RopeConfig threed(std::int64_t head_dim, double theta = 10000.0) {
    RopeConfig c = oned(head_dim, theta);
    const std::int64_t base = 2 * (head_dim / 6);
    c.d_h = base;
    c.d_w = base;
    c.d_t = head_dim - 2 * base;
    return c;
  }

  static RopeConfig threed_split(std::int64_t dt, std::int64_t dh, std::int64_t dw,
                                 double theta = 10000.0) {
    if (dt < 0 || dh < 0 || dw < 0 || dt % 2 || dh % 2 || dw % 2)
      throw ShapeError("rope: axis split parts must be even and non-negative");
    RopeConfig c = oned(dt + dh + dw, theta);
    c.d_t = dt;
    c.d_h = dh;
    c.d_w = dw;
    return c;
  }
};

struct PositionTriple {
  double t = 0, h = 0, w = 0;
};

inline std::vector<double> rope_freqs(double theta, std::int64_t d) {
  if (d % 2 != 0) throw ShapeError("rope_freqs: odd dim");
  std::vector<double> w(static_cast<std::size_t>(d / 2));
  for (std::int64_t k = 0; k < d / 2; ++k)
    w[static_cast<std::size_t>(k)] =
        std::pow(theta, -2.0 * static_cast<double>(k) / static_cast<double>(d));
  return w;
}

template <class Real>
Tensor<Real> rotate_half(const Tensor<Real>& h) {
  if (h.cols() % 2 != 0) throw ShapeError("rotate_half: odd last dim");
  Tensor<Real> y(h.shape());
  for (std::int64_t r = 0; r < h.rows(); ++r)
    for (std::int64_t c = 0; c < h.cols(); c += 2) {
      y.at2(r, c) = -h.at2(r, c + 1);
      y.at2(r, c + 1) = h.at2(r, c);
    }
  return y;
}

// ---------------------------------------------------------------------------
// cos/sin tables. Each frequency is repeated for its coordinate pair, so the
// rotation kernel y = h.*cos + rotate_half(h).*sin applies uniformly whether
// positions are 1D scalars or per-axis triples over a split head.
// ---------------------------------------------------------------------------

template <class Real>
struct RopeTables {
  Tensor<Real> cos_t, sin_t;  // [rows, d]
};

template <class Real>
RopeTables<Real> rope_tables_1d(const std::vector<double>& positions,
                                const RopeConfig& cfg) {
  const std::int64_t n = static_cast<std::int64_t>(positions.size());
  const std::int64_t d = cfg.head_dim;
  const auto freqs = rope_freqs(cfg.theta, d);
  RopeTables<Real> t{Tensor<Real>(Shape{n, d}), Tensor<Real>(Shape{n, d})};
  for (std::int64_t i = 0; i < n; ++i) {
    const double p = positions[static_cast<std::size_t>(i)];
    if (!std::isfinite(p)) throw NumericError("rope: non-finite position");
    for (std::int64_t k = 0; k < d / 2; ++k) {
      const double a = p * freqs[static_cast<std::size_t>(k)];
      const Real c = static_cast<Real>(std::cos(a)), s = static_cast<Real>(std::sin(a));
      t.cos_t.at2(i, 2 * k) = c;
      t.cos_t.at2(i, 2 * k + 1) = c;
      t.sin_t.at2(i, 2 * k) = s;
      t.sin_t.at2(i, 2 * k + 1) = s;
    }
  }
  return t;
}

template <class Real>
RopeTables<Real> rope_tables_3d(const std::vector<PositionTriple>& positions,
                                const RopeConfig& cfg) {
  if (!cfg.has_split()) throw ShapeError("rope3d: missing axis split");
  const std::int64_t n = static_cast<std::int64_t>(positions.size());
  const std::int64_t d = cfg.head_dim;
  RopeTables<Real> t{Tensor<Real>(Shape{n, d}), Tensor<Real>(Shape{n, d})};
  const std::int64_t seg_d[3] = {cfg.d_t, cfg.d_h, cfg.d_w};
  for (std::int64_t i = 0; i < n; ++i) {
    const PositionTriple& p = positions[static_cast<std::size_t>(i)];
    const double seg_p[3] = {p.t, p.h, p.w};
    std::int64_t off = 0;
    for (int s = 0; s < 3; ++s) {
      if (seg_d[s] == 0) continue;
      if (!std::isfinite(seg_p[s])) throw NumericError("rope3d: non-finite position");
      const auto freqs = rope_freqs(cfg.theta, seg_d[s]);
      for (std::int64_t k = 0; k < seg_d[s] / 2; ++k) {
        const double a = seg_p[s] * freqs[static_cast<std::size_t>(k)];
        const Real c = static_cast<Real>(std::cos(a)), sn = static_cast<Real>(std::sin(a));
        t.cos_t.at2(i, off + 2 * k) = c;
        t.cos_t.at2(i, off + 2 * k + 1) = c;
        t.sin_t.at2(i, off + 2 * k) = sn;
        t.sin_t.at2(i, off + 2 * k + 1) = sn;
      }
      off += seg_d[s];
    }
  }
  return t;
}

template <class Real>
Tensor<Real> apply_tables(const Tensor<Real>& h, const RopeTables<Real>& t) {
  if (h.rows() != t.cos_t.rows() || h.cols() != t.cos_t.cols())
    throw ShapeError("rope apply: table shape mismatch");
  Tensor<Real> y(h.shape());
  for (std::int64_t r = 0; r < h.rows(); ++r)
    for (std::int64_t c = 0; c < h.cols(); c += 2) {
      const Real u = h.at2(r, c), v = h.at2(r, c + 1);
      y.at2(r, c) = u * t.cos_t.at2(r, c) - v * t.sin_t.at2(r, c);
      y.at2(r, c + 1) = v * t.cos_t.at2(r, c + 1) + u * t.sin_t.at2(r, c + 1);
    }
  return y;
}

// All rows rotated by one scalar position.
template <class Real>
Tensor<Real> rope_apply(const Tensor<Real>& h, double p, const RopeConfig& cfg) {
  if (h.cols() != cfg.head_dim) throw ShapeError("rope_apply: width != head_dim");
  if (!std::isfinite(p)) throw NumericError("rope_apply: non-finite position");
  const auto tab = rope_tables_1d<Real>(std::vector<double>(static_cast<std::size_t>(h.rows()), p), cfg);
  return apply_tables(h, tab);
}

// All rows rotated by one position triple over the axis split.
template <class Real>
Tensor<Real> rope3d_apply(const Tensor<Real>& h, const PositionTriple& p,
                          const RopeConfig& cfg) {
  if (!cfg.has_split()) throw ShapeError("rope3d_apply: missing axis split");
  if (h.cols() != cfg.head_dim) throw ShapeError("rope3d_apply: width != head_dim");
  const auto tab = rope_tables_3d<Real>(
      std::vector<PositionTriple>(static_cast<std::size_t>(h.rows()), p), cfg);
  return apply_tables(h, tab);
}

// ---------------------------------------------------------------------------
// Grids and position maps.
// ---------------------------------------------------------------------------

struct GridSpec {
  // video latent grid
  std::int64_t t_v = 0, h_v = 0, w_v = 0;
  // semantic grid: n_key keyframes of h_s x w_s planned tokens
  std::int64_t n_key = 0, h_s = 0, w_s = 0;
  // audio: latent length and planned-token count
  std::int64_t t_a = 0, l_a = 0;

  std::int64_t video_latents() const { return t_v * h_v * w_v; }
  std::int64_t video_tokens() const { return n_key * h_s * w_s; }

  void validate() const {
    if (t_v <= 0 || h_v <= 0 || w_v <= 0 || n_key <= 0 || h_s <= 0 || w_s <= 0 ||
        t_a <= 0 || l_a <= 0)
      throw ShapeError("grid spec: all extents must be positive");
  }
};

inline std::int64_t grid_flatten(const GridSpec& g, std::int64_t it, std::int64_t ih,
                                 std::int64_t iw) {
  return (it * g.h_v + ih) * g.w_v + iw;
}

inline void grid_unflatten(const GridSpec& g, std::int64_t idx, std::int64_t& it,
                           std::int64_t& ih, std::int64_t& iw) {
  iw = idx % g.w_v;
  ih = (idx / g.w_v) % g.h_v;
  it = idx / (g.w_v * g.h_v);
}

// Latent query at grid index (i_t, i_h, i_w) sits at exactly that triple;
// enumeration order matches the row-major t->h->w latent flattening.
inline std::vector<PositionTriple> latent_query_positions(const GridSpec& g) {
  g.validate();
  std::vector<PositionTriple> out;
  out.reserve(static_cast<std::size_t>(g.video_latents()));
  for (std::int64_t it = 0; it < g.t_v; ++it)
    for (std::int64_t ih = 0; ih < g.h_v; ++ih)
      for (std::int64_t iw = 0; iw < g.w_v; ++iw)
        out.push_back({static_cast<double>(it), static_cast<double>(ih),
                       static_cast<double>(iw)});
  return out;
}

// Planned key at semantic index (j_t, j_h, j_w) rescaled into the latent
// frame: (j_t * T/N, j_h * H/h_s, j_w * W/w_s). Fractional by construction.
inline std::vector<PositionTriple> semantic_key_positions(const GridSpec& g) {
  g.validate();
  const double st = static_cast<double>(g.t_v) / static_cast<double>(g.n_key);
  const double sh = static_cast<double>(g.h_v) / static_cast<double>(g.h_s);
  const double sw = static_cast<double>(g.w_v) / static_cast<double>(g.w_s);
  std::vector<PositionTriple> out;
  out.reserve(static_cast<std::size_t>(g.video_tokens()));
  for (std::int64_t jt = 0; jt < g.n_key; ++jt)
    for (std::int64_t jh = 0; jh < g.h_s; ++jh)
      for (std::int64_t jw = 0; jw < g.w_s; ++jw)
        out.push_back({static_cast<double>(jt) * st, static_cast<double>(jh) * sh,
                       static_cast<double>(jw) * sw});
  return out;
}

// Audio: query i at i, planned key k at k * T_a / L_a.
inline std::pair<std::vector<double>, std::vector<double>> audio_positions(
    const GridSpec& g) {
  g.validate();
  std::vector<double> q(static_cast<std::size_t>(g.t_a));
  for (std::int64_t i = 0; i < g.t_a; ++i) q[static_cast<std::size_t>(i)] = static_cast<double>(i);
  const double scale = static_cast<double>(g.t_a) / static_cast<double>(g.l_a);
  std::vector<double> k(static_cast<std::size_t>(g.l_a));
  for (std::int64_t j = 0; j < g.l_a; ++j)
    k[static_cast<std::size_t>(j)] = static_cast<double>(j) * scale;
  return {q, k};
}

// ---------------------------------------------------------------------------
// Verification oracle: builds the block-diagonal 2x2 rotation matrix for each
// position explicitly and evaluates (R(p_q) q) . (R(p_k) k). Reference route
// for every fast RoPE path; always 64-bit.
// ---------------------------------------------------------------------------

namespace detail {

inline Tensor<double> rotation_matrix_1d(double p, double theta, std::int64_t d) {
  const auto freqs = rope_freqs(theta, d);
  Tensor<double> r(Shape{d, d});
  for (std::int64_t k = 0; k < d / 2; ++k) {
    const double a = p * freqs[static_cast<std::size_t>(k)];
    r.at2(2 * k, 2 * k) = std::cos(a);
    r.at2(2 * k, 2 * k + 1) = -std::sin(a);
    r.at2(2 * k + 1, 2 * k) = std::sin(a);
    r.at2(2 * k + 1, 2 * k + 1) = std::cos(a);
  }
  return r;
}

inline Tensor<double> rotation_matrix_3d(const PositionTriple& p, const RopeConfig& cfg) {
  Tensor<double> r(Shape{cfg.head_dim, cfg.head_dim});
  const std::int64_t seg_d[3] = {cfg.d_t, cfg.d_h, cfg.d_w};
  const double seg_p[3] = {p.t, p.h, p.w};
  std::int64_t off = 0;
  for (int s = 0; s < 3; ++s) {
    if (seg_d[s] == 0) continue;
    const Tensor<double> blk = rotation_matrix_1d(seg_p[s], cfg.theta, seg_d[s]);
    for (std::int64_t i = 0; i < seg_d[s]; ++i)
      for (std::int64_t j = 0; j < seg_d[s]; ++j) r.at2(off + i, off + j) = blk.at2(i, j);
    off += seg_d[s];
  }
  return r;
}

}  // namespace detail

inline double relative_score_oracle(const Tensor<double>& q, const Tensor<double>& k,
                                    const PositionTriple& pq, const PositionTriple& pk,
                                    const RopeConfig& cfg) {
  if (q.numel() != cfg.head_dim || k.numel() != cfg.head_dim)
    throw ShapeError("relative_score_oracle: vector width != head_dim");
  const Tensor<double> rq = cfg.has_split()
                                ? detail::rotation_matrix_3d(pq, cfg)
                                : detail::rotation_matrix_1d(pq.t, cfg.theta, cfg.head_dim);
  const Tensor<double> rk = cfg.has_split()
                                ? detail::rotation_matrix_3d(pk, cfg)
                                : detail::rotation_matrix_1d(pk.t, cfg.theta, cfg.head_dim);
  const Tensor<double> qr = matmul(rq, q.reshaped({cfg.head_dim, 1}));
  const Tensor<double> kr = matmul(rk, k.reshaped({cfg.head_dim, 1}));
  return dot(qr, kr);
}

inline double relative_score_oracle_1d(const Tensor<double>& q, const Tensor<double>& k,
                                       double pq, double pk, const RopeConfig& cfg) {
  return relative_score_oracle(q, k, PositionTriple{pq, 0, 0}, PositionTriple{pk, 0, 0},
                               cfg);
}

}  // namespace baton
