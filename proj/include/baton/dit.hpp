// Dual-branch flow-matching denoiser: latent projection of planned tokens,
// RS-RoPE cross-attention injection, rectified-flow interpolation, the flow
// matching loss, and an Euler sampler.
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "baton/config.hpp"
#include "baton/planner.hpp"
#include "baton/prompt.hpp"
#include "baton/rope.hpp"
#include "baton/tape.hpp"
#include "baton/tensor.hpp"

namespace baton {

enum class RopeMode { rs3d, temporal, none };
enum class Topology { cascade, parallel, concat };
enum class Conditioning { planned, text_only, planned_only };

inline RopeMode rope_mode_from_string(const std::string& s) {
  if (s == "rs3d") return RopeMode::rs3d;
  if (s == "temporal") return RopeMode::temporal;
  if (s == "none") return RopeMode::none;
  throw UsageError("unknown rope mode: " + s);
}
inline Topology topology_from_string(const std::string& s) {
  if (s == "cascade") return Topology::cascade;
  if (s == "parallel") return Topology::parallel;
  if (s == "concat") return Topology::concat;
  throw UsageError("unknown topology: " + s);
}
inline Conditioning conditioning_from_string(const std::string& s) {
  if (s == "planned") return Conditioning::planned;
  if (s == "text_only") return Conditioning::text_only;
  if (s == "planned_only") return Conditioning::planned_only;
  throw UsageError("unknown conditioning: " + s);
}

struct InjectionFlags {
  RopeMode rope_mode = RopeMode::rs3d;
  Topology topology = Topology::cascade;
  Conditioning conditioning = Conditioning::planned;

  static InjectionFlags from_config(const Config& c) {
    return {rope_mode_from_string(c.gets("dit.rope_mode")),
            topology_from_string(c.gets("dit.topology")),
            conditioning_from_string(c.gets("dit.conditioning"))};
  }
};

// ---------------------------------------------------------------------------
// Pure primitives.
// ---------------------------------------------------------------------------

// Latent projection of planned tokens (row-wise MLP to the latent width).
template <class Real>
Tensor<Real> latent_project(const Mlp<Real>& lmlp, const Tensor<Real>& h_sem) {
  return mlp_apply(lmlp, h_sem);
}

// VCAttn: video latents (flattened t->h->w) attend to projected planned
// tokens. rs3d rotates q/k by their grid triples (keys rescaled into the
// latent frame); temporal rotates the t-axis segment only; none is plain
// content-based attention. Values are never rotated.
template <class Real>
Tensor<Real> vcattn(const Tensor<Real>& z_v, const Tensor<Real>& h_dit_v,
                    const GridSpec& grid, const RopeConfig& cfg, RopeMode mode) {
  if (z_v.rows() != grid.video_latents())
    throw ShapeError("vcattn: latent count does not match grid");
  if (h_dit_v.rows() != grid.video_tokens())
    throw ShapeError("vcattn: planned-token count does not match grid");
  if (z_v.cols() != cfg.head_dim || h_dit_v.cols() != cfg.head_dim)
    throw ShapeError("vcattn: width != head_dim");
  if (mode == RopeMode::none) return attention(z_v, h_dit_v, h_dit_v);
  auto qp = latent_query_positions(grid);
  auto kp = semantic_key_positions(grid);
  if (mode == RopeMode::temporal) {
    for (auto& p : qp) p.h = p.w = 0;
    for (auto& p : kp) p.h = p.w = 0;
  }
  const auto qt = rope_tables_3d<Real>(qp, cfg);
  const auto kt = rope_tables_3d<Real>(kp, cfg);
  return attention(apply_tables(z_v, qt), apply_tables(h_dit_v, kt), h_dit_v);
}

// ACAttn: audio latents attend to projected planned audio tokens on a shared
// 1D temporal axis (temporal mode coincides with rs3d in 1D).
template <class Real>
Tensor<Real> acattn(const Tensor<Real>& z_a, const Tensor<Real>& h_dit_a,
                    const GridSpec& grid, const RopeConfig& cfg, RopeMode mode) {
  if (z_a.rows() != grid.t_a) throw ShapeError("acattn: latent count mismatch");
  if (h_dit_a.rows() != grid.l_a) throw ShapeError("acattn: key count mismatch");
  if (z_a.cols() != cfg.head_dim || h_dit_a.cols() != cfg.head_dim)
    throw ShapeError("acattn: width != head_dim");
  if (mode == RopeMode::none) return attention(z_a, h_dit_a, h_dit_a);
  const auto [qpos, kpos] = audio_positions(grid);
  const auto qt = rope_tables_1d<Real>(qpos, cfg);
  const auto kt = rope_tables_1d<Real>(kpos, cfg);
  return attention(apply_tables(z_a, qt), apply_tables(h_dit_a, kt), h_dit_a);
}

// Rectified-flow interpolant z_t = (1-t) z_0 + t z_1.
template <class Real>
Tensor<Real> interpolate(const Tensor<Real>& z0, const Tensor<Real>& z1, double t) {
  if (!z0.same_shape(z1)) throw ShapeError("interpolate: shape mismatch");
  if (t < 0.0 || t > 1.0) throw NumericError("interpolate: t outside [0,1]");
  Tensor<Real> z(z0.shape());
  for (std::int64_t i = 0; i < z.numel(); ++i)
    z[i] = static_cast<Real>((1.0 - t) * static_cast<double>(z0[i]) +
                             t * static_cast<double>(z1[i]));
  return z;
}

// Flow matching loss: squared error of both velocity predictions against
// z_1 - z_0, summed over elements.
template <class Real>
double fm_loss(const Tensor<Real>& pred_v, const Tensor<Real>& pred_a,
               const Tensor<Real>& z0_v, const Tensor<Real>& z0_a,
               const Tensor<Real>& z1_v, const Tensor<Real>& z1_a) {
  if (pred_v.numel() != z0_v.numel() || pred_a.numel() != z0_a.numel() ||
      !z0_v.same_shape(z1_v) || !z0_a.same_shape(z1_a))
    throw ShapeError("fm_loss: shape mismatch");
  double s = 0;
  for (std::int64_t i = 0; i < pred_v.numel(); ++i) {
    const double d = static_cast<double>(pred_v[i]) -
                     (static_cast<double>(z1_v[i]) - static_cast<double>(z0_v[i]));
    s += d * d;
  }
  for (std::int64_t i = 0; i < pred_a.numel(); ++i) {
    const double d = static_cast<double>(pred_a[i]) -
                     (static_cast<double>(z1_a[i]) - static_cast<double>(z0_a[i]));
    s += d * d;
  }
  return s;
}

// Euler integration of the rectified-flow ODE from t=1 noise to t=0 data:
// z <- z - dt * v(z, t) over a uniform grid.
template <class Real, class VelocityFn>
std::pair<Tensor<Real>, Tensor<Real>> euler_integrate(Tensor<Real> z_v, Tensor<Real> z_a,
                                                      int steps, VelocityFn&& velocity) {
  if (steps < 1) throw NumericError("euler: steps must be >= 1");
  const double dt = 1.0 / static_cast<double>(steps);
  for (int k = steps; k >= 1; --k) {
    const double t = static_cast<double>(k) * dt;
    const auto [vv, va] = velocity(z_v, z_a, t);
    if (!vv.same_shape(z_v) || !va.same_shape(z_a))
      throw ShapeError("euler: velocity shape mismatch");
    for (std::int64_t i = 0; i < z_v.numel(); ++i)
      z_v[i] = static_cast<Real>(static_cast<double>(z_v[i]) - dt * static_cast<double>(vv[i]));
    for (std::int64_t i = 0; i < z_a.numel(); ++i)
      z_a[i] = static_cast<Real>(static_cast<double>(z_a[i]) - dt * static_cast<double>(va[i]));
    if (!z_v.all_finite() || !z_a.all_finite())
      throw NumericError("euler: non-finite state at step " + std::to_string(k));
  }
  return {std::move(z_v), std::move(z_a)};
}

// ---------------------------------------------------------------------------
// Dual-branch model.
// ---------------------------------------------------------------------------

struct DitConfig {
  std::int64_t d = 32;
  std::int64_t blocks = 4;
  std::int64_t heads = 4;
  std::int64_t d_s = 16, d_a = 8;
  std::int64_t vocab_size = 0;
  double theta = 10000.0;
  InjectionFlags flags;

  static DitConfig from_config(const Config& c, const Vocab& vocab) {
    DitConfig d;
    d.d = c.geti("grid.latent_dim");
    d.blocks = c.geti("dit.blocks");
    d.heads = c.geti("dit.heads");
    d.d_s = c.geti("planner.d_s");
    d.d_a = c.geti("planner.d_a");
    d.vocab_size = vocab.size();
    d.theta = c.getr("rope.theta");
    d.flags = InjectionFlags::from_config(c);
    if (d.d % d.heads != 0 || (d.d / d.heads) % 2 != 0)
      throw UsageError("dit: latent_dim / heads must be even");
    return d;
  }
};

// Sinusoidal timestep features of width d for t in [0, 1].
template <class Real>
Tensor<Real> timestep_features(double t, std::int64_t d) {
  Tensor<Real> e(Shape{1, d});
  const std::int64_t half = d / 2;
  for (std::int64_t k = 0; k < half; ++k) {
    const double freq =
        std::pow(10000.0, -static_cast<double>(k) / static_cast<double>(half));
    e.at2(0, 2 * k) = static_cast<Real>(std::sin(t * freq * 100.0));
    if (2 * k + 1 < d) e.at2(0, 2 * k + 1) = static_cast<Real>(std::cos(t * freq * 100.0));
  }
  return e;
}

template <class Real>
struct DualDit {
  DitConfig cfg;
  GridSpec grid;
  ParamStore<Real> params;
  Tensor<Real> text_embed;  // frozen seeded embedder over prompt tokens

  using Id = typename Tape<Real>::Id;

  static DualDit init(const DitConfig& cfg, const GridSpec& grid, std::uint64_t seed,
                      std::uint64_t frozen_seed) {
    DualDit m;
    m.cfg = cfg;
    m.grid = grid;
    grid.validate();
    RngStream rng(derive_seed(seed, 21));
    RngStream frozen_rng(derive_seed(frozen_seed, 5));
    m.text_embed = Tensor<Real>::random(frozen_rng, {cfg.vocab_size, cfg.d}, true, 1.0);

    auto w = [&](const std::string& name, Shape s) {
      m.params.add(name, Tensor<Real>::random(rng, std::move(s), true, 0.02));
    };
    auto zeros = [&](const std::string& name, Shape s) {
      m.params.add(name, Tensor<Real>(std::move(s)));
    };
    auto ones = [&](const std::string& name, Shape s) {
      m.params.add(name, Tensor<Real>(std::move(s), Real(1)));
    };
    auto attn_params = [&](const std::string& p) {
      w(p + ".wq", {cfg.d, cfg.d});
      zeros(p + ".bq", {1, cfg.d});
      w(p + ".wk", {cfg.d, cfg.d});
      zeros(p + ".bk", {1, cfg.d});
      w(p + ".wv", {cfg.d, cfg.d});
      zeros(p + ".bv", {1, cfg.d});
      w(p + ".wo", {cfg.d, cfg.d});
      zeros(p + ".bo", {1, cfg.d});
    };
    auto ln_params = [&](const std::string& p) {
      ones(p + ".g", {1, cfg.d});
      zeros(p + ".b", {1, cfg.d});
    };

    const std::int64_t d = cfg.d;
    w("dit.lmlp_v.w1", {cfg.d_s, d});
    zeros("dit.lmlp_v.b1", {1, d});
    w("dit.lmlp_v.w2", {d, d});
    zeros("dit.lmlp_v.b2", {1, d});
    w("dit.lmlp_a.w1", {cfg.d_a, d});
    zeros("dit.lmlp_a.b1", {1, d});
    w("dit.lmlp_a.w2", {d, d});
    zeros("dit.lmlp_a.b2", {1, d});
    w("dit.temb.w1", {d, d});
    zeros("dit.temb.b1", {1, d});
    w("dit.temb.w2", {d, d});
    zeros("dit.temb.b2", {1, d});

    // Every sublayer's parameters exist regardless of flags so that one
    // checkpoint supports runtime conditioning/rope/topology toggles.
    for (const std::string branch : {"v", "a"}) {
      const std::string base = "dit." + branch;
      w(base + ".in.w", {d, d});
      zeros(base + ".in.b", {1, d});
      for (std::int64_t b = 0; b < cfg.blocks; ++b) {
        const std::string p = base + ".blk" + std::to_string(b);
        w(p + ".mod.sw", {d, d});
        zeros(p + ".mod.sb", {1, d});
        w(p + ".mod.bw", {d, d});
        zeros(p + ".mod.bb", {1, d});
        ln_params(p + ".ln1");
        attn_params(p + ".self");
        ln_params(p + ".ln2");
        attn_params(p + ".inter");
        ln_params(p + ".ln3");
        attn_params(p + ".text");
        ln_params(p + ".ln4");
        attn_params(p + ".plan");
        ln_params(p + ".ln5");
        w(p + ".ff.w1", {d, 4 * d});
        zeros(p + ".ff.b1", {1, 4 * d});
        w(p + ".ff.w2", {4 * d, d});
        zeros(p + ".ff.b2", {1, d});
      }
      ln_params(base + ".lnf");
      w(base + ".out.w", {d, d});
      zeros(base + ".out.b", {1, d});
    }
    return m;
  }

  struct RsTables {
    RopeTables<Real> vq, vk, aq, ak;
    bool active = false;
  };

  RsTables make_rs_tables(RopeMode mode) const {
    RsTables t;
    if (mode == RopeMode::none) return t;
    const std::int64_t dh = cfg.d / cfg.heads;
    const auto cfg3d = RopeConfig::threed(dh, cfg.theta);
    const auto cfg1d = RopeConfig::oned(dh, cfg.theta);
    auto qp = latent_query_positions(grid);
    auto kp = semantic_key_positions(grid);
    if (mode == RopeMode::temporal) {
      for (auto& p : qp) p.h = p.w = 0;
      for (auto& p : kp) p.h = p.w = 0;
    }
    t.vq = rope_tables_3d<Real>(qp, cfg3d);
    t.vk = rope_tables_3d<Real>(kp, cfg3d);
    const auto [aq, ak] = audio_positions(grid);
    t.aq = rope_tables_1d<Real>(aq, cfg1d);
    t.ak = rope_tables_1d<Real>(ak, cfg1d);
    t.active = true;
    return t;
  }

  // Text keys/values: frozen embedding rows of the prompt's text prefix.
  Tensor<Real> text_rows(const std::vector<std::int64_t>& text_ids) const {
    Tensor<Real> rows(Shape{static_cast<std::int64_t>(text_ids.size()), cfg.d});
    for (std::size_t i = 0; i < text_ids.size(); ++i) {
      const auto id = text_ids[i];
      if (id < 0 || id >= cfg.vocab_size) throw ShapeError("dit: text id out of vocab");
      for (std::int64_t c = 0; c < cfg.d; ++c)
        rows.at2(static_cast<std::int64_t>(i), c) = text_embed.at2(id, c);
    }
    return rows;
  }

  struct ForwardOut {
    Id v_v, v_a;          // velocity predictions
    Id h_dit_v, h_dit_a;  // projected planned tokens (invalid ids if unused)
  };

  // One denoiser evaluation. cond_v/cond_a are tape ids of the planned
  // tokens (H_sem widths D_s / D_a); pass -1 when conditioning == text_only.
  ForwardOut forward(Tape<Real>& tape, BoundParams<Real>& P, Id z_v, Id z_a, double t,
                     const std::vector<std::int64_t>& text_ids, Id cond_v, Id cond_a,
                     const InjectionFlags& flags) const {
    if (tape.val(z_v).rows() != grid.video_latents() || tape.val(z_v).cols() != cfg.d)
      throw ShapeError("dit_forward: video latent shape");
    if (tape.val(z_a).rows() != grid.t_a || tape.val(z_a).cols() != cfg.d)
      throw ShapeError("dit_forward: audio latent shape");

    const bool use_plan = flags.conditioning != Conditioning::text_only;
    const bool use_text = flags.conditioning != Conditioning::planned_only;
    ForwardOut out{};
    out.v_v = out.v_a = out.h_dit_v = out.h_dit_a = -1;

    // planned tokens into the latent width
    if (use_plan) {
      if (cond_v < 0 || cond_a < 0)
        throw ShapeError("dit_forward: planned conditioning missing");
      out.h_dit_v = mlp2(tape, P, "dit.lmlp_v", cond_v);
      out.h_dit_a = mlp2(tape, P, "dit.lmlp_a", cond_a);
    }

    // timestep embedding -> per-block modulation source
    const auto t_feat = tape.leaf(timestep_features<Real>(t, cfg.d), false);
    const auto temb = mlp2(tape, P, "dit.temb", t_feat);

    // frozen text rows (constant leaf)
    Id text_kv = -1;
    if (use_text || flags.topology == Topology::concat)
      text_kv = tape.leaf(text_rows(text_ids), false);

    // self-attention rope tables
    const std::int64_t dh = cfg.d / cfg.heads;
    const auto self3d = rope_tables_3d<Real>(latent_query_positions(grid),
                                             RopeConfig::threed(dh, cfg.theta));
    std::vector<double> apos(static_cast<std::size_t>(grid.t_a));
    for (std::int64_t i = 0; i < grid.t_a; ++i) apos[static_cast<std::size_t>(i)] = static_cast<double>(i);
    const auto self1d = rope_tables_1d<Real>(apos, RopeConfig::oned(dh, cfg.theta));
    const RsTables rs = make_rs_tables(flags.rope_mode);

    Id xv = tape.add_row(tape.matmul(z_v, P["dit.v.in.w"]), P["dit.v.in.b"]);
    Id xa = tape.add_row(tape.matmul(z_a, P["dit.a.in.w"]), P["dit.a.in.b"]);

    for (std::int64_t b = 0; b < cfg.blocks; ++b) {
      const Id xv_in = xv, xa_in = xa;  // inter-branch exchange uses entry states
      xv = branch_block(tape, P, "dit.v.blk" + std::to_string(b), xv, xa_in, temb,
                        text_kv, out.h_dit_v, flags, &self3d, rs.active ? &rs.vq : nullptr,
                        rs.active ? &rs.vk : nullptr);
      xa = branch_block(tape, P, "dit.a.blk" + std::to_string(b), xa, xv_in, temb,
                        text_kv, out.h_dit_a, flags, &self1d, rs.active ? &rs.aq : nullptr,
                        rs.active ? &rs.ak : nullptr);
    }
    const auto hv = tape.layernorm(xv, P["dit.v.lnf.g"], P["dit.v.lnf.b"]);
    out.v_v = tape.add_row(tape.matmul(hv, P["dit.v.out.w"]), P["dit.v.out.b"]);
    const auto ha = tape.layernorm(xa, P["dit.a.lnf.g"], P["dit.a.lnf.b"]);
    out.v_a = tape.add_row(tape.matmul(ha, P["dit.a.out.w"]), P["dit.a.out.b"]);
    return out;
  }

  // Velocity evaluation without gradients, for sampling.
  std::pair<Tensor<Real>, Tensor<Real>> velocity(
      const Tensor<Real>& z_v, const Tensor<Real>& z_a, double t,
      const std::vector<std::int64_t>& text_ids, const Tensor<Real>* h_sem_v,
      const Tensor<Real>* h_sem_a, const InjectionFlags& flags) const {
    Tape<Real> tape;
    BoundParams<Real> P(tape, params, false);
    const Id zv = tape.leaf(z_v, false), za = tape.leaf(z_a, false);
    Id cv = -1, ca = -1;
    if (flags.conditioning != Conditioning::text_only) {
      if (!h_sem_v || !h_sem_a) throw ShapeError("velocity: planned tokens missing");
      cv = tape.leaf(*h_sem_v, false);
      ca = tape.leaf(*h_sem_a, false);
    }
    const auto out = forward(tape, P, zv, za, t, text_ids, cv, ca, flags);
    return {tape.val(out.v_v), tape.val(out.v_a)};
  }

 private:
  Id branch_block(Tape<Real>& tape, BoundParams<Real>& P, const std::string& p, Id x,
                  Id other, Id temb, Id text_kv, Id h_dit, const InjectionFlags& flags,
                  const RopeTables<Real>* self_rope, const RopeTables<Real>* rs_q,
                  const RopeTables<Real>* rs_k) const {
    const bool use_plan = flags.conditioning != Conditioning::text_only;
    const bool use_text = flags.conditioning != Conditioning::planned_only;

    // timestep modulation
    const auto s_row = tape.add_row(tape.matmul(temb, P[p + ".mod.sw"]), P[p + ".mod.sb"]);
    const auto b_row = tape.add_row(tape.matmul(temb, P[p + ".mod.bw"]), P[p + ".mod.bb"]);
    x = tape.row_affine(x, s_row, b_row);

    // self-attention (3D rope for video, 1D for audio)
    const auto h1 = tape.layernorm(x, P[p + ".ln1.g"], P[p + ".ln1.b"]);
    x = tape.add(x, mha(tape, P, p + ".self", h1, h1, cfg.heads, self_rope, self_rope));

    // inter-branch cross-attention
    const auto h2 = tape.layernorm(x, P[p + ".ln2.g"], P[p + ".ln2.b"]);
    x = tape.add(x, mha(tape, P, p + ".inter", h2, other, cfg.heads));

    switch (flags.topology) {
      case Topology::cascade: {
        if (use_text) {
          const auto h3 = tape.layernorm(x, P[p + ".ln3.g"], P[p + ".ln3.b"]);
          x = tape.add(x, mha(tape, P, p + ".text", h3, text_kv, cfg.heads));
        }
        if (use_plan) {
          const auto h4 = tape.layernorm(x, P[p + ".ln4.g"], P[p + ".ln4.b"]);
          x = tape.add(x, mha(tape, P, p + ".plan", h4, h_dit, cfg.heads, rs_q, rs_k));
        }
        break;
      }
      case Topology::parallel: {
        // text and planned-token cross-attention read the same input and
        // their residuals are summed
        const auto h3 = tape.layernorm(x, P[p + ".ln3.g"], P[p + ".ln3.b"]);
        if (use_text) x = tape.add(x, mha(tape, P, p + ".text", h3, text_kv, cfg.heads));
        if (use_plan) x = tape.add(x, mha(tape, P, p + ".plan", h3, h_dit, cfg.heads, rs_q, rs_k));
        break;
      }
      case Topology::concat: {
        // planned tokens appended to the text key/value set; single attn
        const auto h3 = tape.layernorm(x, P[p + ".ln3.g"], P[p + ".ln3.b"]);
        Id kv;
        if (use_plan && use_text)
          kv = tape.concat_rows({text_kv, h_dit});
        else if (use_plan)
          kv = h_dit;
        else
          kv = text_kv;
        x = tape.add(x, mha(tape, P, p + ".text", h3, kv, cfg.heads));
        break;
      }
    }

    const auto h5 = tape.layernorm(x, P[p + ".ln5.g"], P[p + ".ln5.b"]);
    return tape.add(x, mlp2(tape, P, p + ".ff", h5));
  }
};

// Tape route for the flow matching loss.
template <class Real>
typename Tape<Real>::Id fm_loss_tape(Tape<Real>& tape, typename Tape<Real>::Id pred_v,
                                     typename Tape<Real>::Id pred_a,
                                     const Tensor<Real>& z0_v, const Tensor<Real>& z0_a,
                                     const Tensor<Real>& z1_v, const Tensor<Real>& z1_a) {
  Tensor<Real> tv = z1_v - z0_v;
  Tensor<Real> ta = z1_a - z0_a;
  tv = tv.reshaped(tape.val(pred_v).shape());
  ta = ta.reshaped(tape.val(pred_a).shape());
  return tape.add(tape.sum_sq_diff(pred_v, tv), tape.sum_sq_diff(pred_a, ta));
}

}  // namespace baton
