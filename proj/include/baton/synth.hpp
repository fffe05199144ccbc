// Procedurally paired scenes: a moving square rendered at keyframe times and
// a sine tone whose instantaneous frequency follows the square's horizontal
// centroid. Frozen seeded featurizers stand in for the perceptual encoders;
// a pooled + frozen-affine lift stands in for the VAEs, paired with an exact
// left-inverse decoder so trajectory metrics can be computed from latents.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "baton/common.hpp"
#include "baton/config.hpp"
#include "baton/container.hpp"
#include "baton/prompt.hpp"
#include "baton/rng.hpp"
#include "baton/rope.hpp"
#include "baton/tensor.hpp"

namespace baton {

// ---------------------------------------------------------------------------
// Scenes.
// ---------------------------------------------------------------------------

enum class MotionCode { left, right, up, down, hold };

inline const char* motion_name(MotionCode c) {
  switch (c) {
    case MotionCode::left: return "left";
    case MotionCode::right: return "right";
    case MotionCode::up: return "up";
    case MotionCode::down: return "down";
    case MotionCode::hold: return "hold";
  }
  return "?";
}

struct SceneEvent {
  double start_s = 0, end_s = 0;
  MotionCode code = MotionCode::hold;
};

// Square speed in frame widths per second, and the centroid band that keeps
// the square fully inside the frame (half-width 2px of 16).
constexpr double kSquareSpeed = 0.35;
constexpr double kPosMin = 0.125;
constexpr double kPosMax = 0.875;
constexpr std::int64_t kPosBins = 10;
constexpr std::int64_t kSquareHalfPx = 2;

inline double bin_to_pos(std::int64_t bin) {
  return kPosMin + (kPosMax - kPosMin) * static_cast<double>(bin) /
                       static_cast<double>(kPosBins - 1);
}

struct SceneSpec {
  std::int64_t duration_s = 0;
  std::int64_t xbin = 0, ybin = 0;
  std::vector<SceneEvent> events;  // tile [0, M] without overlap
  double f0 = 60.0, alpha = 35.0;  // tone law f(t) = f0 + alpha * x(t)

  // Piecewise-linear centroid trajectory, clamped to the legal band.
  void pos_at(double t, double& x, double& y) const {
    x = bin_to_pos(xbin);
    y = bin_to_pos(ybin);
    for (const auto& e : events) {
      const double dt = std::clamp(t, e.start_s, e.end_s) - e.start_s;
      if (dt <= 0) break;
      switch (e.code) {
        case MotionCode::left: x -= kSquareSpeed * dt; break;
        case MotionCode::right: x += kSquareSpeed * dt; break;
        case MotionCode::up: y -= kSquareSpeed * dt; break;
        case MotionCode::down: y += kSquareSpeed * dt; break;
        case MotionCode::hold: break;
      }
    }
    x = std::clamp(x, kPosMin, kPosMax);
    y = std::clamp(y, kPosMin, kPosMax);
  }

  double freq_at(double t) const {
    double x, y;
    pos_at(t, x, y);
    return f0 + alpha * x;
  }

  std::string to_string() const {
    std::string s = "K" + std::to_string(events.size()) + " X" + std::to_string(xbin) +
                    " Y" + std::to_string(ybin);
    for (const auto& e : events) s += std::string(" ") + motion_name(e.code);
    return s;
  }
};

struct RawSample {
  Tensor<double> video;  // [N, P, P], values in [0, 1]
  Tensor<double> audio;  // [M, rate]
};

// Script sampling: 2-4 events tiling [0, M]; every event is drawn from the
// codes that keep the square inside the frame, and scripts are re-drawn
// (bounded) until they contain at least one horizontal move so the tone law
// has signal.
inline SceneSpec sample_scene_spec(RngStream& rng, const PlanGeometry& geom,
                                   double f0, double alpha) {
  SceneSpec spec;
  spec.duration_s = geom.duration_s;
  spec.f0 = f0;
  spec.alpha = alpha;
  const std::int64_t k = 2 + static_cast<std::int64_t>(rng.below(3));
  spec.xbin = static_cast<std::int64_t>(rng.below(kPosBins));
  spec.ybin = static_cast<std::int64_t>(rng.below(kPosBins));
  const double dur = static_cast<double>(geom.duration_s) / static_cast<double>(k);
  const double disp = kSquareSpeed * dur;

  for (int attempt = 0; attempt < 100; ++attempt) {
    spec.events.clear();
    double x = bin_to_pos(spec.xbin), y = bin_to_pos(spec.ybin);
    bool horizontal = false;
    for (std::int64_t e = 0; e < k; ++e) {
      std::vector<MotionCode> feasible;
      if (x - disp >= kPosMin - 1e-12) feasible.push_back(MotionCode::left);
      if (x + disp <= kPosMax + 1e-12) feasible.push_back(MotionCode::right);
      if (y - disp >= kPosMin - 1e-12) feasible.push_back(MotionCode::up);
      if (y + disp <= kPosMax + 1e-12) feasible.push_back(MotionCode::down);
      feasible.push_back(MotionCode::hold);
      const MotionCode code = feasible[rng.below(feasible.size())];
      switch (code) {
        case MotionCode::left: x -= disp; horizontal = true; break;
        case MotionCode::right: x += disp; horizontal = true; break;
        case MotionCode::up: y -= disp; break;
        case MotionCode::down: y += disp; break;
        case MotionCode::hold: break;
      }
      spec.events.push_back({static_cast<double>(e) * dur,
                             static_cast<double>(e + 1) * dur, code});
    }
    if (horizontal) break;
  }
  return spec;
}

// Render one P x P frame with the square at normalized centroid (x, y);
// pixel intensity is the (separable) coverage fraction, so sub-pixel
// positions produce soft edges.
inline void render_frame(double x, double y, std::int64_t px, double* out) {
  const double cx = x * static_cast<double>(px);
  const double cy = y * static_cast<double>(px);
  const double h = static_cast<double>(kSquareHalfPx);
  std::vector<double> covx(static_cast<std::size_t>(px)), covy(static_cast<std::size_t>(px));
  for (std::int64_t c = 0; c < px; ++c) {
    const double lo = std::max(static_cast<double>(c), cx - h);
    const double hi = std::min(static_cast<double>(c + 1), cx + h);
    covx[static_cast<std::size_t>(c)] = std::max(0.0, hi - lo);
  }
  for (std::int64_t r = 0; r < px; ++r) {
    const double lo = std::max(static_cast<double>(r), cy - h);
    const double hi = std::min(static_cast<double>(r + 1), cy + h);
    covy[static_cast<std::size_t>(r)] = std::max(0.0, hi - lo);
  }
  for (std::int64_t r = 0; r < px; ++r)
    for (std::int64_t c = 0; c < px; ++c)
      out[r * px + c] = covy[static_cast<std::size_t>(r)] * covx[static_cast<std::size_t>(c)];
}

struct SynthParams {
  std::int64_t frame_px = 16;
  std::int64_t audio_rate = 800;
  double f0 = 60.0;
  double alpha = 35.0;

  static SynthParams from_config(const Config& c) {
    SynthParams p;
    p.frame_px = c.geti("data.frame_px");
    p.audio_rate = c.geti("data.audio_rate");
    p.f0 = c.getr("data.f0");
    p.alpha = c.getr("data.alpha");
    return p;
  }
};

inline RawSample render_scene(const SceneSpec& spec, const PlanGeometry& geom,
                              const SynthParams& sp) {
  const std::int64_t n = geom.keyframes(), px = sp.frame_px;
  const std::int64_t m = geom.duration_s, rate = sp.audio_rate;
  RawSample raw{Tensor<double>(Shape{n, px, px}), Tensor<double>(Shape{m, rate})};
  for (std::int64_t i = 0; i < n; ++i) {
    double x, y;
    spec.pos_at(static_cast<double>(i) * static_cast<double>(m) / static_cast<double>(n),
                x, y);
    render_frame(x, y, px, raw.video.data() + i * px * px);
  }
  // Unit-amplitude sine with instantaneous frequency f(t); the phase is
  // accumulated by trapezoid so it stays continuous across chunk borders.
  double phase = 0.0;
  double f_prev = spec.freq_at(0.0);
  for (std::int64_t s = 0; s < m * rate; ++s) {
    raw.audio[s] = std::sin(2.0 * 3.14159265358979323846 * phase);
    const double t_next = static_cast<double>(s + 1) / static_cast<double>(rate);
    const double f_next = spec.freq_at(t_next);
    phase += 0.5 * (f_prev + f_next) / static_cast<double>(rate);
    f_prev = f_next;
  }
  return raw;
}

inline std::pair<SceneSpec, RawSample> generate_scene(RngStream& rng,
                                                      const PlanGeometry& geom,
                                                      const SynthParams& sp) {
  geom.validate();
  SceneSpec spec = sample_scene_spec(rng, geom, sp.f0, sp.alpha);
  return {spec, render_scene(spec, geom, sp)};
}

// ---------------------------------------------------------------------------
// Scene <-> text. Injective: the token sequence determines the scene.
// ---------------------------------------------------------------------------

inline std::pair<std::vector<std::int64_t>, std::vector<std::int64_t>> scene_to_text(
    const SceneSpec& spec, const Vocab& vocab) {
  std::vector<std::int64_t> video, audio;
  video.push_back(vocab.id("K" + std::to_string(spec.events.size())));
  video.push_back(vocab.id("X" + std::to_string(spec.xbin)));
  video.push_back(vocab.id("Y" + std::to_string(spec.ybin)));
  for (const auto& e : spec.events) {
    switch (e.code) {
      case MotionCode::left:
        video.push_back(vocab.id("EV_LEFT"));
        audio.push_back(vocab.id("TONE_FALL"));
        break;
      case MotionCode::right:
        video.push_back(vocab.id("EV_RIGHT"));
        audio.push_back(vocab.id("TONE_RISE"));
        break;
      case MotionCode::up:
        video.push_back(vocab.id("EV_UP"));
        audio.push_back(vocab.id("TONE_FLAT"));
        break;
      case MotionCode::down:
        video.push_back(vocab.id("EV_DOWN"));
        audio.push_back(vocab.id("TONE_FLAT"));
        break;
      case MotionCode::hold:
        video.push_back(vocab.id("EV_HOLD"));
        audio.push_back(vocab.id("TONE_FLAT"));
        break;
    }
  }
  return {video, audio};
}

inline SceneSpec text_to_scene(const std::vector<std::int64_t>& video_text,
                               const Vocab& vocab, std::int64_t duration_s, double f0,
                               double alpha) {
  if (video_text.size() < 4) throw FormatError("text_to_scene: too short");
  SceneSpec spec;
  spec.duration_s = duration_s;
  spec.f0 = f0;
  spec.alpha = alpha;
  const std::string kname = vocab.name(video_text[0]);
  const std::string xname = vocab.name(video_text[1]);
  const std::string yname = vocab.name(video_text[2]);
  if (kname[0] != 'K' || xname[0] != 'X' || yname[0] != 'Y')
    throw FormatError("text_to_scene: expected K/X/Y prefix codes");
  const std::int64_t k = std::stoll(kname.substr(1));
  spec.xbin = std::stoll(xname.substr(1));
  spec.ybin = std::stoll(yname.substr(1));
  if (static_cast<std::int64_t>(video_text.size()) != 3 + k)
    throw FormatError("text_to_scene: event count mismatch");
  const double dur = static_cast<double>(duration_s) / static_cast<double>(k);
  for (std::int64_t e = 0; e < k; ++e) {
    const std::string ev = vocab.name(video_text[static_cast<std::size_t>(3 + e)]);
    MotionCode code;
    if (ev == "EV_LEFT") code = MotionCode::left;
    else if (ev == "EV_RIGHT") code = MotionCode::right;
    else if (ev == "EV_UP") code = MotionCode::up;
    else if (ev == "EV_DOWN") code = MotionCode::down;
    else if (ev == "EV_HOLD") code = MotionCode::hold;
    else throw FormatError("text_to_scene: bad event code " + ev);
    spec.events.push_back({static_cast<double>(e) * dur,
                           static_cast<double>(e + 1) * dur, code});
  }
  return spec;
}

// ---------------------------------------------------------------------------
// Frozen featurizers and the toy latent codec. All maps are seeded once and
// never trained; content_hash() lets tests assert they stay untouched.
// ---------------------------------------------------------------------------

constexpr std::int64_t kAudioPoolKernel = 4;

struct FrozenMaps {
  // featurizers (perceptual-encoder stand-ins)
  Tensor<double> vf_w, vf_b;  // [patch, D_s], [1, D_s]
  Tensor<double> af_w, af_b;  // [win, D_a], [1, D_a]
  // latent codec
  Tensor<double> lift_u, lift_b;     // video: [1, d] direction and offset
  Tensor<double> alift_w, alift_b;   // audio: [pooled, d], [1, d]
  Tensor<double> alift_winv;         // [d, pooled], exact right-solve of alift_w

  std::int64_t d_s = 0, d_a = 0, d = 0, pooled = 0;

  std::uint64_t content_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const Tensor<double>* t : {&vf_w, &vf_b, &af_w, &af_b, &lift_u, &lift_b,
                                    &alift_w, &alift_b})
      h = fnv1a(t->data(), sizeof(double) * static_cast<std::size_t>(t->numel()), h);
    return h;
  }
};

// Solve X (d x pooled) with W * X = I_pooled for W (pooled x d) of full row
// rank: X = W^T (W W^T)^{-1}, via Gauss-Jordan on the small Gram matrix.
inline Tensor<double> right_inverse(const Tensor<double>& w) {
  const std::int64_t p = w.rows(), d = w.cols();
  Tensor<double> gram(Shape{p, p});
  for (std::int64_t i = 0; i < p; ++i)
    for (std::int64_t j = 0; j < p; ++j) {
      double s = 0;
      for (std::int64_t c = 0; c < d; ++c) s += w.at2(i, c) * w.at2(j, c);
      gram.at2(i, j) = s;
    }
  Tensor<double> inv(Shape{p, p});
  for (std::int64_t i = 0; i < p; ++i) inv.at2(i, i) = 1.0;
  for (std::int64_t col = 0; col < p; ++col) {
    std::int64_t piv = col;
    for (std::int64_t r = col + 1; r < p; ++r)
      if (std::abs(gram.at2(r, col)) > std::abs(gram.at2(piv, col))) piv = r;
    if (std::abs(gram.at2(piv, col)) < 1e-12)
      throw NumericError("right_inverse: singular frozen lift");
    if (piv != col)
      for (std::int64_t c = 0; c < p; ++c) {
        std::swap(gram.at2(piv, c), gram.at2(col, c));
        std::swap(inv.at2(piv, c), inv.at2(col, c));
      }
    const double scale = 1.0 / gram.at2(col, col);
    for (std::int64_t c = 0; c < p; ++c) {
      gram.at2(col, c) *= scale;
      inv.at2(col, c) *= scale;
    }
    for (std::int64_t r = 0; r < p; ++r) {
      if (r == col) continue;
      const double f = gram.at2(r, col);
      if (f == 0.0) continue;
      for (std::int64_t c = 0; c < p; ++c) {
        gram.at2(r, c) -= f * gram.at2(col, c);
        inv.at2(r, c) -= f * inv.at2(col, c);
      }
    }
  }
  // X = W^T inv
  Tensor<double> x(Shape{d, p});
  for (std::int64_t i = 0; i < d; ++i)
    for (std::int64_t j = 0; j < p; ++j) {
      double s = 0;
      for (std::int64_t r = 0; r < p; ++r) s += w.at2(r, i) * inv.at2(r, j);
      x.at2(i, j) = s;
    }
  return x;
}

struct DataGeometry {
  PlanGeometry plan;
  GridSpec grid;
  SynthParams sp;
  std::int64_t d_s = 16, d_a = 8;

  static DataGeometry from_config(const Config& c) {
    DataGeometry g;
    g.plan = PlanGeometry{c.geti("geom.duration_s"), c.geti("geom.h_s"),
                          c.geti("geom.w_s"), c.geti("geom.n_a")};
    g.plan.validate();
    g.grid = GridSpec{c.geti("grid.video_t"), c.geti("grid.video_h"),
                      c.geti("grid.video_w"), g.plan.keyframes(),
                      g.plan.h_s,             g.plan.w_s,
                      c.geti("grid.audio_t"), g.plan.audio_tokens()};
    g.grid.validate();
    g.sp = SynthParams::from_config(c);
    g.d_s = c.geti("planner.d_s");
    g.d_a = c.geti("planner.d_a");
    return g;
  }

  std::int64_t latent_dim(const Config& c) const { return c.geti("grid.latent_dim"); }
};

inline FrozenMaps make_frozen_maps(std::uint64_t frozen_seed, const DataGeometry& g,
                                   std::int64_t latent_dim) {
  const std::int64_t px = g.sp.frame_px;
  if (px % g.plan.h_s != 0 || px % g.plan.w_s != 0)
    throw ShapeError("featurize: frame not divisible into h_s x w_s patches");
  if (g.sp.audio_rate % g.plan.n_a != 0)
    throw ShapeError("featurize: chunk not divisible into n_a windows");
  const std::int64_t patch = (px / g.plan.h_s) * (px / g.plan.w_s);
  const std::int64_t win = g.sp.audio_rate / g.plan.n_a;
  const std::int64_t cell = g.sp.audio_rate * g.plan.duration_s / g.grid.t_a;
  if (g.sp.audio_rate * g.plan.duration_s % g.grid.t_a != 0 ||
      cell % kAudioPoolKernel != 0)
    throw ShapeError("encode: audio length incompatible with latent grid");
  const std::int64_t pooled = cell / kAudioPoolKernel;
  if (pooled > latent_dim)
    throw ShapeError("encode: pooled audio window exceeds latent width");

  FrozenMaps f;
  f.d_s = g.d_s;
  f.d_a = g.d_a;
  f.d = latent_dim;
  f.pooled = pooled;
  RngStream r_vf(derive_seed(frozen_seed, 1));
  f.vf_w = Tensor<double>::random(r_vf, {patch, g.d_s}, true,
                                  1.0 / std::sqrt(static_cast<double>(patch)));
  f.vf_b = Tensor<double>::random(r_vf, {1, g.d_s}, true, 0.5);
  RngStream r_af(derive_seed(frozen_seed, 2));
  f.af_w = Tensor<double>::random(r_af, {win, g.d_a}, true,
                                  1.0 / std::sqrt(static_cast<double>(win)));
  f.af_b = Tensor<double>::random(r_af, {1, g.d_a}, true, 0.5);
  RngStream r_lift(derive_seed(frozen_seed, 3));
  f.lift_u = Tensor<double>::random(r_lift, {1, latent_dim}, true, 1.0);
  f.lift_b = Tensor<double>::random(r_lift, {1, latent_dim}, true, 0.1);
  RngStream r_alift(derive_seed(frozen_seed, 4));
  f.alift_w = Tensor<double>::random(r_alift, {pooled, latent_dim}, true,
                                     1.0 / std::sqrt(static_cast<double>(pooled)));
  f.alift_b = Tensor<double>::random(r_alift, {1, latent_dim}, true, 0.1);
  f.alift_winv = right_inverse(f.alift_w);
  return f;
}

// Per keyframe, split into h_s x w_s patches; frozen affine to D_s plus a
// fixed tanh. Rows ordered keyframe-major, patch row-major.
inline Tensor<double> video_featurize(const RawSample& raw, const PlanGeometry& geom,
                                      const FrozenMaps& f) {
  const std::int64_t n = raw.video.dim(0), px = raw.video.dim(1);
  if (px % geom.h_s != 0 || px % geom.w_s != 0)
    throw ShapeError("video_featurize: frame not divisible into patches");
  const std::int64_t ph = px / geom.h_s, pw = px / geom.w_s;
  Tensor<double> out(Shape{n * geom.n_v(), f.d_s});
  std::vector<double> patch(static_cast<std::size_t>(ph * pw));
  std::int64_t row = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double* frame = raw.video.data() + i * px * px;
    for (std::int64_t bh = 0; bh < geom.h_s; ++bh)
      for (std::int64_t bw = 0; bw < geom.w_s; ++bw, ++row) {
        for (std::int64_t r = 0; r < ph; ++r)
          for (std::int64_t c = 0; c < pw; ++c)
            patch[static_cast<std::size_t>(r * pw + c)] =
                frame[(bh * ph + r) * px + (bw * pw + c)];
        for (std::int64_t o = 0; o < f.d_s; ++o) {
          double s = f.vf_b.at2(0, o);
          for (std::int64_t k = 0; k < ph * pw; ++k)
            s += patch[static_cast<std::size_t>(k)] * f.vf_w.at2(k, o);
          out.at2(row, o) = std::tanh(s);
        }
      }
  }
  return out;
}

// Per chunk, split into n_a equal windows; frozen affine to D_a plus tanh.
inline Tensor<double> audio_featurize(const RawSample& raw, const PlanGeometry& geom,
                                      const FrozenMaps& f) {
  const std::int64_t m = raw.audio.dim(0), rate = raw.audio.dim(1);
  if (rate % geom.n_a != 0)
    throw ShapeError("audio_featurize: chunk not divisible into windows");
  const std::int64_t win = rate / geom.n_a;
  Tensor<double> out(Shape{m * geom.n_a, f.d_a});
  std::int64_t row = 0;
  for (std::int64_t c = 0; c < m; ++c)
    for (std::int64_t j = 0; j < geom.n_a; ++j, ++row) {
      const double* w = raw.audio.data() + c * rate + j * win;
      for (std::int64_t o = 0; o < f.d_a; ++o) {
        double s = f.af_b.at2(0, o);
        for (std::int64_t k = 0; k < win; ++k) s += w[k] * f.af_w.at2(k, o);
        out.at2(row, o) = std::tanh(s);
      }
    }
  return out;
}

struct LatentPair {
  Tensor<double> z_v;  // [T_v, H_v, W_v, d]
  Tensor<double> z_a;  // [T_a, d]
};

// Fractional-window weights pooling `src` positions into `dst` cells.
inline double pool_overlap(std::int64_t src_idx, std::int64_t dst_idx,
                           std::int64_t n_src, std::int64_t n_dst) {
  const double scale = static_cast<double>(n_src) / static_cast<double>(n_dst);
  const double lo = std::max(static_cast<double>(src_idx), scale * static_cast<double>(dst_idx));
  const double hi = std::min(static_cast<double>(src_idx + 1),
                             scale * static_cast<double>(dst_idx + 1));
  return std::max(0.0, hi - lo) / scale;
}

// Video: spatio-temporal average pool to the latent grid (one scalar per
// cell), then a frozen rank-1 affine lift to width d. Audio: kernel-4
// average pool per temporal cell, then a frozen full-rank affine lift.
inline LatentPair encode_latents(const RawSample& raw, const GridSpec& grid,
                                 const FrozenMaps& f) {
  grid.validate();
  const std::int64_t n = raw.video.dim(0), px = raw.video.dim(1);
  if (px % grid.h_v != 0 || px % grid.w_v != 0)
    throw ShapeError("encode_latents: frame not divisible into latent blocks");
  const std::int64_t bh = px / grid.h_v, bw = px / grid.w_v;

  LatentPair z{Tensor<double>(Shape{grid.t_v, grid.h_v, grid.w_v, f.d}),
               Tensor<double>(Shape{grid.t_a, f.d})};
  // block means per keyframe
  Tensor<double> bm(Shape{n, grid.h_v, grid.w_v});
  for (std::int64_t i = 0; i < n; ++i) {
    const double* frame = raw.video.data() + i * px * px;
    for (std::int64_t hb = 0; hb < grid.h_v; ++hb)
      for (std::int64_t wb = 0; wb < grid.w_v; ++wb) {
        double s = 0;
        for (std::int64_t r = 0; r < bh; ++r)
          for (std::int64_t c = 0; c < bw; ++c) s += frame[(hb * bh + r) * px + (wb * bw + c)];
        bm.at2(i * grid.h_v + hb, wb) = s / static_cast<double>(bh * bw);
      }
  }
  for (std::int64_t t = 0; t < grid.t_v; ++t)
    for (std::int64_t hb = 0; hb < grid.h_v; ++hb)
      for (std::int64_t wb = 0; wb < grid.w_v; ++wb) {
        double cell = 0;
        for (std::int64_t i = 0; i < n; ++i) {
          const double wgt = pool_overlap(i, t, n, grid.t_v);
          if (wgt > 0) cell += wgt * bm.at2(i * grid.h_v + hb, wb);
        }
        double* out = z.z_v.data() + ((t * grid.h_v + hb) * grid.w_v + wb) * f.d;
        for (std::int64_t c = 0; c < f.d; ++c)
          out[c] = cell * f.lift_u.at2(0, c) + f.lift_b.at2(0, c);
      }

  const std::int64_t total = raw.audio.numel();
  const std::int64_t cell_len = total / grid.t_a;
  if (total % grid.t_a != 0 || cell_len % kAudioPoolKernel != 0)
    throw ShapeError("encode_latents: audio length incompatible with latent grid");
  const std::int64_t pooled = cell_len / kAudioPoolKernel;
  if (pooled != f.pooled) throw ShapeError("encode_latents: pooled width mismatch");
  std::vector<double> p(static_cast<std::size_t>(pooled));
  for (std::int64_t t = 0; t < grid.t_a; ++t) {
    const double* seg = raw.audio.data() + t * cell_len;
    for (std::int64_t j = 0; j < pooled; ++j) {
      double s = 0;
      for (std::int64_t k = 0; k < kAudioPoolKernel; ++k) s += seg[j * kAudioPoolKernel + k];
      p[static_cast<std::size_t>(j)] = s / static_cast<double>(kAudioPoolKernel);
    }
    for (std::int64_t c = 0; c < f.d; ++c) {
      double s = f.alift_b.at2(0, c);
      for (std::int64_t j = 0; j < pooled; ++j) s += p[static_cast<std::size_t>(j)] * f.alift_w.at2(j, c);
      z.z_a.at2(t, c) = s;
    }
  }
  return z;
}

// Decoders (frozen, metric pathway).

inline Tensor<double> decode_video_blockmeans(const Tensor<double>& z_v,
                                              const GridSpec& grid, const FrozenMaps& f) {
  if (z_v.cols() != f.d || z_v.rows() != grid.video_latents())
    throw ShapeError("decode_video: latent shape");
  const double uu = dot(f.lift_u, f.lift_u);
  Tensor<double> bm(Shape{grid.t_v, grid.h_v, grid.w_v});
  for (std::int64_t r = 0; r < z_v.rows(); ++r) {
    double s = 0;
    for (std::int64_t c = 0; c < f.d; ++c)
      s += (z_v.data()[r * f.d + c] - f.lift_b.at2(0, c)) * f.lift_u.at2(0, c);
    bm.data()[r] = s / uu;
  }
  return bm;
}

inline Tensor<double> decode_audio_pooled(const Tensor<double>& z_a, const GridSpec& grid,
                                          const FrozenMaps& f) {
  if (z_a.cols() != f.d || z_a.rows() != grid.t_a)
    throw ShapeError("decode_audio: latent shape");
  Tensor<double> p(Shape{grid.t_a, f.pooled});
  for (std::int64_t t = 0; t < grid.t_a; ++t)
    for (std::int64_t j = 0; j < f.pooled; ++j) {
      double s = 0;
      for (std::int64_t c = 0; c < f.d; ++c)
        s += (z_a.at2(t, c) - f.alift_b.at2(0, c)) * f.alift_winv.at2(c, j);
      p.at2(t, j) = s;
    }
  return p;
}

// Intensity-weighted centroid per latent frame over the block-mean grid;
// returns normalized (x, y) plus the cell-center times in seconds.
struct TrajectorySample {
  std::vector<double> time_s, x, y;
};

inline TrajectorySample centroid_trajectory(const Tensor<double>& blockmeans,
                                            const GridSpec& grid, double duration_s) {
  TrajectorySample tr;
  for (std::int64_t t = 0; t < grid.t_v; ++t) {
    double wsum = 0, xs = 0, ys = 0;
    for (std::int64_t hb = 0; hb < grid.h_v; ++hb)
      for (std::int64_t wb = 0; wb < grid.w_v; ++wb) {
        const double w = std::max(0.0, blockmeans.data()[(t * grid.h_v + hb) * grid.w_v + wb]);
        wsum += w;
        xs += w * (static_cast<double>(wb) + 0.5) / static_cast<double>(grid.w_v);
        ys += w * (static_cast<double>(hb) + 0.5) / static_cast<double>(grid.h_v);
      }
    tr.time_s.push_back((static_cast<double>(t) + 0.5) * duration_s /
                        static_cast<double>(grid.t_v));
    if (wsum < 1e-9) {
      tr.x.push_back(-1.0);  // marks an empty frame
      tr.y.push_back(-1.0);
    } else {
      tr.x.push_back(xs / wsum);
      tr.y.push_back(ys / wsum);
    }
  }
  return tr;
}

// Zero-crossing frequency estimate for one sample window; crossing instants
// are linearly interpolated, which is much tighter than raw counts when the
// window holds only a handful of cycles.
inline double window_frequency(const double* s, std::int64_t n, double rate) {
  std::vector<double> crossings;
  for (std::int64_t i = 0; i + 1 < n; ++i) {
    const double a = s[i], b = s[i + 1];
    if ((a < 0 && b >= 0) || (a >= 0 && b < 0)) {
      const double frac = a / (a - b);
      crossings.push_back((static_cast<double>(i) + frac) / rate);
    }
  }
  if (crossings.size() >= 2) {
    const double span = crossings.back() - crossings.front();
    if (span > 0)
      return static_cast<double>(crossings.size() - 1) / (2.0 * span);
  }
  // too few crossings for interpolation: fall back to the raw count
  return static_cast<double>(crossings.size()) * rate /
         (2.0 * static_cast<double>(n));
}

// Per-cell frequency trajectory from the pooled (decimated) waveform.
inline TrajectorySample frequency_trajectory(const Tensor<double>& pooled,
                                             const GridSpec& grid, double duration_s,
                                             double raw_rate) {
  const double rate = raw_rate / static_cast<double>(kAudioPoolKernel);
  TrajectorySample tr;
  for (std::int64_t t = 0; t < grid.t_a; ++t) {
    tr.time_s.push_back((static_cast<double>(t) + 0.5) * duration_s /
                        static_cast<double>(grid.t_a));
    tr.x.push_back(window_frequency(pooled.data() + t * pooled.cols(), pooled.cols(), rate));
    tr.y.push_back(0.0);
  }
  return tr;
}

inline double interp_at(const std::vector<double>& ts, const std::vector<double>& vs,
                        double t) {
  if (ts.empty()) throw ShapeError("interp_at: empty trajectory");
  if (t <= ts.front()) return vs.front();
  if (t >= ts.back()) return vs.back();
  std::size_t i = 1;
  while (ts[i] < t) ++i;
  const double w = (t - ts[i - 1]) / (ts[i] - ts[i - 1]);
  return vs[i - 1] * (1 - w) + vs[i] * w;
}

struct Pearson {
  double r = 0.0;
  bool degenerate = false;
};

inline Pearson pearson(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) throw ShapeError("pearson: size");
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double saa = 0, sbb = 0, sab = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
    sab += (a[i] - ma) * (b[i] - mb);
  }
  Pearson p;
  if (saa < 1e-12 || sbb < 1e-12) {
    p.degenerate = true;
    return p;
  }
  p.r = sab / std::sqrt(saa * sbb);
  return p;
}

// ---------------------------------------------------------------------------
// Dataset persistence: JSONL manifest plus one BTN1 container per sample.
// ---------------------------------------------------------------------------

template <class Real>
struct Sample {
  std::int64_t id = 0;
  std::uint64_t seed = 0;
  std::string script;
  std::vector<std::int64_t> video_text, audio_text;
  Tensor<Real> video_raw, audio_raw;
  Tensor<Real> fgt_v, fgt_a;
  Tensor<Real> z0_v, z0_a;
};

template <class Real>
Sample<Real> generate_sample(std::int64_t id, std::uint64_t seed, const DataGeometry& g,
                             const FrozenMaps& frozen, const Vocab& vocab) {
  RngStream rng(seed);
  auto [spec, raw] = generate_scene(rng, g.plan, g.sp);
  Sample<Real> s;
  s.id = id;
  s.seed = seed;
  s.script = spec.to_string();
  auto [vt, at] = scene_to_text(spec, vocab);
  s.video_text = vt;
  s.audio_text = at;
  s.video_raw = raw.video.template cast<Real>();
  s.audio_raw = raw.audio.template cast<Real>();
  s.fgt_v = video_featurize(raw, g.plan, frozen).template cast<Real>();
  s.fgt_a = audio_featurize(raw, g.plan, frozen).template cast<Real>();
  const LatentPair z = encode_latents(raw, g.grid, frozen);
  s.z0_v = z.z_v.template cast<Real>();
  s.z0_a = z.z_a.template cast<Real>();
  return s;
}

template <class Real>
Container sample_to_container(const Sample<Real>& s) {
  Container c;
  c.entries.push_back(Entry::from_i64("video_text", s.video_text));
  c.entries.push_back(Entry::from_i64("audio_text", s.audio_text));
  c.entries.push_back(Entry::from_tensor("video_raw", s.video_raw));
  c.entries.push_back(Entry::from_tensor("audio_raw", s.audio_raw));
  c.entries.push_back(Entry::from_tensor("fgt_v", s.fgt_v));
  c.entries.push_back(Entry::from_tensor("fgt_a", s.fgt_a));
  c.entries.push_back(Entry::from_tensor("z0_v", s.z0_v));
  c.entries.push_back(Entry::from_tensor("z0_a", s.z0_a));
  return c;
}

template <class Real>
Sample<Real> sample_from_container(const Container& c) {
  Sample<Real> s;
  s.video_text = c.get("video_text").to_i64();
  s.audio_text = c.get("audio_text").to_i64();
  s.video_raw = c.get("video_raw").template to_tensor<Real>();
  s.audio_raw = c.get("audio_raw").template to_tensor<Real>();
  s.fgt_v = c.get("fgt_v").template to_tensor<Real>();
  s.fgt_a = c.get("fgt_a").template to_tensor<Real>();
  s.z0_v = c.get("z0_v").template to_tensor<Real>();
  s.z0_a = c.get("z0_a").template to_tensor<Real>();
  return s;
}

inline std::string sample_filename(std::int64_t id) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "sample_%06lld.btn", static_cast<long long>(id));
  return buf;
}

inline int gen_threads_from_env() {
  const char* v = std::getenv("BATON_THREADS");
  if (!v) return 1;
  const int n = std::atoi(v);
  return n < 1 ? 1 : n;
}

// Generates `count` samples; parallel workers each own a seed forked from
// the master by sample index, and files are written serially in index order,
// so output bytes never depend on BATON_THREADS.
template <class Real>
std::vector<Sample<Real>> generate_dataset(const Config& cfg, std::uint64_t master_seed,
                                           std::int64_t count, int threads) {
  const DataGeometry g = DataGeometry::from_config(cfg);
  const FrozenMaps frozen = make_frozen_maps(
      static_cast<std::uint64_t>(cfg.geti("data.frozen_seed")), g, g.latent_dim(cfg));
  const Vocab vocab;
  std::vector<Sample<Real>> out(static_cast<std::size_t>(count));
  auto work = [&](std::int64_t begin, std::int64_t end) {
    for (std::int64_t i = begin; i < end; ++i)
      out[static_cast<std::size_t>(i)] =
          generate_sample<Real>(i, derive_seed(master_seed, static_cast<std::uint64_t>(i)),
                                g, frozen, vocab);
  };
  if (threads <= 1 || count < 2) {
    work(0, count);
  } else {
    std::vector<std::thread> pool;
    const std::int64_t chunk = (count + threads - 1) / threads;
    for (int t = 0; t < threads; ++t) {
      const std::int64_t b = t * chunk, e = std::min<std::int64_t>(count, b + chunk);
      if (b >= e) break;
      pool.emplace_back(work, b, e);
    }
    for (auto& th : pool) th.join();
  }
  return out;
}

template <class Real>
void dataset_write(const std::string& dir, const std::vector<Sample<Real>>& samples) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::ofstream manifest(fs::path(dir) / "manifest.jsonl", std::ios::trunc);
  if (!manifest) throw FormatError("cannot write manifest in " + dir);
  for (const auto& s : samples) {
    const std::string fname = sample_filename(s.id);
    container_write((fs::path(dir) / fname).string(), sample_to_container(s));
    nlohmann::json j;
    j["id"] = s.id;
    j["seed"] = s.seed;
    j["script"] = s.script;
    j["files"] = {fname};
    manifest << j.dump() << "\n";
  }
}

template <class Real>
std::vector<Sample<Real>> dataset_read(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream manifest(fs::path(dir) / "manifest.jsonl");
  if (!manifest) throw FormatError("missing manifest.jsonl in " + dir);
  std::vector<Sample<Real>> out;
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const std::exception& e) {
      throw FormatError(dir + "/manifest.jsonl: bad JSON line: " + e.what());
    }
    const std::string fname = j.at("files").at(0).get<std::string>();
    Sample<Real> s = sample_from_container<Real>(
        container_read((fs::path(dir) / fname).string()));
    s.id = j.at("id").get<std::int64_t>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.script = j.at("script").get<std::string>();
    out.push_back(std::move(s));
  }
  if (out.empty()) throw FormatError("dataset in " + dir + " is empty");
  return out;
}

}  // namespace baton
