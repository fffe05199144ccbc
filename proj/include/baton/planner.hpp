// VA-Planner surrogate: a small causal transformer over the prompt layout,
// pad-position hidden-state extraction, dual semantic alignment towers with
// timestamp RoPE, and the plan regression loss.
#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "baton/config.hpp"
#include "baton/nn.hpp"
#include "baton/prompt.hpp"
#include "baton/rope.hpp"
#include "baton/tape.hpp"
#include "baton/tensor.hpp"

namespace baton {

// ---------------------------------------------------------------------------
// Timestamp assignment. Video: keyframe i covers i*M/N seconds and all n_v
// spatial tokens of that keyframe share the timestamp. Audio: chunk m, slot j
// sits at m + j/n_a.
// ---------------------------------------------------------------------------

inline std::vector<double> assign_video_timestamps(const PlanGeometry& geom) {
  geom.validate();
  std::vector<double> tau;
  tau.reserve(static_cast<std::size_t>(geom.video_tokens()));
  const double scale = static_cast<double>(geom.duration_s) /
                       static_cast<double>(geom.keyframes());
  for (std::int64_t i = 0; i < geom.keyframes(); ++i)
    for (std::int64_t j = 0; j < geom.n_v(); ++j)
      tau.push_back(static_cast<double>(i) * scale);
  return tau;
}

inline std::vector<double> assign_audio_timestamps(const PlanGeometry& geom) {
  geom.validate();
  std::vector<double> tau;
  tau.reserve(static_cast<std::size_t>(geom.audio_tokens()));
  for (std::int64_t m = 0; m < geom.duration_s; ++m)
    for (std::int64_t j = 0; j < geom.n_a; ++j)
      tau.push_back(static_cast<double>(m) +
                    static_cast<double>(j) / static_cast<double>(geom.n_a));
  return tau;
}

// Cross-modal attention primitive with timestamp RoPE: queries and keys are
// rotated per head by their timestamps, values stay unrotated.
template <class Real>
Tensor<Real> cmattn_timestamped(const Tensor<Real>& q_feat, const Tensor<Real>& kv_feat,
                                const std::vector<double>& tau_q,
                                const std::vector<double>& tau_k,
                                const RopeConfig& cfg) {
  const std::int64_t width = q_feat.cols();
  if (width != kv_feat.cols() || width % cfg.head_dim != 0)
    throw ShapeError("cmattn: feature width must be a multiple of head_dim");
  if (static_cast<std::int64_t>(tau_q.size()) != q_feat.rows() ||
      static_cast<std::int64_t>(tau_k.size()) != kv_feat.rows())
    throw ShapeError("cmattn: timestamp count mismatch");
  const std::int64_t heads = width / cfg.head_dim;
  const auto qt = rope_tables_1d<Real>(tau_q, cfg);
  const auto kt = rope_tables_1d<Real>(tau_k, cfg);
  Tensor<Real> out(Shape{q_feat.rows(), width});
  for (std::int64_t h = 0; h < heads; ++h) {
    Tensor<Real> qh(Shape{q_feat.rows(), cfg.head_dim});
    Tensor<Real> kh(Shape{kv_feat.rows(), cfg.head_dim});
    Tensor<Real> vh(Shape{kv_feat.rows(), cfg.head_dim});
    for (std::int64_t r = 0; r < q_feat.rows(); ++r)
      for (std::int64_t c = 0; c < cfg.head_dim; ++c)
        qh.at2(r, c) = q_feat.at2(r, h * cfg.head_dim + c);
    for (std::int64_t r = 0; r < kv_feat.rows(); ++r)
      for (std::int64_t c = 0; c < cfg.head_dim; ++c) {
        kh.at2(r, c) = kv_feat.at2(r, h * cfg.head_dim + c);
        vh.at2(r, c) = kv_feat.at2(r, h * cfg.head_dim + c);
      }
    const Tensor<Real> o = attention(apply_tables(qh, qt), apply_tables(kh, kt), vh);
    for (std::int64_t r = 0; r < out.rows(); ++r)
      for (std::int64_t c = 0; c < cfg.head_dim; ++c)
        out.at2(r, h * cfg.head_dim + c) = o.at2(r, c);
  }
  return out;
}

// Sum of squared errors over all video and all audio planned tokens.
template <class Real>
double plan_loss(const Tensor<Real>& pred_v, const Tensor<Real>& pred_a,
                 const Tensor<Real>& target_v, const Tensor<Real>& target_a) {
  if (!pred_v.same_shape(target_v) || !pred_a.same_shape(target_a))
    throw ShapeError("plan_loss: shape mismatch");
  double s = 0;
  for (std::int64_t i = 0; i < pred_v.numel(); ++i) {
    const double d = static_cast<double>(pred_v[i]) - static_cast<double>(target_v[i]);
    s += d * d;
  }
  for (std::int64_t i = 0; i < pred_a.numel(); ++i) {
    const double d = static_cast<double>(pred_a[i]) - static_cast<double>(target_a[i]);
    s += d * d;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Parameter binding: creates tape leaves for store parameters on demand and
// reads gradients back in store order after backward.
// ---------------------------------------------------------------------------

template <class Real>
class BoundParams {
 public:
  BoundParams(Tape<Real>& tape, const ParamStore<Real>& store, bool trainable)
      : tape_(&tape), store_(&store), trainable_(trainable) {}

  typename Tape<Real>::Id operator[](const std::string& name) {
    auto it = ids_.find(name);
    if (it != ids_.end()) return it->second;
    const auto id = tape_->leaf(store_->at(name), trainable_);
    ids_[name] = id;
    return id;
  }

  // Gradients aligned with store order; zeros for parameters not touched by
  // this forward pass.
  std::vector<Tensor<Real>> collect_grads() const {
    std::vector<Tensor<Real>> out;
    out.reserve(store_->size());
    for (std::size_t i = 0; i < store_->size(); ++i) {
      const auto& name = store_->names()[i];
      auto it = ids_.find(name);
      if (it != ids_.end() && tape_->grad(it->second).numel() > 0)
        out.push_back(tape_->grad(it->second));
      else
        out.push_back(Tensor<Real>(store_->value(i).shape()));
    }
    return out;
  }

 private:
  Tape<Real>* tape_;
  const ParamStore<Real>* store_;
  bool trainable_;
  std::unordered_map<std::string, typename Tape<Real>::Id> ids_;
};

// Multi-head attention on the tape. Optional rope tables rotate q/k per head
// (tables are head-width and shared across heads); values are never rotated.
template <class Real>
typename Tape<Real>::Id mha(Tape<Real>& tape, BoundParams<Real>& P,
                            const std::string& prefix, typename Tape<Real>::Id x_q,
                            typename Tape<Real>::Id x_kv, std::int64_t heads,
                            const RopeTables<Real>* q_rope = nullptr,
                            const RopeTables<Real>* k_rope = nullptr,
                            const std::vector<std::uint8_t>* keep = nullptr) {
  const std::int64_t width = tape.val(x_q).cols();
  if (width % heads != 0) throw ShapeError("mha: width not divisible by heads");
  const std::int64_t dh = width / heads;
  const auto q = tape.add_row(tape.matmul(x_q, P[prefix + ".wq"]), P[prefix + ".bq"]);
  const auto k = tape.add_row(tape.matmul(x_kv, P[prefix + ".wk"]), P[prefix + ".bk"]);
  const auto v = tape.add_row(tape.matmul(x_kv, P[prefix + ".wv"]), P[prefix + ".bv"]);
  std::vector<typename Tape<Real>::Id> heads_out;
  for (std::int64_t h = 0; h < heads; ++h) {
    auto qh = tape.slice_cols(q, h * dh, (h + 1) * dh);
    auto kh = tape.slice_cols(k, h * dh, (h + 1) * dh);
    const auto vh = tape.slice_cols(v, h * dh, (h + 1) * dh);
    if (q_rope) qh = tape.rope_rows(qh, q_rope->cos_t, q_rope->sin_t);
    if (k_rope) kh = tape.rope_rows(kh, k_rope->cos_t, k_rope->sin_t);
    const auto s = tape.scale(tape.matmul_nt(qh, kh),
                              static_cast<Real>(1.0 / std::sqrt(static_cast<double>(dh))));
    const auto p = tape.softmax_rows(s, keep);
    heads_out.push_back(tape.matmul(p, vh));
  }
  const auto o = tape.concat_cols(heads_out);
  return tape.add_row(tape.matmul(o, P[prefix + ".wo"]), P[prefix + ".bo"]);
}

template <class Real>
typename Tape<Real>::Id mlp2(Tape<Real>& tape, BoundParams<Real>& P,
                             const std::string& prefix, typename Tape<Real>::Id x) {
  const auto h = tape.gelu(tape.add_row(tape.matmul(x, P[prefix + ".w1"]), P[prefix + ".b1"]));
  return tape.add_row(tape.matmul(h, P[prefix + ".w2"]), P[prefix + ".b2"]);
}

// ---------------------------------------------------------------------------
// Planner model.
// ---------------------------------------------------------------------------

struct PlannerConfig {
  std::int64_t vocab_size = 0;
  std::int64_t dim = 64;
  std::int64_t blocks = 4;
  std::int64_t heads = 4;
  std::int64_t tower_heads = 4;
  std::int64_t d_s = 16;
  std::int64_t d_a = 8;
  double theta = 10000.0;
  bool tower = true;
  bool learnable_query = true;
  bool tower_rope = true;

  static PlannerConfig from_config(const Config& c, const Vocab& vocab) {
    PlannerConfig p;
    p.vocab_size = vocab.size();
    p.dim = c.geti("planner.dim");
    p.blocks = c.geti("planner.blocks");
    p.heads = c.geti("planner.heads");
    p.tower_heads = c.geti("planner.tower_heads");
    p.d_s = c.geti("planner.d_s");
    p.d_a = c.geti("planner.d_a");
    p.theta = c.getr("rope.theta");
    p.tower = c.getb("planner.tower");
    p.learnable_query = c.getb("planner.learnable_query");
    p.tower_rope = c.getb("planner.tower_rope");
    if (p.dim % p.heads != 0 || p.dim % p.tower_heads != 0)
      throw UsageError("planner.dim must be divisible by head counts");
    if ((p.dim / p.heads) % 2 != 0 || (p.dim / p.tower_heads) % 2 != 0)
      throw UsageError("planner head_dim must be even");
    return p;
  }
};

template <class Real>
struct Planner {
  PlannerConfig cfg;
  PlanGeometry geom;
  ParamStore<Real> params;

  using Id = typename Tape<Real>::Id;

  static Planner init(const PlannerConfig& cfg, const PlanGeometry& geom,
                      std::uint64_t seed) {
    Planner m;
    m.cfg = cfg;
    m.geom = geom;
    RngStream rng(derive_seed(seed, 11));
    auto w = [&](const std::string& name, Shape s) {
      m.params.add(name, Tensor<Real>::random(rng, std::move(s), true, 0.02));
    };
    auto zeros = [&](const std::string& name, Shape s) {
      m.params.add(name, Tensor<Real>(std::move(s)));
    };
    auto ones = [&](const std::string& name, Shape s) {
      m.params.add(name, Tensor<Real>(std::move(s), Real(1)));
    };
    auto attn_params = [&](const std::string& p, std::int64_t d) {
      w(p + ".wq", {d, d});
      zeros(p + ".bq", {1, d});
      w(p + ".wk", {d, d});
      zeros(p + ".bk", {1, d});
      w(p + ".wv", {d, d});
      zeros(p + ".bv", {1, d});
      w(p + ".wo", {d, d});
      zeros(p + ".bo", {1, d});
    };

    const std::int64_t d = cfg.dim;
    w("planner.lm.embed", {cfg.vocab_size, d});
    for (std::int64_t b = 0; b < cfg.blocks; ++b) {
      const std::string p = "planner.lm.blk" + std::to_string(b);
      ones(p + ".ln1.g", {1, d});
      zeros(p + ".ln1.b", {1, d});
      attn_params(p + ".attn", d);
      ones(p + ".ln2.g", {1, d});
      zeros(p + ".ln2.b", {1, d});
      w(p + ".ff.w1", {d, 4 * d});
      zeros(p + ".ff.b1", {1, 4 * d});
      w(p + ".ff.w2", {4 * d, d});
      zeros(p + ".ff.b2", {1, d});
    }
    ones("planner.lm.lnf.g", {1, d});
    zeros("planner.lm.lnf.b", {1, d});

    auto tower = [&](const std::string& p, std::int64_t query_len, std::int64_t d_out) {
      if (cfg.learnable_query) w(p + ".query", {query_len, d});
      attn_params(p + ".cattn", d);
      if (cfg.tower) attn_params(p + ".cmattn", d);
      w(p + ".smlp.w1", {d, d});
      zeros(p + ".smlp.b1", {1, d});
      w(p + ".smlp.w2", {d, d_out});
      zeros(p + ".smlp.b2", {1, d_out});
    };
    tower("planner.tower_v", geom.video_tokens(), cfg.d_s);
    tower("planner.tower_a", geom.audio_tokens(), cfg.d_a);
    return m;
  }

  // Causal LM over embedded rows (one row per token).
  Id lm_forward_embedded(Tape<Real>& tape, BoundParams<Real>& P, Id x) const {
    const std::int64_t n = tape.val(x).rows();
    const std::int64_t dh = cfg.dim / cfg.heads;
    std::vector<double> pos(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) pos[static_cast<std::size_t>(i)] = static_cast<double>(i);
    const auto rope = rope_tables_1d<Real>(pos, RopeConfig::oned(dh, cfg.theta));
    // position i attends to positions <= i
    std::vector<std::uint8_t> causal(static_cast<std::size_t>(n * n), 0);
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j <= i; ++j) causal[static_cast<std::size_t>(i * n + j)] = 1;

    for (std::int64_t b = 0; b < cfg.blocks; ++b) {
      const std::string p = "planner.lm.blk" + std::to_string(b);
      const auto h1 = tape.layernorm(x, P[p + ".ln1.g"], P[p + ".ln1.b"]);
      x = tape.add(x, mha(tape, P, p + ".attn", h1, h1, cfg.heads, &rope, &rope, &causal));
      const auto h2 = tape.layernorm(x, P[p + ".ln2.g"], P[p + ".ln2.b"]);
      x = tape.add(x, mlp2(tape, P, p + ".ff", h2));
    }
    return tape.layernorm(x, P["planner.lm.lnf.g"], P["planner.lm.lnf.b"]);
  }

  Id lm_forward(Tape<Real>& tape, BoundParams<Real>& P,
                const std::vector<std::int64_t>& ids) const {
    for (auto id : ids)
      if (id < 0 || id >= cfg.vocab_size) throw ShapeError("lm_forward: id out of vocab");
    const auto x = tape.gather_rows(P["planner.lm.embed"], ids);
    return lm_forward_embedded(tape, P, x);
  }

  struct PlanOut {
    Id h_sem_v, h_sem_a;
    Id h_v, h_a;          // extracted pad hidden states
    Id cattn_v, cattn_a;  // pre-exchange tower features
  };

  // Full planning pass: LM -> pad extraction -> both CAttns -> CMAttn
  // exchange (the towers swap their pre-exchange features) -> Sem-MLPs.
  PlanOut plan(Tape<Real>& tape, BoundParams<Real>& P, const PromptLayout& layout,
               const Vocab& vocab, double tau_shift = 0.0) const {
    const auto hidden = lm_forward(tape, P, layout.tokens);
    return plan_from_hidden(tape, P, hidden, layout, vocab, tau_shift);
  }

  // tau_shift adds a global offset to every timestamp on both modalities;
  // tower outputs must be invariant to it (relative-position property).
  PlanOut plan_from_hidden(Tape<Real>& tape, BoundParams<Real>& P, Id hidden,
                           const PromptLayout& layout, const Vocab& vocab,
                           double tau_shift = 0.0) const {
    const PadSpans spans = pad_spans(layout, vocab);
    PlanOut out{};
    out.h_v = tape.gather_rows(hidden, spans.video);
    out.h_a = tape.gather_rows(hidden, spans.audio);

    auto tau_v = assign_video_timestamps(geom);
    auto tau_a = assign_audio_timestamps(geom);
    for (auto& t : tau_v) t += tau_shift;
    for (auto& t : tau_a) t += tau_shift;
    const std::int64_t dh = cfg.dim / cfg.tower_heads;
    const auto cfg1d = RopeConfig::oned(dh, cfg.theta);
    const auto rope_v = rope_tables_1d<Real>(tau_v, cfg1d);
    const auto rope_a = rope_tables_1d<Real>(tau_a, cfg1d);

    const auto q_v = cfg.learnable_query ? P["planner.tower_v.query"] : out.h_v;
    const auto q_a = cfg.learnable_query ? P["planner.tower_a.query"] : out.h_a;
    out.cattn_v = mha(tape, P, "planner.tower_v.cattn", q_v, out.h_v, cfg.tower_heads);
    out.cattn_a = mha(tape, P, "planner.tower_a.cattn", q_a, out.h_a, cfg.tower_heads);

    Id pre_v = out.cattn_v, pre_a = out.cattn_a;
    if (cfg.tower) {
      const RopeTables<Real>* rv = cfg.tower_rope ? &rope_v : nullptr;
      const RopeTables<Real>* ra = cfg.tower_rope ? &rope_a : nullptr;
      pre_v = mha(tape, P, "planner.tower_v.cmattn", out.cattn_v, out.cattn_a,
                  cfg.tower_heads, rv, ra);
      pre_a = mha(tape, P, "planner.tower_a.cmattn", out.cattn_a, out.cattn_v,
                  cfg.tower_heads, ra, rv);
    }
    out.h_sem_v = mlp2(tape, P, "planner.tower_v.smlp", pre_v);
    out.h_sem_a = mlp2(tape, P, "planner.tower_a.smlp", pre_a);
    return out;
  }

  // Convenience: values only, no gradients.
  std::pair<Tensor<Real>, Tensor<Real>> plan_values(const PromptLayout& layout,
                                                    const Vocab& vocab,
                                                    double tau_shift = 0.0) const {
    Tape<Real> tape;
    BoundParams<Real> P(tape, params, false);
    const auto out = plan(tape, P, layout, vocab, tau_shift);
    return {tape.val(out.h_sem_v), tape.val(out.h_sem_a)};
  }
};

// Tape route for the plan loss (Eq.-style double sums reduce to a sum of
// squared errors over every planned token coordinate).
template <class Real>
typename Tape<Real>::Id plan_loss_tape(Tape<Real>& tape, typename Tape<Real>::Id pred_v,
                                       typename Tape<Real>::Id pred_a,
                                       const Tensor<Real>& target_v,
                                       const Tensor<Real>& target_a) {
  return tape.add(tape.sum_sq_diff(pred_v, target_v), tape.sum_sq_diff(pred_a, target_a));
}

}  // namespace baton
