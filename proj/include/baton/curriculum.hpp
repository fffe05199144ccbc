// Three-stage training orchestration, checkpointing, and the synthetic
// evaluation metrics (sync correlation and event-script accuracy).
#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "baton/config.hpp"
#include "baton/container.hpp"
#include "baton/dit.hpp"
#include "baton/planner.hpp"
#include "baton/prompt.hpp"
#include "baton/synth.hpp"

namespace baton {

// ---------------------------------------------------------------------------
// Metrics.
// ---------------------------------------------------------------------------

struct MetricsRecord {
  std::int64_t step = 0;
  int stage = 0;
  double loss = 0;
  double plan_mse = 0;
  double fm_val = 0;
  double sync_score = 0;
  double event_acc = 0;
  double wall_ms = 0;

  std::string to_json() const {
    nlohmann::json j;
    j["step"] = step;
    j["stage"] = stage;
    j["loss"] = loss;
    j["plan_mse"] = plan_mse;
    j["fm_val"] = fm_val;
    j["sync_score"] = sync_score;
    j["event_acc"] = event_acc;
    j["wall_ms"] = wall_ms;
    return j.dump();
  }
};

using MetricsSink = std::function<void(const MetricsRecord&)>;

inline MetricsSink stream_sink(std::ostream* primary, std::ostream* secondary = nullptr) {
  return [primary, secondary](const MetricsRecord& r) {
    const std::string line = r.to_json();
    if (primary) (*primary) << line << "\n";
    if (secondary) (*secondary) << line << "\n";
  };
}

// ---------------------------------------------------------------------------
// Checkpoints: BTN1 container of named parameters (+ AdamW moments) with a
// trailing JSON metadata block carrying stage, step, the compat hash, and
// the full resolved config so checkpoints are self-describing.
// ---------------------------------------------------------------------------

template <class Real>
void checkpoint_save(const std::string& path, const ParamStore<Real>& params,
                     const AdamW<Real>* opt, const Config& cfg, int stage,
                     std::int64_t step) {
  Container c;
  for (std::size_t i = 0; i < params.size(); ++i)
    c.entries.push_back(Entry::from_tensor(params.names()[i], params.value(i)));
  if (opt) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      c.entries.push_back(Entry::from_tensor("adam.m." + params.names()[i], opt->m[i]));
      c.entries.push_back(Entry::from_tensor("adam.v." + params.names()[i], opt->v[i]));
    }
    c.entries.push_back(Entry::from_i64("adam.step", {opt->step_count}));
  }
  nlohmann::json meta;
  char hash_hex[32];
  std::snprintf(hash_hex, sizeof(hash_hex), "%016llx",
                static_cast<unsigned long long>(cfg.compat_hash()));
  meta["config_hash"] = hash_hex;
  meta["stage"] = stage;
  meta["step"] = step;
  meta["config"] = cfg.resolved_text();
  c.meta = meta.dump();
  container_write(path, c);
}

template <class Real>
void checkpoint_save(const std::string& path, const ParamStore<Real>& params,
                     std::nullptr_t, const Config& cfg, int stage, std::int64_t step) {
  checkpoint_save<Real>(path, params, static_cast<const AdamW<Real>*>(nullptr), cfg,
                        stage, step);
}

struct CheckpointMeta {
  Config cfg;
  int stage = 0;
  std::int64_t step = 0;
  std::string config_hash;
};

inline CheckpointMeta checkpoint_meta(const Container& c, const std::string& path) {
  if (c.meta.empty()) throw FormatError(path + ": checkpoint has no metadata block");
  CheckpointMeta m;
  try {
    const auto j = nlohmann::json::parse(c.meta);
    m.stage = j.at("stage").get<int>();
    m.step = j.at("step").get<std::int64_t>();
    m.config_hash = j.at("config_hash").get<std::string>();
    m.cfg = Config::defaults();
    m.cfg.apply_lines(j.at("config").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": bad checkpoint metadata: " + e.what());
  }
  char recomputed[32];
  std::snprintf(recomputed, sizeof(recomputed), "%016llx",
                static_cast<unsigned long long>(m.cfg.compat_hash()));
  if (m.config_hash != recomputed)
    throw FormatError(path + ": config hash mismatch (stored " + m.config_hash +
                      ", recomputed " + recomputed + ")");
  return m;
}

// Fills `params` from the container; every expected name must be present
// (extra names, e.g. the other component in a merged file, are ignored).
template <class Real>
void checkpoint_load_params(const Container& c, const std::string& path,
                            ParamStore<Real>& params, AdamW<Real>* opt = nullptr) {
  std::vector<std::string> missing;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& name = params.names()[i];
    const Entry* e = c.find(name);
    if (!e) {
      missing.push_back(name);
      continue;
    }
    Tensor<Real> t = e->template to_tensor<Real>();
    if (!t.same_shape(params.value(i)))
      throw FormatError(path + ": shape mismatch for '" + name + "'");
    params.value(i) = std::move(t);
  }
  if (!missing.empty()) {
    std::string msg = path + ": checkpoint is missing " +
                      std::to_string(missing.size()) + " expected parameter(s):";
    for (std::size_t i = 0; i < missing.size() && i < 8; ++i) msg += " " + missing[i];
    if (missing.size() > 8) msg += " ...";
    throw FormatError(msg);
  }
  if (opt) {
    opt->init(params);
    const Entry* st = c.find("adam.step");
    if (st) {
      opt->step_count = st->to_i64().at(0);
      for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& name = params.names()[i];
        if (const Entry* em = c.find("adam.m." + name))
          opt->m[i] = em->template to_tensor<Real>();
        if (const Entry* ev = c.find("adam.v." + name))
          opt->v[i] = ev->template to_tensor<Real>();
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Prepared samples: prompt layout, text prefix and row-major latents.
// ---------------------------------------------------------------------------

template <class Real>
struct PreparedSample {
  const Sample<Real>* s = nullptr;
  PromptLayout layout;
  std::vector<std::int64_t> text_prefix;
  Tensor<Real> z0_v, z0_a;  // [rows, d]
};

template <class Real>
std::vector<PreparedSample<Real>> prepare_samples(const std::vector<Sample<Real>>& samples,
                                                  const PlanGeometry& geom,
                                                  TagOrder order, const Vocab& vocab,
                                                  std::int64_t latent_dim) {
  std::vector<PreparedSample<Real>> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    PreparedSample<Real> p;
    p.s = &s;
    p.layout = assemble_prompt(vocab.sys_tokens(), s.video_text, s.audio_text, geom,
                               order, vocab);
    p.text_prefix.assign(p.layout.tokens.begin(),
                         p.layout.tokens.begin() + p.layout.text_len);
    p.z0_v = s.z0_v.reshaped({s.z0_v.numel() / latent_dim, latent_dim});
    p.z0_a = s.z0_a.reshaped({s.z0_a.numel() / latent_dim, latent_dim});
    out.push_back(std::move(p));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Stage configuration and the shared training loop plumbing.
// ---------------------------------------------------------------------------

struct StageConfig {
  int stage = 1;
  double lr = 1e-3;
  double weight_decay = 0.01;
  double eps = 1e-8;
  std::int64_t steps = 0;
  std::int64_t batch = 1;
  std::int64_t log_every = 100;
  std::int64_t holdout = 16;
  std::uint64_t seed = 0;
  bool skip_stage2 = false;

  static StageConfig from_config(const Config& c, int stage) {
    StageConfig s;
    s.stage = stage;
    s.lr = c.getr("train.lr");
    s.weight_decay = c.getr("train.weight_decay");
    s.eps = c.getr("train.eps");
    s.steps = stage == 1   ? c.geti("train.stage1_steps")
              : stage == 2 ? c.geti("train.stage2_steps")
                           : c.geti("train.stage3_steps");
    s.batch = c.geti("train.batch");
    s.log_every = c.geti("train.log_every");
    s.holdout = c.geti("train.holdout");
    s.seed = static_cast<std::uint64_t>(c.geti("train.seed"));
    s.skip_stage2 = c.getb("train.skip_stage2");
    return s;
  }
};

namespace detail {

inline double now_ms() {
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

template <class Real>
struct Split {
  std::vector<const PreparedSample<Real>*> train, heldout;
};

template <class Real>
Split<Real> split_heldout(const std::vector<PreparedSample<Real>>& all,
                          std::int64_t holdout) {
  if (static_cast<std::int64_t>(all.size()) <= holdout)
    throw UsageError("dataset smaller than holdout size");
  Split<Real> s;
  const std::int64_t n_train = static_cast<std::int64_t>(all.size()) - holdout;
  for (std::int64_t i = 0; i < n_train; ++i) s.train.push_back(&all[static_cast<std::size_t>(i)]);
  for (std::size_t i = static_cast<std::size_t>(n_train); i < all.size(); ++i)
    s.heldout.push_back(&all[i]);
  return s;
}

}  // namespace detail

// Per-element plan MSE of the planner over a set of samples.
template <class Real>
double plan_mse(const Planner<Real>& planner,
                const std::vector<const PreparedSample<Real>*>& set, const Vocab& vocab) {
  double total = 0;
  std::int64_t elems = 0;
  for (const auto* p : set) {
    const auto [hv, ha] = planner.plan_values(p->layout, vocab);
    total += plan_loss(hv, ha, p->s->fgt_v, p->s->fgt_a);
    elems += hv.numel() + ha.numel();
  }
  return total / static_cast<double>(elems);
}

// Deterministic per-element flow-matching validation loss; (t, z1) derive
// from the sample id so the series is comparable across steps and runs.
template <class Real>
double fm_validation(const DualDit<Real>& dit,
                     const std::vector<const PreparedSample<Real>*>& set,
                     std::function<std::pair<const Tensor<Real>*, const Tensor<Real>*>(
                         const PreparedSample<Real>&)>
                         cond_of,
                     const InjectionFlags& flags, std::uint64_t eval_seed) {
  double total = 0;
  std::int64_t elems = 0;
  for (const auto* p : set) {
    RngStream rng(derive_seed(eval_seed, static_cast<std::uint64_t>(p->s->id)));
    const double t = rng.uniform01();
    const Tensor<Real> z1_v = Tensor<Real>::random(rng, p->z0_v.shape(), true, 1.0);
    const Tensor<Real> z1_a = Tensor<Real>::random(rng, p->z0_a.shape(), true, 1.0);
    Tape<Real> tape;
    BoundParams<Real> P(tape, dit.params, false);
    const auto zv = tape.leaf(interpolate(p->z0_v, z1_v, t), false);
    const auto za = tape.leaf(interpolate(p->z0_a, z1_a, t), false);
    typename Tape<Real>::Id cv = -1, ca = -1;
    if (flags.conditioning != Conditioning::text_only) {
      const auto [cvt, cat] = cond_of(*p);
      cv = tape.leaf(*cvt, false);
      ca = tape.leaf(*cat, false);
    }
    const auto out = dit.forward(tape, P, zv, za, t, p->text_prefix, cv, ca, flags);
    total += fm_loss(tape.val(out.v_v), tape.val(out.v_a), p->z0_v, p->z0_a, z1_v, z1_a);
    elems += p->z0_v.numel() + p->z0_a.numel();
  }
  return total / static_cast<double>(elems);
}

// ---------------------------------------------------------------------------
// Stage 1: planner pretraining on frozen featurizer targets.
// ---------------------------------------------------------------------------

template <class Real>
void train_stage1(Planner<Real>& planner, const std::vector<PreparedSample<Real>>& data,
                  const StageConfig& sc, const Vocab& vocab, const MetricsSink& sink,
                  const Config& cfg, const std::string& ckpt_out) {
  const auto split = detail::split_heldout(data, sc.holdout);
  AdamW<Real> opt;
  opt.lr = sc.lr;
  opt.weight_decay = sc.weight_decay;
  opt.eps = sc.eps;
  opt.init(planner.params);
  RngStream order_rng(derive_seed(sc.seed, 101));
  const double t0 = detail::now_ms();

  auto record = [&](std::int64_t step, double loss) {
    MetricsRecord r;
    r.step = step;
    r.stage = 1;
    r.loss = loss;
    r.plan_mse = plan_mse(planner, split.heldout, vocab);
    r.wall_ms = detail::now_ms() - t0;
    sink(r);
  };

  ParamStore<Real> last_good = planner.params;
  for (std::int64_t step = 0; step < sc.steps; ++step) {
    double loss_val = 0;
    std::vector<Tensor<Real>> grads;
    for (std::int64_t b = 0; b < sc.batch; ++b) {
      const auto* p = split.train[order_rng.below(split.train.size())];
      Tape<Real> tape;
      BoundParams<Real> P(tape, planner.params, true);
      const auto out = planner.plan(tape, P, p->layout, vocab);
      const auto loss = plan_loss_tape(tape, out.h_sem_v, out.h_sem_a, p->s->fgt_v,
                                       p->s->fgt_a);
      tape.backward(loss);
      loss_val += static_cast<double>(tape.val(loss)[0]);
      auto g = P.collect_grads();
      if (grads.empty())
        grads = std::move(g);
      else
        for (std::size_t i = 0; i < grads.size(); ++i) grads[i] = grads[i] + g[i];
    }
    loss_val /= static_cast<double>(sc.batch);
    if (step == 0) record(0, loss_val);
    if (!std::isfinite(loss_val)) {
      planner.params = last_good;
      if (!ckpt_out.empty()) checkpoint_save(ckpt_out, planner.params, &opt, cfg, 1, step);
      throw NumericError("stage 1 diverged at step " + std::to_string(step) +
                         "; last good checkpoint kept");
    }
    opt.step(planner.params, grads);
    last_good = planner.params;
    if ((step + 1) % sc.log_every == 0 || step + 1 == sc.steps) record(step + 1, loss_val);
  }
  if (!ckpt_out.empty()) checkpoint_save(ckpt_out, planner.params, &opt, cfg, 1, sc.steps);
}

// ---------------------------------------------------------------------------
// Stages 2 and 3 share the flow-matching loop; they differ only in the
// conditioning source (ground-truth features vs frozen-planner predictions).
// ---------------------------------------------------------------------------

template <class Real>
void train_fm_stage(DualDit<Real>& dit,
                    const std::vector<PreparedSample<Real>>& data, const StageConfig& sc,
                    std::function<std::pair<const Tensor<Real>*, const Tensor<Real>*>(
                        const PreparedSample<Real>&)>
                        cond_of,
                    const InjectionFlags& flags, const MetricsSink& sink,
                    const Config& cfg, const std::string& ckpt_out) {
  const auto split = detail::split_heldout(data, sc.holdout);
  AdamW<Real> opt;
  opt.lr = sc.lr;
  opt.weight_decay = sc.weight_decay;
  opt.eps = sc.eps;
  opt.init(dit.params);
  RngStream step_rng(derive_seed(sc.seed, 200 + sc.stage));
  const std::uint64_t eval_seed = derive_seed(sc.seed, 300 + sc.stage);
  const double t0 = detail::now_ms();

  auto record = [&](std::int64_t step, double loss) {
    MetricsRecord r;
    r.step = step;
    r.stage = sc.stage;
    r.loss = loss;
    r.fm_val = fm_validation(dit, split.heldout, cond_of, flags, eval_seed);
    r.wall_ms = detail::now_ms() - t0;
    sink(r);
  };

  ParamStore<Real> last_good = dit.params;
  for (std::int64_t step = 0; step < sc.steps; ++step) {
    double loss_val = 0;
    std::vector<Tensor<Real>> grads;
    for (std::int64_t b = 0; b < sc.batch; ++b) {
      const auto* p = split.train[step_rng.below(split.train.size())];
      const double t = step_rng.uniform01();  // t ~ U[0,1]
      const Tensor<Real> z1_v = Tensor<Real>::random(step_rng, p->z0_v.shape(), true, 1.0);
      const Tensor<Real> z1_a = Tensor<Real>::random(step_rng, p->z0_a.shape(), true, 1.0);
      Tape<Real> tape;
      BoundParams<Real> P(tape, dit.params, true);
      const auto zv = tape.leaf(interpolate(p->z0_v, z1_v, t), false);
      const auto za = tape.leaf(interpolate(p->z0_a, z1_a, t), false);
      typename Tape<Real>::Id cv = -1, ca = -1;
      if (flags.conditioning != Conditioning::text_only) {
        const auto [cvt, cat] = cond_of(*p);
        cv = tape.leaf(*cvt, false);
        ca = tape.leaf(*cat, false);
      }
      const auto out = dit.forward(tape, P, zv, za, t, p->text_prefix, cv, ca, flags);
      const auto loss = fm_loss_tape(tape, out.v_v, out.v_a, p->z0_v, p->z0_a, z1_v, z1_a);
      tape.backward(loss);
      loss_val += static_cast<double>(tape.val(loss)[0]);
      auto g = P.collect_grads();
      if (grads.empty())
        grads = std::move(g);
      else
        for (std::size_t i = 0; i < grads.size(); ++i) grads[i] = grads[i] + g[i];
    }
    loss_val /= static_cast<double>(sc.batch);
    if (step == 0) record(0, loss_val);
    if (!std::isfinite(loss_val)) {
      dit.params = last_good;
      if (!ckpt_out.empty())
        checkpoint_save(ckpt_out, dit.params, &opt, cfg, sc.stage, step);
      throw NumericError("stage " + std::to_string(sc.stage) + " diverged at step " +
                         std::to_string(step) + "; last good checkpoint kept");
    }
    opt.step(dit.params, grads);
    last_good = dit.params;
    if ((step + 1) % sc.log_every == 0 || step + 1 == sc.steps) record(step + 1, loss_val);
  }
  if (!ckpt_out.empty())
    checkpoint_save(ckpt_out, dit.params, &opt, cfg, sc.stage, sc.steps);
}

template <class Real>
void train_stage2(DualDit<Real>& dit, const std::vector<PreparedSample<Real>>& data,
                  const StageConfig& sc, const InjectionFlags& flags,
                  const MetricsSink& sink, const Config& cfg,
                  const std::string& ckpt_out) {
  // ground-truth features straight into the latent MLPs; the planner is
  // never even constructed here
  train_fm_stage<Real>(
      dit, data, sc,
      [](const PreparedSample<Real>& p) {
        return std::make_pair(&p.s->fgt_v, &p.s->fgt_a);
      },
      flags, sink, cfg, ckpt_out);
}

// Stage 3: planner frozen (asserted by hash), DiT consumes its predictions.
template <class Real>
void train_stage3(const Planner<Real>& planner, DualDit<Real>& dit,
                  const std::vector<PreparedSample<Real>>& data, const StageConfig& sc,
                  const InjectionFlags& flags, const Vocab& vocab,
                  const MetricsSink& sink, const Config& cfg,
                  const std::string& ckpt_out) {
  const std::uint64_t planner_hash = planner.params.content_hash();
  // planner outputs are deterministic per sample; compute once
  std::vector<std::pair<Tensor<Real>, Tensor<Real>>> planned;
  planned.reserve(data.size());
  for (const auto& p : data) planned.push_back(planner.plan_values(p.layout, vocab));

  train_fm_stage<Real>(
      dit, data, sc,
      [&planned, &data](const PreparedSample<Real>& p) {
        const std::size_t idx = static_cast<std::size_t>(&p - data.data());
        return std::make_pair(&planned[idx].first, &planned[idx].second);
      },
      flags, sink, cfg, ckpt_out);
  if (planner.params.content_hash() != planner_hash)
    throw NumericError("stage 3 violated the frozen-planner contract");
}

// ---------------------------------------------------------------------------
// Sampling and evaluation.
// ---------------------------------------------------------------------------

template <class Real>
std::pair<Tensor<Real>, Tensor<Real>> sample_latents(
    const DualDit<Real>& dit, const PreparedSample<Real>& p,
    const Tensor<Real>* h_sem_v, const Tensor<Real>* h_sem_a,
    const InjectionFlags& flags, int steps, RngStream& rng) {
  Tensor<Real> z_v = Tensor<Real>::random(rng, {dit.grid.video_latents(), dit.cfg.d},
                                          true, 1.0);
  Tensor<Real> z_a = Tensor<Real>::random(rng, {dit.grid.t_a, dit.cfg.d}, true, 1.0);
  return euler_integrate(std::move(z_v), std::move(z_a), steps,
                         [&](const Tensor<Real>& zv, const Tensor<Real>& za, double t) {
                           return dit.velocity(zv, za, t, p.text_prefix, h_sem_v,
                                               h_sem_a, flags);
                         });
}

struct SyncResult {
  double score = 0;
  bool degenerate = false;
};

// Correlation between the decoded centroid trajectory and the decoded tone
// frequency trajectory (normalized by the tone law), resampled onto the
// keyframe timeline.
inline SyncResult sync_score(const Tensor<double>& z_v, const Tensor<double>& z_a,
                             const GridSpec& grid, const FrozenMaps& frozen,
                             const PlanGeometry& geom, const SynthParams& sp) {
  const double dur = static_cast<double>(geom.duration_s);
  const auto bm = decode_video_blockmeans(z_v, grid, frozen);
  const auto ctr = centroid_trajectory(bm, grid, dur);
  const auto pooled = decode_audio_pooled(z_a, grid, frozen);
  const auto ft = frequency_trajectory(pooled, grid, dur, static_cast<double>(sp.audio_rate));

  // drop empty-frame markers
  std::vector<double> ts, xs;
  for (std::size_t i = 0; i < ctr.x.size(); ++i)
    if (ctr.x[i] >= 0) {
      ts.push_back(ctr.time_s[i]);
      xs.push_back(ctr.x[i]);
    }
  SyncResult r;
  if (ts.size() < 2) {
    r.degenerate = true;
    return r;
  }
  std::vector<double> xk, fk;
  for (std::int64_t i = 0; i < geom.keyframes(); ++i) {
    const double tk = static_cast<double>(i) * dur / static_cast<double>(geom.keyframes());
    xk.push_back(interp_at(ts, xs, tk));
    fk.push_back((interp_at(ft.time_s, ft.x, tk) - sp.f0) / sp.alpha);
  }
  const Pearson p = pearson(xk, fk);
  if (p.degenerate) {
    r.degenerate = true;
    return r;
  }
  r.score = std::clamp(p.r, -1.0, 1.0);
  return r;
}

// Frozen rule-based probe: mean velocity per (equal) event segment, measured
// inside the segment away from its corners, thresholded into a motion code.
constexpr double kProbeInset = 0.2;
constexpr double kProbeHoldThreshold = 0.125;

inline std::vector<MotionCode> classify_script(const TrajectorySample& tr,
                                               std::int64_t k, double duration_s) {
  std::vector<MotionCode> codes;
  for (std::int64_t e = 0; e < k; ++e) {
    const double dur = duration_s / static_cast<double>(k);
    const double t0 = (static_cast<double>(e) + kProbeInset) * dur;
    const double t1 = (static_cast<double>(e) + 1.0 - kProbeInset) * dur;
    const double vx = (interp_at(tr.time_s, tr.x, t1) - interp_at(tr.time_s, tr.x, t0)) /
                      (t1 - t0);
    const double vy = (interp_at(tr.time_s, tr.y, t1) - interp_at(tr.time_s, tr.y, t0)) /
                      (t1 - t0);
    if (std::abs(vx) < kProbeHoldThreshold && std::abs(vy) < kProbeHoldThreshold)
      codes.push_back(MotionCode::hold);
    else if (std::abs(vx) >= std::abs(vy))
      codes.push_back(vx > 0 ? MotionCode::right : MotionCode::left);
    else
      codes.push_back(vy > 0 ? MotionCode::down : MotionCode::up);
  }
  return codes;
}

inline bool event_match(const Tensor<double>& z_v, const SceneSpec& spec,
                        const GridSpec& grid, const FrozenMaps& frozen) {
  const auto bm = decode_video_blockmeans(z_v, grid, frozen);
  const auto tr = centroid_trajectory(bm, grid, static_cast<double>(spec.duration_s));
  for (double x : tr.x)
    if (x < 0) return false;  // empty frame: no square decoded
  const auto codes = classify_script(tr, static_cast<std::int64_t>(spec.events.size()),
                                     static_cast<double>(spec.duration_s));
  for (std::size_t i = 0; i < codes.size(); ++i)
    if (codes[i] != spec.events[i].code) return false;
  return true;
}

// Per-sample evaluation detail, kept for directional comparisons.
struct EvalDetail {
  std::vector<double> sync;
  std::vector<int> event_hit;
  std::vector<int> degenerate;
};

template <class Real>
MetricsRecord evaluate(const Planner<Real>* planner, const DualDit<Real>& dit,
                       const std::vector<PreparedSample<Real>>& heldout,
                       const DataGeometry& g, const FrozenMaps& frozen,
                       const Vocab& vocab, const InjectionFlags& flags, int steps,
                       std::uint64_t eval_seed, EvalDetail* out_detail = nullptr,
                       std::function<std::pair<Tensor<Real>, Tensor<Real>>(
                           const PreparedSample<Real>&)>
                           plan_override = nullptr) {
  if (heldout.empty()) throw UsageError("evaluate: empty held-out set");
  MetricsRecord r;
  r.stage = 0;
  const double t0 = detail::now_ms();

  double plan_total = 0;
  std::int64_t plan_elems = 0;
  double sync_sum = 0;
  std::int64_t event_hits = 0;

  std::vector<const PreparedSample<Real>*> set;
  for (const auto& p : heldout) set.push_back(&p);

  std::vector<std::pair<Tensor<Real>, Tensor<Real>>> planned;
  planned.reserve(heldout.size());
  for (const auto& p : heldout) {
    if (plan_override)
      planned.push_back(plan_override(p));
    else if (planner)
      planned.push_back(planner->plan_values(p.layout, vocab));
    else
      planned.push_back({p.s->fgt_v, p.s->fgt_a});
    plan_total += plan_loss(planned.back().first, planned.back().second, p.s->fgt_v,
                            p.s->fgt_a);
    plan_elems += p.s->fgt_v.numel() + p.s->fgt_a.numel();
  }
  r.plan_mse = plan_total / static_cast<double>(plan_elems);

  r.fm_val = fm_validation<Real>(
      dit, set,
      [&planned, &heldout](const PreparedSample<Real>& p) {
        const std::size_t idx = static_cast<std::size_t>(&p - heldout.data());
        return std::make_pair(&planned[idx].first, &planned[idx].second);
      },
      flags, eval_seed);

  for (std::size_t i = 0; i < heldout.size(); ++i) {
    const auto& p = heldout[i];
    RngStream rng(derive_seed(eval_seed, 7000 + static_cast<std::uint64_t>(p.s->id)));
    const auto [zv, za] =
        sample_latents(dit, p, &planned[i].first, &planned[i].second, flags, steps, rng);
    const Tensor<double> zvd = zv.template cast<double>();
    const Tensor<double> zad = za.template cast<double>();
    const SyncResult sr = sync_score(zvd, zad, g.grid, frozen, g.plan, g.sp);
    const SceneSpec spec =
        text_to_scene(p.s->video_text, vocab, g.plan.duration_s, g.sp.f0, g.sp.alpha);
    const bool hit = event_match(zvd, spec, g.grid, frozen);
    sync_sum += sr.score;
    event_hits += hit ? 1 : 0;
    if (out_detail) {
      out_detail->sync.push_back(sr.score);
      out_detail->event_hit.push_back(hit ? 1 : 0);
      out_detail->degenerate.push_back(sr.degenerate ? 1 : 0);
    }
  }
  r.sync_score = sync_sum / static_cast<double>(heldout.size());
  r.event_acc = static_cast<double>(event_hits) / static_cast<double>(heldout.size());
  r.wall_ms = detail::now_ms() - t0;
  return r;
}

}  // namespace baton
