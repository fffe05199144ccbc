#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>

#include "baton/curriculum.hpp"
#include "baton/synth.hpp"
#include "baton/verify.hpp"

using namespace baton;
namespace fs = std::filesystem;

namespace {

struct World {
  Config cfg = Config::defaults();
  DataGeometry g = DataGeometry::from_config(cfg);
  FrozenMaps frozen = make_frozen_maps(7001, g, 32);
  Vocab vocab;
};

SceneSpec hold_scene(std::int64_t m) {
  SceneSpec s;
  s.duration_s = m;
  s.xbin = 4;
  s.ybin = 4;
  s.events.push_back({0.0, static_cast<double>(m), MotionCode::hold});
  return s;
}

}  // namespace

TEST_CASE("verify: synth check group passes") {
  VerifyOptions opts;
  opts.filter = "synth.";
  for (const auto& r : run_checks(opts, nullptr)) {
    INFO(r.name << ": " << r.detail);
    CHECK(r.pass);
  }
}

TEST_CASE("hold script gives identical keyframes and constant-frequency chunks") {
  World w;
  const SceneSpec s = hold_scene(w.g.plan.duration_s);
  const RawSample raw = render_scene(s, w.g.plan, w.g.sp);
  const std::int64_t px = w.g.sp.frame_px;
  for (std::int64_t i = 1; i < w.g.plan.keyframes(); ++i)
    for (std::int64_t p = 0; p < px * px; ++p)
      REQUIRE(raw.video[i * px * px + p] == raw.video[p]);
  // constant frequency: zero-crossing count per chunk ~ 2 f +- 1
  const double f = s.freq_at(0.0);
  for (std::int64_t m = 0; m < w.g.plan.duration_s; ++m) {
    std::int64_t crossings = 0;
    const double* chunk = raw.audio.data() + m * w.g.sp.audio_rate;
    for (std::int64_t i = 0; i + 1 < w.g.sp.audio_rate; ++i)
      if ((chunk[i] < 0 && chunk[i + 1] >= 0) || (chunk[i] >= 0 && chunk[i + 1] < 0))
        ++crossings;
    REQUIRE(std::abs(static_cast<double>(crossings) - 2.0 * f) <= 1.5);
  }
}

TEST_CASE("same seed reproduces the raw sample bit-exactly") {
  World w;
  RngStream r1(4242), r2(4242);
  const auto a = generate_scene(r1, w.g.plan, w.g.sp);
  const auto b = generate_scene(r2, w.g.plan, w.g.sp);
  REQUIRE(max_abs_diff(a.second.video, b.second.video) == 0);
  REQUIRE(max_abs_diff(a.second.audio, b.second.audio) == 0);
  REQUIRE(a.first.to_string() == b.first.to_string());
}

TEST_CASE("scene text is injective and round-trips") {
  World w;
  // two scenes differing only in event order produce different sequences
  SceneSpec s1 = hold_scene(2);
  s1.events.clear();
  s1.events.push_back({0, 1, MotionCode::left});
  s1.events.push_back({1, 2, MotionCode::right});
  SceneSpec s2 = s1;
  s2.events[0].code = MotionCode::right;
  s2.events[1].code = MotionCode::left;
  const auto t1 = scene_to_text(s1, w.vocab);
  const auto t2 = scene_to_text(s2, w.vocab);
  REQUIRE(t1.first != t2.first);
  REQUIRE(t1.first[3] == w.vocab.id("EV_LEFT"));
  REQUIRE(t1.first[4] == w.vocab.id("EV_RIGHT"));
  // inverse table: text -> script -> text is the identity
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    RngStream rng(seed);
    const SceneSpec s = sample_scene_spec(rng, w.g.plan, w.g.sp.f0, w.g.sp.alpha);
    const auto [vt, at] = scene_to_text(s, w.vocab);
    const SceneSpec back =
        text_to_scene(vt, w.vocab, w.g.plan.duration_s, w.g.sp.f0, w.g.sp.alpha);
    REQUIRE(back.to_string() == s.to_string());
    const auto [vt2, at2] = scene_to_text(back, w.vocab);
    REQUIRE(vt2 == vt);
    REQUIRE(at2 == at);
  }
}

TEST_CASE("video featurizer: shape, zero input, affine oracle") {
  World w;
  const std::int64_t px = w.g.sp.frame_px;
  RawSample zero{Tensor<double>(Shape{w.g.plan.keyframes(), px, px}),
                 Tensor<double>(Shape{w.g.plan.duration_s, w.g.sp.audio_rate})};
  const auto fv = video_featurize(zero, w.g.plan, w.frozen);
  REQUIRE(fv.rows() == w.g.plan.video_tokens());
  REQUIRE(fv.cols() == w.g.d_s);
  // all-zero frames: every row equals tanh(frozen bias)
  for (std::int64_t r = 0; r < fv.rows(); ++r)
    for (std::int64_t c = 0; c < fv.cols(); ++c)
      REQUIRE(fv.at2(r, c) == Catch::Approx(std::tanh(w.frozen.vf_b.at2(0, c))).margin(1e-15));
  // random frame matches an independent affine computation
  RngStream rng(11);
  RawSample rnd{Tensor<double>::random(rng, {w.g.plan.keyframes(), px, px}, false),
                Tensor<double>(Shape{w.g.plan.duration_s, w.g.sp.audio_rate})};
  const auto fr = video_featurize(rnd, w.g.plan, w.frozen);
  const std::int64_t ph = px / w.g.plan.h_s, pw = px / w.g.plan.w_s;
  // keyframe 2, patch (1, 0)
  const std::int64_t row = 2 * w.g.plan.n_v() + 1 * w.g.plan.w_s + 0;
  for (std::int64_t o = 0; o < w.g.d_s; ++o) {
    double s = w.frozen.vf_b.at2(0, o);
    for (std::int64_t r = 0; r < ph; ++r)
      for (std::int64_t c = 0; c < pw; ++c)
        s += rnd.video[(2 * px + (1 * ph + r)) * px + (0 * pw + c)] *
             w.frozen.vf_w.at2(r * pw + c, o);
    REQUIRE(fr.at2(row, o) == Catch::Approx(std::tanh(s)).margin(1e-12));
  }
}

TEST_CASE("audio featurizer: silence, shape, affine oracle") {
  World w;
  RawSample silent{Tensor<double>(Shape{w.g.plan.keyframes(), w.g.sp.frame_px,
                                        w.g.sp.frame_px}),
                   Tensor<double>(Shape{w.g.plan.duration_s, w.g.sp.audio_rate})};
  const auto fa = audio_featurize(silent, w.g.plan, w.frozen);
  REQUIRE(fa.rows() == w.g.plan.audio_tokens());
  REQUIRE(fa.cols() == w.g.d_a);
  for (std::int64_t r = 0; r < fa.rows(); ++r)
    for (std::int64_t c = 0; c < fa.cols(); ++c)
      REQUIRE(fa.at2(r, c) == Catch::Approx(std::tanh(w.frozen.af_b.at2(0, c))).margin(1e-15));
  RngStream rng(13);
  RawSample rnd{silent.video,
                Tensor<double>::random(rng, {w.g.plan.duration_s, w.g.sp.audio_rate}, true, 0.5)};
  const auto fr = audio_featurize(rnd, w.g.plan, w.frozen);
  const std::int64_t win = w.g.sp.audio_rate / w.g.plan.n_a;
  const std::int64_t row = 1 * w.g.plan.n_a + 2;  // chunk 1, window 2
  for (std::int64_t o = 0; o < w.g.d_a; ++o) {
    double s = w.frozen.af_b.at2(0, o);
    for (std::int64_t k = 0; k < win; ++k)
      s += rnd.audio[1 * w.g.sp.audio_rate + 2 * win + k] * w.frozen.af_w.at2(k, o);
    REQUIRE(fr.at2(row, o) == Catch::Approx(std::tanh(s)).margin(1e-12));
  }
}

TEST_CASE("latent codec: constant input, exact all-finite round trips") {
  World w;
  const std::int64_t px = w.g.sp.frame_px;
  RawSample flat{Tensor<double>(Shape{w.g.plan.keyframes(), px, px}, 0.25),
                 Tensor<double>(Shape{w.g.plan.duration_s, w.g.sp.audio_rate}, 0.5)};
  const LatentPair z = encode_latents(flat, w.g.grid, w.frozen);
  // constant raw -> all video cells identical
  const std::int64_t d = w.frozen.d;
  for (std::int64_t r = 1; r < w.g.grid.video_latents(); ++r)
    for (std::int64_t c = 0; c < d; ++c)
      REQUIRE(z.z_v[r * d + c] == Catch::Approx(z.z_v[c]).margin(1e-12));
  // decoders invert the frozen lifts
  const auto bm = decode_video_blockmeans(z.z_v, w.g.grid, w.frozen);
  for (std::int64_t i = 0; i < bm.numel(); ++i)
    REQUIRE(bm[i] == Catch::Approx(0.25).margin(1e-9));
  const auto pooled = decode_audio_pooled(z.z_a, w.g.grid, w.frozen);
  for (std::int64_t i = 0; i < pooled.numel(); ++i)
    REQUIRE(pooled[i] == Catch::Approx(0.5).margin(1e-9));
}

TEST_CASE("decoder recovers the centroid trajectory (calibration oracle)") {
  World w;
  double mae = 0;
  std::int64_t count = 0;
  for (int i = 0; i < 50; ++i) {
    RngStream rng(derive_seed(321, static_cast<std::uint64_t>(i)));
    const auto [spec, raw] = generate_scene(rng, w.g.plan, w.g.sp);
    const LatentPair z = encode_latents(raw, w.g.grid, w.frozen);
    const auto bm = decode_video_blockmeans(z.z_v, w.g.grid, w.frozen);
    const auto tr = centroid_trajectory(bm, w.g.grid, double(w.g.plan.duration_s));
    for (std::size_t t = 0; t < tr.time_s.size(); ++t) {
      double x, y;
      spec.pos_at(tr.time_s[t], x, y);
      REQUIRE(tr.x[t] >= 0);
      mae += std::abs(tr.x[t] - x);
      ++count;
    }
  }
  mae /= static_cast<double>(count);
  INFO("centroid MAE = " << mae);
  REQUIRE(mae < 0.05);
}

TEST_CASE("raw cross-modal link: frequency tracks centroid (r >= 0.95)") {
  World w;
  double sum_r = 0;
  int n = 0;
  for (int i = 0; i < 50; ++i) {
    RngStream rng(derive_seed(654, static_cast<std::uint64_t>(i)));
    const auto [spec, raw] = generate_scene(rng, w.g.plan, w.g.sp);
    const std::int64_t wins = w.g.grid.t_a;
    const std::int64_t wl = raw.audio.numel() / wins;
    std::vector<double> fr, xr;
    for (std::int64_t k = 0; k < wins; ++k) {
      fr.push_back(window_frequency(raw.audio.data() + k * wl, wl,
                                    double(w.g.sp.audio_rate)));
      double x, y;
      spec.pos_at((double(k) + 0.5) * double(w.g.plan.duration_s) / double(wins), x, y);
      xr.push_back(x);
    }
    const Pearson p = pearson(fr, xr);
    if (!p.degenerate) {
      sum_r += p.r;
      ++n;
    }
  }
  REQUIRE(n >= 45);
  INFO("mean raw-link r = " << sum_r / n);
  REQUIRE(sum_r / n >= 0.95);
}

TEST_CASE("sync score calibration: matched >= 0.95, mismatched |mean| < 0.3") {
  World w;
  std::vector<std::pair<Tensor<double>, Tensor<double>>> latents;
  double matched = 0;
  int n_matched = 0;
  for (int i = 0; i < 50; ++i) {
    RngStream rng(derive_seed(987, static_cast<std::uint64_t>(i)));
    const auto [spec, raw] = generate_scene(rng, w.g.plan, w.g.sp);
    LatentPair z = encode_latents(raw, w.g.grid, w.frozen);
    const Tensor<double> zv = z.z_v.reshaped({w.g.grid.video_latents(), w.frozen.d});
    const SyncResult r = sync_score(zv, z.z_a, w.g.grid, w.frozen, w.g.plan, w.g.sp);
    REQUIRE_FALSE(r.degenerate);
    matched += r.score;
    ++n_matched;
    latents.push_back({zv, z.z_a});
  }
  INFO("matched mean sync = " << matched / n_matched);
  REQUIRE(matched / n_matched >= 0.95);

  double null_sum = 0;
  for (std::size_t i = 0; i < latents.size(); ++i) {
    const auto& other = latents[(i + 1) % latents.size()];
    const SyncResult r = sync_score(latents[i].first, other.second, w.g.grid, w.frozen,
                                    w.g.plan, w.g.sp);
    null_sum += r.score;
  }
  const double null_mean = null_sum / static_cast<double>(latents.size());
  INFO("mismatched mean sync = " << null_mean);
  REQUIRE(std::abs(null_mean) < 0.3);
}

TEST_CASE("constant-position scene degenerates to score 0 with flag") {
  World w;
  const SceneSpec s = hold_scene(w.g.plan.duration_s);
  const RawSample raw = render_scene(s, w.g.plan, w.g.sp);
  LatentPair z = encode_latents(raw, w.g.grid, w.frozen);
  const SyncResult r =
      sync_score(z.z_v.reshaped({w.g.grid.video_latents(), w.frozen.d}), z.z_a,
                 w.g.grid, w.frozen, w.g.plan, w.g.sp);
  REQUIRE(r.degenerate);
  REQUIRE(r.score == 0.0);
}

TEST_CASE("event probe: ground truth >= 0.9, noise near chance") {
  World w;
  int hits = 0;
  for (int i = 0; i < 50; ++i) {
    RngStream rng(derive_seed(1111, static_cast<std::uint64_t>(i)));
    const auto [spec, raw] = generate_scene(rng, w.g.plan, w.g.sp);
    const LatentPair z = encode_latents(raw, w.g.grid, w.frozen);
    hits += event_match(z.z_v.reshaped({w.g.grid.video_latents(), w.frozen.d}), spec,
                        w.g.grid, w.frozen)
                ? 1
                : 0;
  }
  INFO("ground-truth probe accuracy = " << hits / 50.0);
  REQUIRE(hits >= 45);
  // random noise latents match only near chance level
  int noise_hits = 0;
  RngStream nrng(2222);
  for (int i = 0; i < 50; ++i) {
    RngStream rng(derive_seed(3333, static_cast<std::uint64_t>(i)));
    const SceneSpec spec = sample_scene_spec(rng, w.g.plan, w.g.sp.f0, w.g.sp.alpha);
    const Tensor<double> zv =
        Tensor<double>::random(nrng, {w.g.grid.video_latents(), w.frozen.d}, true, 1.0);
    noise_hits += event_match(zv, spec, w.g.grid, w.frozen) ? 1 : 0;
  }
  INFO("noise probe accuracy = " << noise_hits / 50.0);
  // chance of an exact script match is far below 10%
  REQUIRE(noise_hits <= 5);
}

TEST_CASE("dataset write/read round-trips bit-exactly") {
  World w;
  const fs::path dir = fs::temp_directory_path() / "baton_test_dataset";
  fs::remove_all(dir);
  const auto samples = generate_dataset<float>(w.cfg, 0, 10, 1);
  REQUIRE(samples.size() == 10);
  dataset_write(dir.string(), samples);
  // manifest line count equals sample count
  std::ifstream mf(dir / "manifest.jsonl");
  std::string line;
  int lines = 0;
  while (std::getline(mf, line))
    if (!line.empty()) ++lines;
  REQUIRE(lines == 10);
  const auto back = dataset_read<float>(dir.string());
  REQUIRE(back.size() == samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    REQUIRE(container_to_bytes(sample_to_container(back[i])) ==
            container_to_bytes(sample_to_container(samples[i])));
    REQUIRE(back[i].script == samples[i].script);
    REQUIRE(back[i].seed == samples[i].seed);
  }
  // corrupt container errors name the file
  {
    std::ofstream bad(dir / sample_filename(3), std::ios::binary | std::ios::trunc);
    bad << "BTN1garbage";
  }
  try {
    dataset_read<float>(dir.string());
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    REQUIRE(std::string(e.what()).find(sample_filename(3)) != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("parallel generation matches serial bytes") {
  World w;
  const auto serial = generate_dataset<float>(w.cfg, 0, 12, 1);
  const auto parallel = generate_dataset<float>(w.cfg, 0, 12, 4);
  REQUIRE(serial.size() == parallel.size());
  for (std::size_t i = 0; i < serial.size(); ++i)
    REQUIRE(container_to_bytes(sample_to_container(serial[i])) ==
            container_to_bytes(sample_to_container(parallel[i])));
}

TEST_CASE("frozen maps are untouched by downstream use") {
  World w;
  const std::uint64_t h0 = w.frozen.content_hash();
  const auto samples = generate_dataset<float>(w.cfg, 0, 3, 1);
  (void)samples;
  REQUIRE(w.frozen.content_hash() == h0);
  // rebuildable from the seed alone
  REQUIRE(make_frozen_maps(7001, w.g, 32).content_hash() == h0);
  REQUIRE(make_frozen_maps(7002, w.g, 32).content_hash() != h0);
}

TEST_CASE("incompatible geometry raises encoding errors") {
  World w;
  Config bad = Config::defaults();
  bad.set("grid.audio_t", "7");  // 1600 % 7 != 0
  const DataGeometry g2 = DataGeometry::from_config(bad);
  REQUIRE_THROWS_AS(make_frozen_maps(1, g2, 32), ShapeError);
  Config bad2 = Config::defaults();
  bad2.set("geom.n_a", "3");  // 800 % 3 != 0
  const DataGeometry g3 = DataGeometry::from_config(bad2);
  REQUIRE_THROWS_AS(make_frozen_maps(1, g3, 32), ShapeError);
}
