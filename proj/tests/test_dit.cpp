#include <catch2/catch_amalgamated.hpp>

#include "baton/curriculum.hpp"
#include "baton/dit.hpp"
#include "baton/synth.hpp"
#include "baton/verify.hpp"

using namespace baton;

TEST_CASE("verify: dit check group passes") {
  VerifyOptions opts;
  opts.filter = "dit.";
  for (const auto& r : run_checks(opts, nullptr)) {
    INFO(r.name << ": " << r.detail);
    CHECK(r.pass);
  }
}

TEST_CASE("latent projection: shape, zero-input bias, affine oracle") {
  RngStream rng(7);
  Mlp<double> lmlp;
  lmlp.layers.push_back({Tensor<double>::random(rng, {16, 32}, true, 0.3),
                         Tensor<double>::random(rng, {1, 32}, true, 0.3)});
  const auto h = Tensor<double>::random(rng, {48, 16}, true, 1.0);
  const auto out = latent_project(lmlp, h);
  REQUIRE(out.rows() == 48);
  REQUIRE(out.cols() == 32);
  // zero input, bias b -> rows equal b
  const auto zero_out = latent_project(lmlp, Tensor<double>(Shape{4, 16}));
  for (std::int64_t r = 0; r < 4; ++r)
    for (std::int64_t c = 0; c < 32; ++c)
      REQUIRE(zero_out.at2(r, c) == lmlp.layers[0].b.at2(0, c));
  // random case vs direct affine
  Tensor<double> oracle = matmul(h, lmlp.layers[0].w);
  for (std::int64_t r = 0; r < oracle.rows(); ++r)
    for (std::int64_t c = 0; c < oracle.cols(); ++c)
      oracle.at2(r, c) += lmlp.layers[0].b.at2(0, c);
  REQUIRE(max_abs_diff(out, oracle) < 1e-12);
  REQUIRE_THROWS_AS(latent_project(lmlp, Tensor<double>(Shape{4, 8})), ShapeError);
}

TEST_CASE("vcattn/acattn validate grid alignment") {
  RngStream rng(11);
  const GridSpec grid{4, 2, 2, 6, 1, 1, 4, 2};
  const auto cfg = RopeConfig::threed(8);
  const auto z = Tensor<double>::random(rng, {grid.video_latents(), 8}, true, 1.0);
  const auto h = Tensor<double>::random(rng, {grid.video_tokens(), 8}, true, 1.0);
  REQUIRE_THROWS_AS(vcattn(Tensor<double>(Shape{3, 8}), h, grid, cfg, RopeMode::rs3d),
                    ShapeError);
  REQUIRE_THROWS_AS(vcattn(z, Tensor<double>(Shape{5, 8}), grid, cfg, RopeMode::rs3d),
                    ShapeError);
  const auto cfg1 = RopeConfig::oned(8);
  REQUIRE_THROWS_AS(acattn(Tensor<double>(Shape{3, 8}),
                           Tensor<double>(Shape{2, 8}), grid, cfg1, RopeMode::rs3d),
                    ShapeError);
  // audio with L_a == T_a reduces to same-axis rope cross-attention
  const GridSpec geq{4, 2, 2, 6, 1, 1, 4, 4};
  const auto za = Tensor<double>::random(rng, {4, 8}, true, 1.0);
  const auto ha = Tensor<double>::random(rng, {4, 8}, true, 1.0);
  const auto [qp, kp] = audio_positions(geq);
  const auto qt = rope_tables_1d<double>(qp, cfg1);
  const auto direct = attention(apply_tables(za, qt), apply_tables(ha, qt), ha);
  REQUIRE(max_abs_diff(acattn(za, ha, geq, cfg1, RopeMode::rs3d), direct) < 1e-12);
}

TEST_CASE("dit forward: velocity shapes and finiteness on all topologies") {
  const Config cfg = verify_detail::mini_config();
  const Vocab vocab;
  const DataGeometry g = DataGeometry::from_config(cfg);
  auto dit = DualDit<float>::init(DitConfig::from_config(cfg, vocab), g.grid, 3, 7001);
  RngStream rng(13);
  const auto zv = Tensor<float>::random(rng, {g.grid.video_latents(), 16}, true, 1.0);
  const auto za = Tensor<float>::random(rng, {g.grid.t_a, 16}, true, 1.0);
  const auto hv = Tensor<float>::random(rng, {g.grid.video_tokens(), 4}, true, 1.0);
  const auto ha = Tensor<float>::random(rng, {g.grid.l_a, 3}, true, 1.0);
  for (auto topo : {Topology::cascade, Topology::parallel, Topology::concat})
    for (auto mode : {RopeMode::rs3d, RopeMode::temporal, RopeMode::none}) {
      InjectionFlags f;
      f.topology = topo;
      f.rope_mode = mode;
      const auto [vv, va] = dit.velocity(zv, za, 0.3, {0, 1, 2}, &hv, &ha, f);
      REQUIRE(vv.same_shape(zv));
      REQUIRE(va.same_shape(za));
      REQUIRE(vv.all_finite());
      REQUIRE(va.all_finite());
    }
}

TEST_CASE("euler sampler aborts on divergence with the step index") {
  RngStream rng(17);
  const auto z = Tensor<double>::random(rng, {2, 2}, true, 1.0);
  try {
    euler_integrate(z, z, 4, [](const Tensor<double>& zv, const Tensor<double>&, double) {
      Tensor<double> bad(zv.shape(), std::numeric_limits<double>::infinity());
      return std::make_pair(bad, bad);
    });
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    REQUIRE(std::string(e.what()).find("step 4") != std::string::npos);
  }
  REQUIRE_THROWS_AS(
      euler_integrate(z, z, 0,
                      [](const Tensor<double>& a, const Tensor<double>& b, double) {
                        return std::make_pair(a, b);
                      }),
      NumericError);
}

TEST_CASE("euler self-convergence on a briefly trained toy model") {
  // first-order trend: halving the step size roughly halves the change
  Config cfg = verify_detail::mini_config();
  const Vocab vocab;
  const DataGeometry g = DataGeometry::from_config(cfg);
  const FrozenMaps frozen = make_frozen_maps(7001, g, 16);
  std::vector<Sample<double>> samples;
  for (int i = 0; i < 6; ++i)
    samples.push_back(generate_sample<double>(i, derive_seed(31, i), g, frozen, vocab));
  const auto prepared = prepare_samples<double>(samples, g.plan, TagOrder::v_then_a,
                                                vocab, 16);
  auto dit = DualDit<double>::init(DitConfig::from_config(cfg, vocab), g.grid, 3, 7001);
  StageConfig sc;
  sc.stage = 2;
  sc.steps = 150;
  sc.holdout = 2;
  sc.log_every = 1000;
  sc.lr = 1e-3;
  train_stage2(dit, prepared, sc, InjectionFlags{}, [](const MetricsRecord&) {}, cfg, "");

  const auto& p = prepared[0];
  RngStream rng(37);
  const Tensor<double> z1v =
      Tensor<double>::random(rng, {g.grid.video_latents(), 16}, true, 1.0);
  const Tensor<double> z1a = Tensor<double>::random(rng, {g.grid.t_a, 16}, true, 1.0);
  auto run = [&](int steps) {
    return euler_integrate(z1v, z1a, steps,
                           [&](const Tensor<double>& zv, const Tensor<double>& za,
                               double t) {
                             return dit.velocity(zv, za, t, p.text_prefix, &p.s->fgt_v,
                                                 &p.s->fgt_a, InjectionFlags{});
                           });
  };
  const auto r5 = run(5);
  const auto r10 = run(10);
  const auto r20 = run(20);
  const auto r40 = run(40);
  const double d1 = max_abs_diff(r5.first, r10.first);
  const double d2 = max_abs_diff(r10.first, r20.first);
  const double d3 = max_abs_diff(r20.first, r40.first);
  INFO("step-doubling deltas: " << d1 << " " << d2 << " " << d3);
  REQUIRE(d2 < d1);
  REQUIRE(d3 < d2);
}
