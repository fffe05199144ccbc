#include <catch2/catch_amalgamated.hpp>

#include "baton/rope.hpp"
#include "baton/verify.hpp"

using namespace baton;

TEST_CASE("verify: rope check group passes") {
  VerifyOptions opts;
  opts.filter = "rope.";
  const auto results = run_checks(opts, nullptr);
  REQUIRE(results.size() >= 6);
  for (const auto& r : results) {
    INFO(r.name << ": " << r.detail);
    CHECK(r.pass);
  }
}

TEST_CASE("frequency vector follows theta^(-2k/d)") {
  const auto w = rope_freqs(10000.0, 8);
  REQUIRE(w.size() == 4);
  REQUIRE(w[0] == 1.0);
  for (std::size_t k = 1; k < w.size(); ++k) {
    REQUIRE(w[k] == Catch::Approx(std::pow(10000.0, -2.0 * double(k) / 8.0)));
    REQUIRE(w[k] < w[k - 1]);
  }
}

TEST_CASE("rope tables carry per-row positions") {
  RngStream rng(3);
  const auto cfg = RopeConfig::oned(6, 500.0);
  const Tensor<double> h = Tensor<double>::random(rng, {3, 6}, true, 1.0);
  const auto tab = rope_tables_1d<double>({0.0, 2.5, -1.0}, cfg);
  const auto y = apply_tables(h, tab);
  // row 0 at position 0 is untouched
  for (int c = 0; c < 6; ++c) REQUIRE(y.at2(0, c) == h.at2(0, c));
  // row 1 matches the single-position op
  Tensor<double> row1(Shape{1, 6});
  for (int c = 0; c < 6; ++c) row1.at2(0, c) = h.at2(1, c);
  const auto y1 = rope_apply(row1, 2.5, cfg);
  for (int c = 0; c < 6; ++c) REQUIRE(y.at2(1, c) == y1.at2(0, c));
}

TEST_CASE("rope configuration errors") {
  REQUIRE_THROWS_AS(RopeConfig::oned(7), ShapeError);
  REQUIRE_THROWS_AS(RopeConfig::threed_split(3, 2, 2), ShapeError);
  const auto cfg = RopeConfig::oned(8);
  RngStream rng(5);
  const auto h = Tensor<double>::random(rng, {2, 8}, true, 1.0);
  REQUIRE_THROWS_AS(rope_apply(h, std::nan(""), cfg), NumericError);
  // 3D application without a split is a configuration error
  REQUIRE_THROWS_AS(rope3d_apply(h, PositionTriple{1, 1, 1}, cfg), ShapeError);
}

TEST_CASE("default 3D split: even thirds, remainder to time") {
  const auto c8 = RopeConfig::threed(8);
  REQUIRE((c8.d_t == 4 && c8.d_h == 2 && c8.d_w == 2));
  const auto c12 = RopeConfig::threed(12);
  REQUIRE((c12.d_t == 4 && c12.d_h == 4 && c12.d_w == 4));
  const auto c10 = RopeConfig::threed(10);
  REQUIRE((c10.d_t == 6 && c10.d_h == 2 && c10.d_w == 2));
  REQUIRE(c8.has_split());
}

TEST_CASE("grid position maps validate extents") {
  GridSpec bad{0, 2, 2, 4, 2, 2, 16, 8};
  REQUIRE_THROWS_AS(latent_query_positions(bad), ShapeError);
  const GridSpec g{3, 2, 2, 6, 2, 2, 8, 4};
  REQUIRE(latent_query_positions(g).size() == 12);
  REQUIRE(semantic_key_positions(g).size() == 24);
  const auto [q, k] = audio_positions(g);
  REQUIRE(q.size() == 8);
  REQUIRE(k.size() == 4);
  REQUIRE(k[3] == Catch::Approx(3.0 * 8.0 / 4.0));
}

TEST_CASE("semantic key positions are fractional on mismatched grids") {
  // default geometry: latent (8,4,4), semantic (12,2,2) -> t-scale 2/3
  const GridSpec g{8, 4, 4, 12, 2, 2, 16, 8};
  const auto kp = semantic_key_positions(g);
  const auto& p1 = kp[static_cast<std::size_t>(1 * 4)];  // j = (1,0,0)
  REQUIRE(p1.t == Catch::Approx(2.0 / 3.0));
  REQUIRE(p1.h == 0.0);
  // fractional positions are used as-is by the tables
  const auto cfg = RopeConfig::threed(8);
  const auto tab = rope_tables_3d<double>({p1}, cfg);
  REQUIRE(tab.cos_t.at2(0, 0) == Catch::Approx(std::cos(2.0 / 3.0)));
}
