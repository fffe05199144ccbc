#include <catch2/catch_amalgamated.hpp>

#include "baton/prompt.hpp"
#include "baton/verify.hpp"

using namespace baton;

TEST_CASE("verify: prompt check group passes") {
  VerifyOptions opts;
  opts.filter = "prompt.";
  for (const auto& r : run_checks(opts, nullptr)) {
    INFO(r.name << ": " << r.detail);
    CHECK(r.pass);
  }
}

TEST_CASE("vocab specials are distinct from text ids") {
  const Vocab v;
  REQUIRE(v.size() >= 40);
  const std::vector<std::int64_t> specials{v.v_start, v.v_end,  v.img_pad,
                                           v.a_start, v.a_end,  v.aud_pad,
                                           v.v_text,  v.a_text};
  for (std::size_t i = 0; i < specials.size(); ++i) {
    REQUIRE_FALSE(v.is_text(specials[i]));
    for (std::size_t j = i + 1; j < specials.size(); ++j)
      REQUIRE(specials[i] != specials[j]);
  }
  REQUIRE(v.is_text(v.id("EV_LEFT")));
  REQUIRE(v.is_text(v.id("X7")));
  REQUIRE(v.id("TONE_RISE") != v.id("TONE_FALL"));
  REQUIRE_THROWS_AS(v.id("NOPE"), FormatError);
}

TEST_CASE("plan geometry invariants") {
  PlanGeometry g{2, 2, 2, 4};
  g.validate();
  REQUIRE(g.keyframes() == 12);
  REQUIRE(g.n_v() == 4);
  REQUIRE(g.video_tokens() == 48);
  REQUIRE(g.audio_tokens() == 8);
  PlanGeometry bad{2, 1, 1, 4};  // n_a > n_v
  REQUIRE_THROWS_AS(bad.validate(), ShapeError);
  PlanGeometry zero{0, 2, 2, 2};
  REQUIRE_THROWS_AS(zero.validate(), ShapeError);
}

TEST_CASE("assembly rejects bad inputs") {
  const Vocab v;
  const PlanGeometry g{1, 2, 2, 2};
  const std::vector<std::int64_t> vt{v.id("K2"), v.id("X1"), v.id("Y1"),
                                     v.id("EV_HOLD"), v.id("EV_LEFT")};
  const std::vector<std::int64_t> at{v.id("TONE_FLAT"), v.id("TONE_FALL")};
  REQUIRE_THROWS_AS(assemble_prompt(v.sys_tokens(), {}, at, g, TagOrder::v_then_a, v),
                    FormatError);
  // a delimiter id inside the text is a vocab mismatch
  REQUIRE_THROWS_AS(assemble_prompt(v.sys_tokens(), {v.img_pad}, at, g,
                                    TagOrder::v_then_a, v),
                    FormatError);
  REQUIRE_THROWS_AS(assemble_prompt(v.sys_tokens(), {9999}, at, g, TagOrder::v_then_a, v),
                    FormatError);
}

TEST_CASE("pad_spans rejects malformed layouts") {
  const Vocab v;
  const PlanGeometry g{1, 1, 1, 1};
  auto lay = assemble_prompt(v.sys_tokens(), {v.id("K2"), v.id("X0"), v.id("Y0")},
                             {v.id("TONE_FLAT")}, g, TagOrder::v_then_a, v);
  // drop a pad token: counts no longer match the geometry
  auto broken = lay;
  for (auto& t : broken.tokens)
    if (t == v.img_pad) {
      t = v.id("EV_HOLD");
      break;
    }
  REQUIRE_THROWS_AS(pad_spans(broken, v), FormatError);
  auto no_delim = lay;
  for (auto& t : no_delim.tokens)
    if (t == v.v_start) t = v.id("EV_HOLD");
  REQUIRE_THROWS_AS(pad_spans(no_delim, v), FormatError);
}

TEST_CASE("prompt lines parse and format round-trip") {
  const Vocab v;
  const std::vector<std::int64_t> vt{v.id("K3"), v.id("X2"), v.id("Y5"),
                                     v.id("EV_LEFT"), v.id("EV_RIGHT"), v.id("EV_HOLD")};
  const std::vector<std::int64_t> at{v.id("TONE_FALL"), v.id("TONE_RISE"),
                                     v.id("TONE_FLAT")};
  const std::string line = format_prompt_line(vt, at, v);
  const auto [v2, a2] = parse_prompt_line(line, v);
  REQUIRE(v2 == vt);
  REQUIRE(a2 == at);
  REQUIRE_THROWS_AS(parse_prompt_line("EV_LEFT A_TEXT TONE_FLAT", v), FormatError);
  REQUIRE_THROWS_AS(parse_prompt_line("V_TEXT EV_LEFT", v), FormatError);
  REQUIRE_THROWS_AS(parse_prompt_line("V_TEXT BOGUS A_TEXT TONE_FLAT", v), FormatError);
}
