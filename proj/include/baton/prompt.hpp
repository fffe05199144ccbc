// Token vocabulary, plan geometry, and structured-prompt assembly with
// delimited video/audio planning regions.
#pragma once

#include <cstdint>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "baton/common.hpp"

namespace baton {

// Fixed synthetic vocabulary: a handful of structural specials plus a small
// event-code alphabet (scene position bins, motion codes, tone codes).
class Vocab {
 public:
  Vocab() {
    // structural / segment markers
    for (int i = 0; i < 4; ++i) add("SYS" + std::to_string(i));
    v_text = add("V_TEXT");
    a_text = add("A_TEXT");
    v_start = add("V_START");
    img_pad = add("IMG_PAD");
    v_end = add("V_END");
    a_start = add("A_START");
    aud_pad = add("AUD_PAD");
    a_end = add("A_END");
    first_text_ = static_cast<std::int64_t>(names_.size());
    // scene text tokens
    for (int i = 0; i < 10; ++i) add("X" + std::to_string(i));
    for (int i = 0; i < 10; ++i) add("Y" + std::to_string(i));
    for (int k = 2; k <= 4; ++k) add("K" + std::to_string(k));
    add("EV_LEFT");
    add("EV_RIGHT");
    add("EV_UP");
    add("EV_DOWN");
    add("EV_HOLD");
    add("TONE_RISE");
    add("TONE_FALL");
    add("TONE_FLAT");
  }

  std::int64_t size() const { return static_cast<std::int64_t>(names_.size()); }

  std::int64_t id(const std::string& name) const {
    auto it = ids_.find(name);
    if (it == ids_.end()) throw FormatError("unknown token name: " + name);
    return it->second;
  }

  const std::string& name(std::int64_t id) const {
    if (id < 0 || id >= size()) throw FormatError("token id out of range");
    return names_[static_cast<std::size_t>(id)];
  }

  bool contains(std::int64_t id) const { return id >= 0 && id < size(); }
  bool is_text(std::int64_t id) const { return id >= first_text_ && id < size(); }

  std::vector<std::int64_t> sys_tokens() const { return {0, 1, 2, 3}; }

  std::int64_t v_text = 0, a_text = 0;
  std::int64_t v_start = 0, img_pad = 0, v_end = 0;
  std::int64_t a_start = 0, aud_pad = 0, a_end = 0;

 private:
  std::int64_t add(const std::string& n) {
    ids_[n] = static_cast<std::int64_t>(names_.size());
    names_.push_back(n);
    return ids_[n];
  }

  std::vector<std::string> names_;
  std::unordered_map<std::string, std::int64_t> ids_;
  std::int64_t first_text_ = 0;
};

// Keyframe rate is fixed: N = kKeyframesPerSecond * M.
constexpr std::int64_t kKeyframesPerSecond = 6;

struct PlanGeometry {
  std::int64_t duration_s = 0;  // M; also the number of audio chunks
  std::int64_t h_s = 0, w_s = 0;
  std::int64_t n_a = 0;

  std::int64_t keyframes() const { return kKeyframesPerSecond * duration_s; }  // N
  std::int64_t n_v() const { return h_s * w_s; }
  std::int64_t video_tokens() const { return keyframes() * n_v(); }  // L_v
  std::int64_t audio_tokens() const { return duration_s * n_a; }     // L_a

  void validate() const {
    if (duration_s <= 0 || h_s <= 0 || w_s <= 0 || n_a <= 0)
      throw ShapeError("plan geometry: extents must be positive");
    if (n_a > n_v())
      throw ShapeError("plan geometry: n_a must not exceed n_v");
  }
};

enum class TagOrder { v_then_a, a_then_v, interleaved };

inline TagOrder tag_order_from_string(const std::string& s) {
  if (s == "v_then_a") return TagOrder::v_then_a;
  if (s == "a_then_v") return TagOrder::a_then_v;
  if (s == "interleaved") return TagOrder::interleaved;
  throw UsageError("unknown tag order: " + s);
}

struct PromptLayout {
  std::vector<std::int64_t> tokens;
  // Half-open spans of the pad regions. For interleaved order both spans
  // cover the single shared region; pad_spans() reports exact positions.
  std::int64_t video_begin = 0, video_end = 0;
  std::int64_t audio_begin = 0, audio_end = 0;
  TagOrder order = TagOrder::v_then_a;
  PlanGeometry geom;

  std::int64_t text_len = 0;  // prefix length: sys + markers + both texts
};

inline PromptLayout assemble_prompt(const std::vector<std::int64_t>& sys_tokens,
                                    const std::vector<std::int64_t>& video_text,
                                    const std::vector<std::int64_t>& audio_text,
                                    const PlanGeometry& geom, TagOrder order,
                                    const Vocab& vocab) {
  geom.validate();
  if (video_text.empty() || audio_text.empty())
    throw FormatError("assemble_prompt: empty text");
  for (auto id : sys_tokens)
    if (!vocab.contains(id)) throw FormatError("assemble_prompt: bad sys token");
  for (auto id : video_text)
    if (!vocab.is_text(id)) throw FormatError("assemble_prompt: bad video text token");
  for (auto id : audio_text)
    if (!vocab.is_text(id)) throw FormatError("assemble_prompt: bad audio text token");

  PromptLayout L;
  L.order = order;
  L.geom = geom;
  auto& t = L.tokens;
  t = sys_tokens;
  t.push_back(vocab.v_text);
  t.insert(t.end(), video_text.begin(), video_text.end());
  t.push_back(vocab.a_text);
  t.insert(t.end(), audio_text.begin(), audio_text.end());
  L.text_len = static_cast<std::int64_t>(t.size());

  const std::int64_t lv = geom.video_tokens(), la = geom.audio_tokens();
  auto emit_video_block = [&] {
    t.push_back(vocab.v_start);
    L.video_begin = static_cast<std::int64_t>(t.size());
    t.insert(t.end(), static_cast<std::size_t>(lv), vocab.img_pad);
    L.video_end = static_cast<std::int64_t>(t.size());
    t.push_back(vocab.v_end);
  };
  auto emit_audio_block = [&] {
    t.push_back(vocab.a_start);
    L.audio_begin = static_cast<std::int64_t>(t.size());
    t.insert(t.end(), static_cast<std::size_t>(la), vocab.aud_pad);
    L.audio_end = static_cast<std::int64_t>(t.size());
    t.push_back(vocab.a_end);
  };

  switch (order) {
    case TagOrder::v_then_a:
      emit_video_block();
      emit_audio_block();
      break;
    case TagOrder::a_then_v:
      emit_audio_block();
      emit_video_block();
      break;
    case TagOrder::interleaved: {
      // Chunk-level interleave: per second, that second's keyframe pads then
      // its audio pads, inside a single delimited region.
      t.push_back(vocab.v_start);
      L.video_begin = L.audio_begin = static_cast<std::int64_t>(t.size());
      for (std::int64_t m = 0; m < geom.duration_s; ++m) {
        t.insert(t.end(), static_cast<std::size_t>(kKeyframesPerSecond * geom.n_v()),
                 vocab.img_pad);
        t.insert(t.end(), static_cast<std::size_t>(geom.n_a), vocab.aud_pad);
      }
      L.video_end = L.audio_end = static_cast<std::int64_t>(t.size());
      t.push_back(vocab.v_end);
      break;
    }
  }
  return L;
}

struct PadSpans {
  std::vector<std::int64_t> video;  // positions of IMG_PAD, in sequence order
  std::vector<std::int64_t> audio;  // positions of AUD_PAD
};

inline PadSpans pad_spans(const PromptLayout& layout, const Vocab& vocab) {
  PadSpans s;
  bool saw_v_delim = false, saw_a_delim = false;
  for (std::size_t i = 0; i < layout.tokens.size(); ++i) {
    const auto id = layout.tokens[i];
    if (id == vocab.img_pad) s.video.push_back(static_cast<std::int64_t>(i));
    if (id == vocab.aud_pad) s.audio.push_back(static_cast<std::int64_t>(i));
    if (id == vocab.v_start) saw_v_delim = true;
    if (id == vocab.a_start) saw_a_delim = true;
  }
  if (!saw_v_delim || (layout.order != TagOrder::interleaved && !saw_a_delim))
    throw FormatError("pad_spans: missing delimiters");
  if (static_cast<std::int64_t>(s.video.size()) != layout.geom.video_tokens() ||
      static_cast<std::int64_t>(s.audio.size()) != layout.geom.audio_tokens())
    throw FormatError("pad_spans: pad counts do not match geometry");
  return s;
}

// Prompt files: one sample per line, space-separated token names, e.g.
//   V_TEXT K2 X3 Y5 EV_LEFT EV_RIGHT A_TEXT TONE_FALL TONE_RISE
inline std::pair<std::vector<std::int64_t>, std::vector<std::int64_t>>
parse_prompt_line(const std::string& line, const Vocab& vocab) {
  std::istringstream is(line);
  std::string tok;
  std::vector<std::int64_t> video, audio;
  int section = 0;  // 0 = expect V_TEXT, 1 = video text, 2 = audio text
  while (is >> tok) {
    const std::int64_t id = vocab.id(tok);
    if (section == 0) {
      if (id != vocab.v_text) throw FormatError("prompt line must start with V_TEXT");
      section = 1;
    } else if (id == vocab.a_text) {
      section = 2;
    } else if (!vocab.is_text(id)) {
      throw FormatError("prompt line: unexpected token " + tok);
    } else if (section == 1) {
      video.push_back(id);
    } else {
      audio.push_back(id);
    }
  }
  if (video.empty() || audio.empty())
    throw FormatError("prompt line: needs non-empty video and audio text");
  return {video, audio};
}

inline std::string format_prompt_line(const std::vector<std::int64_t>& video_text,
                                      const std::vector<std::int64_t>& audio_text,
                                      const Vocab& vocab) {
  std::ostringstream os;
  os << "V_TEXT";
  for (auto id : video_text) os << " " << vocab.name(id);
  os << " A_TEXT";
  for (auto id : audio_text) os << " " << vocab.name(id);
  return os.str();
}

}  // namespace baton
