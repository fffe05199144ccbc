// Flat dotted-key configuration: `key = value` file lines plus --set
// overrides, validated against a fixed key registry.
#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "baton/common.hpp"

namespace baton {

class Config {
 public:
  Config() { *this = defaults(); }

  static Config defaults() {
    Config c(Private{});
    // geometry (keyframe rate is fixed at 6/s; N = 6*M)
    c.def_int("geom.duration_s", 2);
    c.def_int("geom.h_s", 2);
    c.def_int("geom.w_s", 2);
    c.def_int("geom.n_a", 4);
    // latent grids
    c.def_int("grid.video_t", 8);
    c.def_int("grid.video_h", 4);
    c.def_int("grid.video_w", 4);
    c.def_int("grid.audio_t", 16);
    c.def_int("grid.latent_dim", 32);
    // rope
    c.def_real("rope.theta", 10000.0);
    // planner
    c.def_int("planner.dim", 64);
    c.def_int("planner.blocks", 4);
    c.def_int("planner.heads", 4);
    c.def_int("planner.tower_heads", 4);
    c.def_int("planner.d_s", 16);
    c.def_int("planner.d_a", 8);
    c.def_bool("planner.tower", true);
    c.def_bool("planner.learnable_query", true);
    c.def_bool("planner.tower_rope", true);
    c.def_str("prompt.order", "v_then_a", {"v_then_a", "a_then_v", "interleaved"});
    // denoiser
    c.def_int("dit.blocks", 4);
    c.def_int("dit.heads", 4);
    c.def_str("dit.rope_mode", "rs3d", {"rs3d", "temporal", "none"});
    c.def_str("dit.topology", "cascade", {"cascade", "parallel", "concat"});
    c.def_str("dit.conditioning", "planned", {"planned", "text_only", "planned_only"});
    // synthetic data
    c.def_int("data.frame_px", 16);
    c.def_int("data.audio_rate", 800);
    c.def_int("data.samples", 128);
    c.def_int("data.frozen_seed", 7001);
    c.def_real("data.f0", 60.0);
    c.def_real("data.alpha", 35.0);
    // training
    c.def_real("train.lr", 1e-3);
    c.def_real("train.weight_decay", 0.01);
    c.def_real("train.eps", 1e-8);
    c.def_int("train.stage1_steps", 2000);
    c.def_int("train.stage2_steps", 3000);
    c.def_int("train.stage3_steps", 2000);
    c.def_int("train.batch", 1);
    c.def_int("train.holdout", 16);
    c.def_int("train.log_every", 100);
    c.def_int("train.seed", 0);
    c.def_bool("train.skip_stage2", false);
    // sampling
    c.def_int("sample.steps", 20);
    c.def_str("precision", "f32", {"f32", "f64"});
    return c;
  }

  static Config from_file(const std::string& path,
                          const std::vector<std::string>& overrides) {
    Config c = defaults();
    if (!path.empty()) {
      std::ifstream f(path);
      if (!f) throw UsageError("config file not found: " + path);
      std::string line;
      int lineno = 0;
      while (std::getline(f, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        const std::string t = trim(line);
        if (t.empty()) continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
          throw UsageError(path + ":" + std::to_string(lineno) +
                           ": expected `key = value`");
        c.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
      }
    }
    for (const auto& o : overrides) {
      const auto eq = o.find('=');
      if (eq == std::string::npos)
        throw UsageError("--set expects key=value, got: " + o);
      c.set(trim(o.substr(0, eq)), trim(o.substr(eq + 1)));
    }
    return c;
  }

  void set(const std::string& key, const std::string& value) {
    auto it = vals_.find(key);
    if (it == vals_.end()) throw UsageError("unknown config key: " + key);
    Val& v = it->second;
    try {
      switch (v.kind) {
        case Kind::Int: v.i = std::stoll(value); break;
        case Kind::RealV: v.r = std::stod(value); break;
        case Kind::Bool:
          if (value == "true" || value == "1") v.b = true;
          else if (value == "false" || value == "0") v.b = false;
          else throw UsageError("");
          break;
        case Kind::Str:
          if (!v.choices.empty()) {
            bool ok = false;
            for (const auto& ch : v.choices) ok = ok || ch == value;
            if (!ok) throw UsageError("");
          }
          v.s = value;
          break;
      }
    } catch (const std::exception&) {
      throw UsageError("bad value for config key " + key + ": " + value);
    }
  }

  std::int64_t geti(const std::string& key) const { return get(key, Kind::Int).i; }
  double getr(const std::string& key) const { return get(key, Kind::RealV).r; }
  bool getb(const std::string& key) const { return get(key, Kind::Bool).b; }
  const std::string& gets(const std::string& key) const { return get(key, Kind::Str).s; }

  // Resolved key=value text, one line per key, sorted. Echoed into reports
  // and stored in checkpoints so a checkpoint is self-describing.
  std::string resolved_text() const {
    std::ostringstream os;
    for (const auto& [k, v] : vals_) os << k << " = " << v.to_string() << "\n";
    return os.str();
  }

  // Hash over the keys that define model/data compatibility (geometry,
  // grids, sizes, rope, frozen seeds). Run parameters (lr, steps, paths,
  // seeds) are excluded so checkpoints from different runs interoperate.
  std::uint64_t compat_hash() const {
    static const char* prefixes[] = {"geom.", "grid.", "rope.", "planner.",
                                     "dit.",  "data.", "prompt."};
    std::ostringstream os;
    for (const auto& [k, v] : vals_) {
      bool compat = false;
      for (const char* p : prefixes) compat = compat || k.rfind(p, 0) == 0;
      if (k == "data.samples") compat = false;
      if (compat) os << k << "=" << v.to_string() << ";";
    }
    return fnv1a(os.str());
  }

  void apply_lines(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
      const std::string t = trim(line);
      if (t.empty()) continue;
      const auto eq = t.find('=');
      set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
  }

 private:
  struct Private {};
  explicit Config(Private) {}

  enum class Kind { Int, RealV, Bool, Str };
  struct Val {
    Kind kind;
    std::int64_t i = 0;
    double r = 0;
    bool b = false;
    std::string s;
    std::vector<std::string> choices;

    std::string to_string() const {
      switch (kind) {
        case Kind::Int: return std::to_string(i);
        case Kind::RealV: {
          std::ostringstream os;
          os.precision(17);
          os << r;
          return os.str();
        }
        case Kind::Bool: return b ? "true" : "false";
        case Kind::Str: return s;
      }
      return {};
    }
  };

  const Val& get(const std::string& key, Kind kind) const {
    auto it = vals_.find(key);
    if (it == vals_.end() || it->second.kind != kind)
      throw UsageError("unknown config key: " + key);
    return it->second;
  }

  void def_int(const std::string& k, std::int64_t v) { vals_[k] = Val{Kind::Int, v}; }
  void def_real(const std::string& k, double v) {
    Val x{Kind::RealV};
    x.r = v;
    vals_[k] = x;
  }
  void def_bool(const std::string& k, bool v) {
    Val x{Kind::Bool};
    x.b = v;
    vals_[k] = x;
  }
  void def_str(const std::string& k, std::string v, std::vector<std::string> choices) {
    Val x{Kind::Str};
    x.s = std::move(v);
    x.choices = std::move(choices);
    vals_[k] = x;
  }

  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  std::map<std::string, Val> vals_;
};

}  // namespace baton
