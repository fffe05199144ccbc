// baton: desk-scale planning-then-synthesis pipeline for paired video/audio
// toy data. Subcommands: gen-data, train, sample, eval, verify, inspect-ckpt.
#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "baton/config.hpp"
#include "baton/curriculum.hpp"
#include "baton/dit.hpp"
#include "baton/planner.hpp"
#include "baton/synth.hpp"
#include "baton/verify.hpp"

namespace {

using namespace baton;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitVerify = 2;
constexpr int kExitIo = 3;

void echo_config(const Config& cfg, std::ostream* report) {
  nlohmann::json j;
  j["event"] = "config";
  j["resolved"] = cfg.resolved_text();
  std::cout << j.dump() << "\n";
  if (report) (*report) << j.dump() << "\n";
}

struct LoadedCheckpoint {
  Container container;
  CheckpointMeta meta;
};

LoadedCheckpoint read_checkpoint(const std::string& path) {
  LoadedCheckpoint lc{container_read(path), {}};
  lc.meta = checkpoint_meta(lc.container, path);
  return lc;
}

void require_same_compat(const Config& a, const Config& b, const std::string& what) {
  if (a.compat_hash() != b.compat_hash())
    throw FormatError("config hash mismatch: " + what);
}

template <class Real>
int run_train(const Config& cfg, int stage, const std::string& data_dir,
              const std::vector<std::string>& ckpt_in, const std::string& ckpt_out,
              const std::string& report_path) {
  const Vocab vocab;
  const DataGeometry g = DataGeometry::from_config(cfg);
  const TagOrder order = tag_order_from_string(cfg.gets("prompt.order"));
  const auto samples = dataset_read<Real>(data_dir);
  const auto prepared = prepare_samples<Real>(samples, g.plan, order, vocab,
                                              cfg.geti("grid.latent_dim"));
  const StageConfig sc = StageConfig::from_config(cfg, stage);
  const InjectionFlags flags = InjectionFlags::from_config(cfg);
  std::ofstream report;
  if (!report_path.empty()) {
    report.open(report_path, std::ios::trunc);
    if (!report) throw FormatError("cannot open report file: " + report_path);
  }
  echo_config(cfg, report.is_open() ? &report : nullptr);
  const MetricsSink sink = stream_sink(&std::cout, report.is_open() ? &report : nullptr);

  std::vector<LoadedCheckpoint> loaded;
  for (const auto& path : ckpt_in) {
    loaded.push_back(read_checkpoint(path));
    require_same_compat(cfg, loaded.back().meta.cfg, path);
  }
  // Loads `params` from whichever input checkpoint carries them.
  auto load_from_any = [&](ParamStore<Real>& params, const char* what) -> bool {
    std::string first_error;
    for (const auto& lc : loaded) {
      try {
        checkpoint_load_params(lc.container, what, params);
        return true;
      } catch (const FormatError& e) {
        if (first_error.empty()) first_error = e.what();
      }
    }
    if (!loaded.empty() && !first_error.empty()) throw FormatError(first_error);
    return false;
  };

  if (stage == 1) {
    auto planner = Planner<Real>::init(PlannerConfig::from_config(cfg, vocab), g.plan,
                                       sc.seed);
    load_from_any(planner.params, "planner checkpoint");
    train_stage1(planner, prepared, sc, vocab, sink, cfg, ckpt_out);
  } else if (stage == 2) {
    auto dit = DualDit<Real>::init(DitConfig::from_config(cfg, vocab), g.grid, sc.seed,
                                   static_cast<std::uint64_t>(cfg.geti("data.frozen_seed")));
    load_from_any(dit.params, "dit checkpoint");
    train_stage2(dit, prepared, sc, flags, sink, cfg, ckpt_out);
  } else {
    auto planner = Planner<Real>::init(PlannerConfig::from_config(cfg, vocab), g.plan,
                                       sc.seed);
    if (loaded.empty())
      throw UsageError("train --stage 3 requires --ckpt-in with the frozen planner");
    if (!load_from_any(planner.params, "planner checkpoint"))
      throw UsageError("stage 3: no input checkpoint contains the planner");
    auto dit = DualDit<Real>::init(DitConfig::from_config(cfg, vocab), g.grid, sc.seed,
                                   static_cast<std::uint64_t>(cfg.geti("data.frozen_seed")));
    if (!sc.skip_stage2) {
      bool have_dit = false;
      for (const auto& lc : loaded) {
        try {
          checkpoint_load_params(lc.container, "dit checkpoint", dit.params);
          have_dit = true;
          break;
        } catch (const FormatError&) {
        }
      }
      if (!have_dit)
        throw UsageError(
            "stage 3: no input checkpoint contains the stage-2 denoiser "
            "(use train.skip_stage2=true to start it fresh)");
    }
    train_stage3(planner, dit, prepared, sc, flags, vocab, sink, cfg, ckpt_out);
  }
  return kExitOk;
}

template <class Real>
int run_sample(const Config& cfg, const std::string& planner_path,
               const std::string& dit_path, const std::string& prompt_file,
               const std::string& out_dir, int steps) {
  const Vocab vocab;
  const DataGeometry g = DataGeometry::from_config(cfg);
  const TagOrder order = tag_order_from_string(cfg.gets("prompt.order"));
  const InjectionFlags flags = InjectionFlags::from_config(cfg);
  const FrozenMaps frozen = make_frozen_maps(
      static_cast<std::uint64_t>(cfg.geti("data.frozen_seed")), g, g.latent_dim(cfg));

  auto planner = Planner<Real>::init(PlannerConfig::from_config(cfg, vocab), g.plan, 0);
  const auto pl = read_checkpoint(planner_path);
  checkpoint_load_params(pl.container, planner_path, planner.params);
  auto dit = DualDit<Real>::init(DitConfig::from_config(cfg, vocab), g.grid, 0,
                                 static_cast<std::uint64_t>(cfg.geti("data.frozen_seed")));
  const auto dl = read_checkpoint(dit_path);
  checkpoint_load_params(dl.container, dit_path, dit.params);

  std::ifstream prompts(prompt_file);
  if (!prompts) throw FormatError("cannot open prompt file: " + prompt_file);
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  std::ofstream manifest(fs::path(out_dir) / "manifest.jsonl", std::ios::trunc);

  std::string line;
  std::int64_t idx = 0;
  RngStream rng(static_cast<std::uint64_t>(cfg.geti("train.seed")) ^ 0x5a5au);
  while (std::getline(prompts, line)) {
    if (line.empty()) continue;
    const auto [vt, at] = parse_prompt_line(line, vocab);
    const auto layout = assemble_prompt(vocab.sys_tokens(), vt, at, g.plan, order, vocab);
    const auto [hv, ha] = planner.plan_values(layout, vocab);
    PreparedSample<Real> p;
    p.layout = layout;
    p.text_prefix.assign(layout.tokens.begin(), layout.tokens.begin() + layout.text_len);
    const auto [zv, za] = sample_latents(dit, p, &hv, &ha, flags, steps, rng);
    zv.require_finite("sampled video latents");
    za.require_finite("sampled audio latents");

    Container out;
    out.entries.push_back(Entry::from_tensor("z0_v", zv));
    out.entries.push_back(Entry::from_tensor("z0_a", za));
    out.entries.push_back(Entry::from_tensor(
        "decoded_blockmeans",
        decode_video_blockmeans(zv.template cast<double>(), g.grid, frozen)));
    out.entries.push_back(Entry::from_tensor(
        "decoded_audio_pooled",
        decode_audio_pooled(za.template cast<double>(), g.grid, frozen)));
    const std::string fname = "gen_" + std::to_string(idx) + ".btn";
    container_write((fs::path(out_dir) / fname).string(), out);
    nlohmann::json j;
    j["id"] = idx;
    j["prompt"] = line;
    j["files"] = {fname};
    manifest << j.dump() << "\n";
    ++idx;
  }
  if (idx == 0) throw FormatError("prompt file has no prompts: " + prompt_file);
  std::cout << "sampled " << idx << " prompt(s) into " << out_dir << "\n";
  return kExitOk;
}

template <class Real>
int run_eval(const Config& cfg, const std::string& planner_path,
             const std::string& dit_path, const std::string& data_dir,
             const std::string& report_path) {
  const Vocab vocab;
  const DataGeometry g = DataGeometry::from_config(cfg);
  const TagOrder order = tag_order_from_string(cfg.gets("prompt.order"));
  const InjectionFlags flags = InjectionFlags::from_config(cfg);
  const FrozenMaps frozen = make_frozen_maps(
      static_cast<std::uint64_t>(cfg.geti("data.frozen_seed")), g, g.latent_dim(cfg));

  auto planner = Planner<Real>::init(PlannerConfig::from_config(cfg, vocab), g.plan, 0);
  const auto pl = read_checkpoint(planner_path);
  checkpoint_load_params(pl.container, planner_path, planner.params);
  auto dit = DualDit<Real>::init(DitConfig::from_config(cfg, vocab), g.grid, 0,
                                 static_cast<std::uint64_t>(cfg.geti("data.frozen_seed")));
  const auto dl = read_checkpoint(dit_path);
  checkpoint_load_params(dl.container, dit_path, dit.params);

  const auto samples = dataset_read<Real>(data_dir);
  const auto prepared = prepare_samples<Real>(samples, g.plan, order, vocab,
                                              cfg.geti("grid.latent_dim"));
  std::ofstream report;
  if (!report_path.empty()) {
    report.open(report_path, std::ios::trunc);
    if (!report) throw FormatError("cannot open report file: " + report_path);
  }
  echo_config(cfg, report.is_open() ? &report : nullptr);
  MetricsRecord r = evaluate<Real>(&planner, dit, prepared, g, frozen, vocab, flags,
                                   static_cast<int>(cfg.geti("sample.steps")),
                                   static_cast<std::uint64_t>(cfg.geti("train.seed")));
  const MetricsSink sink = stream_sink(&std::cout, report.is_open() ? &report : nullptr);
  sink(r);
  return kExitOk;
}

int run_inspect(const std::string& path) {
  const Container c = container_read(path);
  for (const auto& e : c.entries) {
    const char* dt = e.dtype == Dtype::f32 ? "f32" : e.dtype == Dtype::f64 ? "f64" : "i64";
    std::cout << e.name << "  " << dt << "  " << shape_str(e.dims) << "\n";
  }
  if (!c.meta.empty()) std::cout << "meta: " << c.meta << "\n";
  return kExitOk;
}

// Config for commands that carry no --config flag: recovered from the
// checkpoint's metadata, with --flags overrides restricted to runtime
// ablation toggles.
Config config_from_checkpoints(const std::string& planner_path,
                               const std::string& dit_path,
                               const std::vector<std::string>& flag_overrides) {
  const auto pl = read_checkpoint(planner_path);
  const auto dl = read_checkpoint(dit_path);
  require_same_compat(pl.meta.cfg, dl.meta.cfg,
                      planner_path + " vs " + dit_path);
  Config cfg = pl.meta.cfg;
  for (const auto& o : flag_overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw UsageError("--flags expects key=value: " + o);
    const std::string key = o.substr(0, eq);
    if (key != "dit.rope_mode" && key != "dit.topology" && key != "dit.conditioning" &&
        key != "sample.steps" && key != "train.seed")
      throw UsageError("--flags only accepts runtime toggles, got: " + key);
    cfg.set(key, o.substr(eq + 1));
  }
  return cfg;
}

int dispatch(int argc, char** argv) {
  CLI::App app{"baton: planned joint video/audio toy generation"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate the synthetic paired dataset");
  std::string gen_config, gen_out;
  std::vector<std::string> gen_sets;
  gen->add_option("--config", gen_config, "config file");
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--set", gen_sets, "key=value override");

  // train
  auto* train = app.add_subcommand("train", "run one training stage");
  int train_stage = 0;
  std::string train_config, train_data, train_ckpt_out, train_report;
  std::vector<std::string> train_ckpt_in, train_sets;
  train->add_option("--stage", train_stage, "1|2|3")->required();
  train->add_option("--config", train_config, "config file");
  train->add_option("--data", train_data, "dataset directory")->required();
  train->add_option("--ckpt-in", train_ckpt_in, "input checkpoint(s)");
  train->add_option("--ckpt-out", train_ckpt_out, "output checkpoint")->required();
  train->add_option("--report", train_report, "metrics JSONL file");
  train->add_option("--set", train_sets, "key=value override");

  // sample
  auto* sample = app.add_subcommand("sample", "generate latents from prompts");
  std::string s_planner, s_dit, s_prompts, s_out;
  int s_steps = -1;
  std::vector<std::string> s_flags;
  sample->add_option("--ckpt-planner", s_planner)->required();
  sample->add_option("--ckpt-dit", s_dit)->required();
  sample->add_option("--prompt-file", s_prompts)->required();
  sample->add_option("--out", s_out)->required();
  sample->add_option("--steps", s_steps, "euler steps");
  sample->add_option("--flags", s_flags, "runtime toggle key=value");

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate checkpoints on a dataset");
  std::string e_planner, e_dit, e_data, e_report;
  std::vector<std::string> e_flags;
  eval->add_option("--ckpt-planner", e_planner)->required();
  eval->add_option("--ckpt-dit", e_dit)->required();
  eval->add_option("--data", e_data)->required();
  eval->add_option("--report", e_report)->required();
  eval->add_option("--flags", e_flags, "runtime toggle key=value");

  // verify
  auto* verify = app.add_subcommand("verify", "run the property/oracle suite");
  std::string v_filter, v_fault;
  verify->add_option("--filter", v_filter, "run only checks whose name contains this");
  verify->add_option("--inject-fault", v_fault, "test hook: corrupt a known quantity")
      ->group("");  // hidden

  // inspect-ckpt
  auto* inspect = app.add_subcommand("inspect-ckpt", "list container entries");
  std::string i_path;
  inspect->add_option("file", i_path, "container path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  if (gen->parsed()) {
    const Config cfg = Config::from_file(gen_config, gen_sets);
    echo_config(cfg, nullptr);
    const int threads = gen_threads_from_env();
    const auto samples = generate_dataset<float>(
        cfg, static_cast<std::uint64_t>(cfg.geti("train.seed")), cfg.geti("data.samples"),
        threads);
    dataset_write(gen_out, samples);
    std::cout << "wrote " << samples.size() << " samples to " << gen_out << "\n";
    return kExitOk;
  }
  if (train->parsed()) {
    if (train_stage < 1 || train_stage > 3)
      throw UsageError("train --stage must be 1, 2 or 3");
    const Config cfg = Config::from_file(train_config, train_sets);
    if (cfg.gets("precision") == "f64")
      return run_train<double>(cfg, train_stage, train_data, train_ckpt_in,
                               train_ckpt_out, train_report);
    return run_train<float>(cfg, train_stage, train_data, train_ckpt_in, train_ckpt_out,
                            train_report);
  }
  if (sample->parsed()) {
    Config cfg = config_from_checkpoints(s_planner, s_dit, s_flags);
    if (s_steps > 0) cfg.set("sample.steps", std::to_string(s_steps));
    const int steps = static_cast<int>(cfg.geti("sample.steps"));
    if (cfg.gets("precision") == "f64")
      return run_sample<double>(cfg, s_planner, s_dit, s_prompts, s_out, steps);
    return run_sample<float>(cfg, s_planner, s_dit, s_prompts, s_out, steps);
  }
  if (eval->parsed()) {
    const Config cfg = config_from_checkpoints(e_planner, e_dit, e_flags);
    if (cfg.gets("precision") == "f64")
      return run_eval<double>(cfg, e_planner, e_dit, e_data, e_report);
    return run_eval<float>(cfg, e_planner, e_dit, e_data, e_report);
  }
  if (verify->parsed()) {
    VerifyOptions opts;
    opts.filter = v_filter;
    opts.inject_fault = v_fault;
    const auto results = run_checks(opts, &std::cout);
    if (results.empty()) {
      std::cerr << "verify: no checks match filter '" << v_filter << "'\n";
      return kExitUsage;
    }
    for (const auto& r : results)
      if (!r.pass) return kExitVerify;
    return kExitOk;
  }
  if (inspect->parsed()) return run_inspect(i_path);
  return kExitUsage;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return dispatch(argc, argv);
  } catch (const baton::UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const baton::FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  }
}
