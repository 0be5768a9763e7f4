#include "sar/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <random>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "sar/attn_eval.hpp"
#include "sar/ccl.hpp"
#include "sar/checkpoint.hpp"
#include "sar/config.hpp"
#include "sar/entropy.hpp"
#include "sar/error.hpp"
#include "sar/grid.hpp"
#include "sar/kernels.hpp"
#include "sar/manifest.hpp"
#include "sar/train.hpp"

namespace sar::cli {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

constexpr std::array<std::pair<Subcommand, std::string_view>, 7> kNames{{
    {Subcommand::Train, "train"},
    {Subcommand::Evaluate, "evaluate"},
    {Subcommand::Entropy, "entropy"},
    {Subcommand::Ccl, "ccl"},
    {Subcommand::EvalJaccard, "eval-jaccard"},
    {Subcommand::ExportAttention, "export-attention"},
    {Subcommand::BenchCcl, "bench-ccl"},
}};

std::string schema_footer() {
  std::ostringstream ss;
  ss << "Config keys (JSON file via --config, or --override key=value):\n";
  for (const auto& e : config_schema()) {
    ss << "  " << std::left << std::setw(22) << e.key << std::setw(18) << e.type << e.help << '\n';
  }
  ss << "Environment:\n  SAR_THREADS           default for --threads\n";
  return ss.str();
}

struct AppBundle {
  std::unique_ptr<CLI::App> app;
  std::vector<std::pair<CLI::App*, Subcommand>> subs;
};

AppBundle make_app(CommandSpec& spec) {
  AppBundle b;
  b.app = std::make_unique<CLI::App>("Spatial-entropy attention regularisation toolkit", "sar");
  auto& app = *b.app;
  app.require_subcommand(1);
  app.footer(schema_footer());

  auto common = [&spec](CLI::App* s, bool with_config) {
    if (with_config) {
      s->add_option("--config", spec.config, "JSON run configuration");
      s->add_option("--override", spec.overrides, "config override key=value (repeatable)")
          ->take_all();
      s->add_option("--seed", spec.seed, "master seed (overrides the config)");
    }
    s->add_option("--out", spec.out_dir, "output directory for artifacts and the manifest");
    s->add_option("--threads", spec.threads, "worker threads (default: $SAR_THREADS or all)")
        ->check(CLI::NonNegativeNumber);
  };

  auto add = [&](Subcommand which, const std::string& help) {
    CLI::App* s = app.add_subcommand(std::string(to_string(which)), help);
    b.subs.emplace_back(s, which);
    return s;
  };

  auto* train = add(Subcommand::Train, "train a model on the synthetic shape task");
  common(train, true);
  train->add_option("--resume", spec.resume, "continue from a checkpoint");
  train->footer(schema_footer());

  auto* evaluate = add(Subcommand::Evaluate, "test metrics of a checkpoint on its held-out set");
  common(evaluate, true);
  evaluate->add_option("--checkpoint", spec.checkpoint, "checkpoint file")->required();
  evaluate->footer(schema_footer());

  auto* entropy = add(Subcommand::Entropy, "spatial entropy of grid files (one head per file)");
  common(entropy, true);
  entropy->add_option("inputs", spec.inputs, "grid text files")->required();
  entropy->add_flag("--gradient", spec.write_gradient, "write d entropy / d grid next to --out");

  auto* ccl = add(Subcommand::Ccl, "8-connected components of a grid file");
  common(ccl, false);
  ccl->add_option("inputs", spec.inputs, "grid text files")->required();
  ccl->add_option("--threshold", spec.support_threshold, "support is value > threshold")
      ->check(CLI::NonNegativeNumber);

  auto* jac = add(Subcommand::EvalJaccard, "per-image best-head Jaccard of a checkpoint");
  common(jac, true);
  jac->add_option("--checkpoint", spec.checkpoint, "checkpoint file")->required();

  auto* exp = add(Subcommand::ExportAttention, "write per-head attention images");
  common(exp, true);
  exp->add_option("--checkpoint", spec.checkpoint, "checkpoint file")->required();
  exp->add_option("--sample", spec.samples, "test-set sample index (repeatable, default 0)")
      ->take_all();
  exp->add_option("--upscale", spec.upscale, "pixels per map cell")->check(CLI::PositiveNumber);

  auto* bench = add(Subcommand::BenchCcl, "time connected-component labeling on a random grid");
  common(bench, true);
  bench->add_option("--side", spec.bench_side, "grid side")->check(CLI::Range(2, 8192));
  bench->add_option("--density", spec.bench_density, "fraction of support cells")
      ->check(CLI::Range(0.0, 1.0));
  bench->add_option("--repeats", spec.bench_repeats, "timed repetitions")
      ->check(CLI::PositiveNumber);

  return b;
}

int report(std::ostream& err, const Error& e) {
  err << error_record(to_string(e.code()), e.exit_status(), e.what()) << '\n';
  return e.exit_status();
}

// Config for commands that start from a checkpoint: its stored config, then
// the file and overrides from the command line.
TrainConfig checkpoint_config(const Checkpoint& ck, const CommandSpec& spec) {
  std::string text = config_to_json(ck.config);
  if (spec.config) {
    const TrainConfig file = load_config(spec.config, spec.overrides);
    text = config_to_json(file);
  } else {
    text = config_to_json(config_from_json(apply_overrides(text, spec.overrides)));
  }
  TrainConfig cfg = config_from_json(text);
  if (spec.seed) cfg.seed = *spec.seed;
  if (!(cfg.model == ck.config.model)) {
    throw Error(ErrorCode::SchemaViolation, "model settings cannot be changed for a checkpoint");
  }
  return cfg;
}

std::vector<ShapeSample> held_out(const TrainConfig& cfg) {
  if (cfg.test_samples < 1) throw Error(ErrorCode::InvalidArgument, "testSamples must be >= 1");
  DatasetSpec ts = cfg.dataset;
  ts.samples = cfg.test_samples;
  return generate_dataset(ts, derive_seed(cfg.seed, Stream::TestData));
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + p.string());
  out << text;
  if (!out) throw Error(ErrorCode::Io, "failed writing " + p.string());
}

void finish(const CommandSpec& spec, const std::string& hash, std::uint64_t seed,
            std::vector<fs::path> files, std::ostream& out) {
  if (spec.out_dir.empty()) return;
  const auto m = write_manifest(spec.out_dir, std::string(to_string(spec.subcommand)), hash, seed,
                                files);
  out << "manifest: " << m.string() << '\n';
}

json metrics_to_json(const EvalMetrics& m) {
  return {{"samples", m.samples},       {"loss", m.loss},       {"accuracy", m.accuracy},
          {"entropy", m.entropy},       {"components", m.components}, {"jaccard", m.jaccard}};
}

int cmd_train(const CommandSpec& spec, std::ostream& out) {
  TrainConfig cfg = load_config(spec.config, spec.overrides);
  if (spec.seed) cfg.seed = *spec.seed;
  const fs::path dir = spec.out_dir.empty() ? fs::path("sar_run") : spec.out_dir;
  fs::create_directories(dir);
  const auto cfg_path = dir / "config.json";
  write_text(cfg_path, config_to_json(cfg) + "\n");

  RunOptions opts;
  opts.out_dir = dir;
  opts.resume = spec.resume;
  opts.on_epoch = [&out](const EpochRecord& r) { out << to_json_line(r) << '\n' << std::flush; };
  const RunResult res = run_training(cfg, opts);

  std::vector<fs::path> files = {cfg_path};
  files.insert(files.end(), res.outputs.begin(), res.outputs.end());
  CommandSpec s = spec;
  s.out_dir = dir;
  finish(s, config_hash(cfg), cfg.seed, files, out);
  return 0;
}

template <class T>
EvalMetrics evaluate_checkpoint(const Checkpoint& ck, const TrainConfig& cfg,
                                std::span<const ShapeSample> data) {
  VisionTransformer<T> model(ck.config.model);
  load_parameters(ck, model);
  return evaluate(model, data, cfg.loss, cfg.jaccard_fraction);
}

int cmd_evaluate(const CommandSpec& spec, std::ostream& out) {
  const Checkpoint ck = load_checkpoint(*spec.checkpoint);
  const TrainConfig cfg = checkpoint_config(ck, spec);
  const auto data = held_out(cfg);
  const EvalMetrics m = ck.precision == Precision::Float32
                            ? evaluate_checkpoint<float>(ck, cfg, data)
                            : evaluate_checkpoint<double>(ck, cfg, data);
  json j = metrics_to_json(m);
  j["checkpoint"] = spec.checkpoint->string();
  j["epoch"] = ck.epoch;
  out << j.dump() << '\n';
  if (!spec.out_dir.empty()) {
    fs::create_directories(spec.out_dir);
    const auto p = spec.out_dir / "metrics.json";
    write_text(p, j.dump(2) + "\n");
    finish(spec, config_hash(cfg), cfg.seed, {p}, out);
  }
  return 0;
}

int cmd_entropy(const CommandSpec& spec, std::ostream& out) {
  const TrainConfig cfg = load_config(spec.config, spec.overrides);
  std::vector<Grid2D> heads;
  for (const auto& p : spec.inputs) heads.push_back(load_grid(p));
  const auto results = spatial_entropy_batch(heads, cfg.loss);

  json records = json::array();
  std::vector<fs::path> files;
  if (!spec.out_dir.empty()) fs::create_directories(spec.out_dir);
  out << std::setprecision(10);
  double mean = 0.0;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    mean += r.entropy;
    out << spec.inputs[i].string() << ": entropy " << r.entropy << " components "
        << r.components.count << " probabilities";
    for (double p : r.probabilities) out << ' ' << p;
    out << '\n';
    json rec = {{"file", spec.inputs[i].string()},
                {"entropy", r.entropy},
                {"components", r.components.count},
                {"probabilities", r.probabilities}};
    if (spec.write_gradient && !spec.out_dir.empty()) {
      const auto gp = spec.out_dir / (spec.inputs[i].stem().string() + ".grad.txt");
      save_grid(gp, r.gradient);
      files.push_back(gp);
      rec["gradient"] = gp.filename().string();
    }
    records.push_back(rec);
  }
  mean /= static_cast<double>(results.size());
  if (results.size() > 1) out << "mean entropy " << mean << '\n';
  if (!spec.out_dir.empty()) {
    const auto p = spec.out_dir / "entropy.json";
    write_text(p, json{{"heads", records}, {"loss", mean}}.dump(2) + "\n");
    files.insert(files.begin(), p);
    finish(spec, config_hash(cfg), cfg.seed, files, out);
  }
  return 0;
}

int cmd_ccl(const CommandSpec& spec, std::ostream& out) {
  json records = json::array();
  for (const auto& p : spec.inputs) {
    const Grid2D g = load_grid(p);
    const auto l = connected_components(g, spec.support_threshold);
    if (spec.inputs.size() > 1) out << p.string() << '\n';
    out << "count " << l.count << '\n';
    for (int x = 0; x < l.side; ++x) {
      for (int y = 0; y < l.side; ++y) out << (y ? " " : "") << l.label(x, y);
      out << '\n';
    }
    records.push_back({{"file", p.string()}, {"count", l.count}, {"sizes", l.sizes},
                       {"labels", l.labels}});
  }
  if (!spec.out_dir.empty()) {
    fs::create_directories(spec.out_dir);
    const auto p = spec.out_dir / "ccl.json";
    write_text(p, records.dump(2) + "\n");
    finish(spec, "", 0, {p}, out);
  }
  return 0;
}

template <class T>
std::vector<ImageScore> checkpoint_scores(const Checkpoint& ck, std::span<const ShapeSample> data,
                                          double fraction) {
  VisionTransformer<T> model(ck.config.model);
  load_parameters(ck, model);
  return jaccard_scores(model, data, fraction);
}

int cmd_eval_jaccard(const CommandSpec& spec, std::ostream& out) {
  const Checkpoint ck = load_checkpoint(*spec.checkpoint);
  const TrainConfig cfg = checkpoint_config(ck, spec);
  const auto data = held_out(cfg);
  const auto scores = ck.precision == Precision::Float32
                          ? checkpoint_scores<float>(ck, data, cfg.jaccard_fraction)
                          : checkpoint_scores<double>(ck, data, cfg.jaccard_fraction);
  std::ostringstream csv;
  csv << std::setprecision(17) << "index,label,predicted,head,jaccard\n";
  double mean = 0.0;
  for (const auto& s : scores) {
    csv << s.index << ',' << s.label << ',' << s.predicted << ',' << s.best_head << ','
        << s.jaccard << '\n';
    mean += s.jaccard;
  }
  mean /= static_cast<double>(scores.size());
  out << csv.str() << "mean_jaccard " << std::setprecision(10) << mean << '\n';
  if (!spec.out_dir.empty()) {
    fs::create_directories(spec.out_dir);
    const auto p = spec.out_dir / "jaccard.csv";
    write_text(p, csv.str());
    finish(spec, config_hash(cfg), cfg.seed, {p}, out);
  }
  return 0;
}

template <class T>
std::vector<fs::path> export_maps(const Checkpoint& ck, std::span<const ShapeSample> data,
                                  const CommandSpec& spec, const fs::path& dir, std::ostream& out) {
  VisionTransformer<T> model(ck.config.model);
  load_parameters(ck, model);
  std::vector<fs::path> files;
  const std::vector<int> samples = spec.samples.empty() ? std::vector<int>{0} : spec.samples;
  for (int idx : samples) {
    if (idx < 0 || idx >= static_cast<int>(data.size())) {
      throw Error(ErrorCode::InvalidArgument, "sample index " + std::to_string(idx) +
                                                  " outside the held-out set");
    }
    const auto image = to_precision<T>(data[idx].image);
    const auto trace = model.forward(image);
    const std::string stem = "sample" + std::to_string(idx);
    auto emit = [&](const Grid2D& g, const std::string& name) {
      const auto p = dir / (stem + "_" + name + ".pgm");
      export_map(g, p, spec.upscale);
      files.push_back(p);
      auto txt = p;
      files.push_back(txt.replace_extension(".txt"));
    };
    emit(data[idx].mask, "mask");
    for (int h = 0; h < model.config().heads; ++h) {
      emit(trace.cls_attention(h), "attn_head" + std::to_string(h));
      emit(trace.last_block_similarity[h], "sim_head" + std::to_string(h));
    }
    out << stem << ": label " << data[idx].label << ", " << model.config().heads
        << " heads written\n";
  }
  return files;
}

int cmd_export(const CommandSpec& spec, std::ostream& out) {
  const Checkpoint ck = load_checkpoint(*spec.checkpoint);
  const TrainConfig cfg = checkpoint_config(ck, spec);
  const auto data = held_out(cfg);
  const fs::path dir = spec.out_dir.empty() ? fs::path("sar_attention") : spec.out_dir;
  fs::create_directories(dir);
  const auto files = ck.precision == Precision::Float32
                         ? export_maps<float>(ck, data, spec, dir, out)
                         : export_maps<double>(ck, data, spec, dir, out);
  CommandSpec s = spec;
  s.out_dir = dir;
  finish(s, config_hash(cfg), cfg.seed, files, out);
  return 0;
}

int cmd_bench_ccl(const CommandSpec& spec, std::ostream& out) {
  const TrainConfig cfg = load_config(spec.config, spec.overrides);
  const std::uint64_t seed = spec.seed.value_or(cfg.seed);
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution on(spec.bench_density);
  std::vector<double> v(static_cast<std::size_t>(spec.bench_side) * spec.bench_side);
  for (double& x : v) x = on(rng) ? 1.0 : 0.0;
  const Grid2D g(spec.bench_side, std::move(v));

  std::vector<double> ms;
  int count = 0;
  for (int r = 0; r < spec.bench_repeats; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    count = connected_components(g).count;
    const auto t1 = std::chrono::steady_clock::now();
    ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  std::sort(ms.begin(), ms.end());
  const json j = {{"side", spec.bench_side},     {"density", spec.bench_density},
                  {"seed", seed},                {"components", count},
                  {"repeats", spec.bench_repeats}, {"medianMs", ms[ms.size() / 2]},
                  {"minMs", ms.front()},         {"maxMs", ms.back()}};
  out << j.dump() << '\n';
  if (!spec.out_dir.empty()) {
    fs::create_directories(spec.out_dir);
    const auto p = spec.out_dir / "bench_ccl.json";
    write_text(p, j.dump(2) + "\n");
    finish(spec, "", seed, {p}, out);
  }
  return 0;
}

void apply_threads(const CommandSpec& spec) {
  int n = spec.threads;
  if (n <= 0) {
    if (const char* env = std::getenv("SAR_THREADS")) {
      try {
        n = std::stoi(env);
      } catch (const std::exception&) {
        throw Error(ErrorCode::Usage, std::string("SAR_THREADS is not a number: ") + env);
      }
      if (n < 1) throw Error(ErrorCode::Usage, "SAR_THREADS must be >= 1");
    }
  }
  if (n > 0) kernels::set_threads(n);
}

}  // namespace

std::string_view to_string(Subcommand s) {
  for (const auto& [e, name] : kNames) {
    if (e == s) return name;
  }
  return "?";
}

std::string error_record(std::string_view kind, int status, std::string_view message) {
  return json{{"error", kind}, {"exitCode", status}, {"message", message}}.dump();
}

int run(const CommandSpec& spec, std::ostream& out, std::ostream& err) {
  try {
    apply_threads(spec);
    switch (spec.subcommand) {
      case Subcommand::Train: return cmd_train(spec, out);
      case Subcommand::Evaluate: return cmd_evaluate(spec, out);
      case Subcommand::Entropy: return cmd_entropy(spec, out);
      case Subcommand::Ccl: return cmd_ccl(spec, out);
      case Subcommand::EvalJaccard: return cmd_eval_jaccard(spec, out);
      case Subcommand::ExportAttention: return cmd_export(spec, out);
      case Subcommand::BenchCcl: return cmd_bench_ccl(spec, out);
    }
    throw Error(ErrorCode::Usage, "unknown subcommand");
  } catch (const Error& e) {
    return report(err, e);
  } catch (const fs::filesystem_error& e) {
    return report(err, Error(ErrorCode::Io, e.what()));
  } catch (const std::exception& e) {
    err << error_record("internal", 1, e.what()) << '\n';
    return 1;
  }
}

int main_entry(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CommandSpec spec;
  AppBundle b = make_app(spec);
  try {
    b.app->parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return b.app->exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return b.app->exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    return report(err, Error(ErrorCode::Usage, e.what()));
  }
  for (const auto& [sub, which] : b.subs) {
    if (sub->parsed()) spec.subcommand = which;
  }
  return run(spec, out, err);
}

std::string help_text() {
  CommandSpec spec;
  AppBundle b = make_app(spec);
  std::string text = b.app->help();
  for (const auto& [sub, which] : b.subs) text += "\n" + sub->help();
  return text;
}

std::vector<std::string> flag_names() {
  CommandSpec spec;
  AppBundle b = make_app(spec);
  std::vector<std::string> names;
  for (const auto& [sub, which] : b.subs) {
    for (const CLI::Option* o : sub->get_options()) {
      for (const auto& ln : o->get_lnames()) {
        const std::string flag = "--" + ln;
        if (std::find(names.begin(), names.end(), flag) == names.end()) names.push_back(flag);
      }
    }
  }
  return names;
}

}  // namespace sar::cli
