#include "tforce/cli.hpp"

#include "tforce/config.hpp"
#include "tforce/control.hpp"
#include "tforce/error.hpp"
#include "tforce/eval.hpp"
#include "tforce/geometry.hpp"
#include "tforce/models.hpp"
#include "tforce/pipeline.hpp"
#include "tforce/synth.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace tforce::cli {

namespace {

namespace fs = std::filesystem;
using config::Config;

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string model;
  std::optional<double> damping;
  std::string controller;
  std::string contact;
  std::string out;
  std::string data;
  std::string kinds;
  std::string script = "default";
};

struct Context {
  Config cfg;
  std::string hash;
  std::ostream& out;
  std::ostream& err;

  std::string banner() const { return "tforce " + std::string(kVersion) + " config " + hash; }
  nlohmann::ordered_json meta() const {
    return {{"toolkit", "tforce"}, {"version", std::string(kVersion)}, {"config_hash", hash}};
  }
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s + ",") {
    if (c == ',' || c == ' ') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  return out;
}

std::ofstream open_out(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary);
  if (!f) throw ConfigError("cannot write " + p.string());
  return f;
}

void require_file(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) throw ConfigError(what + " not found: " + p.string());
}

geometry::ArrayLayout resolve_layout(const Config& cfg, const std::string& fallback_preset) {
  if (cfg.has("synth.layout_file")) {
    const fs::path p = cfg.string("synth.layout_file", "");
    require_file(p, "layout file");
    return geometry::load_layout(p);
  }
  return geometry::layout_preset(cfg.string("synth.layout", fallback_preset));
}

geometry::FingerChain resolve_chain(const Config& cfg) {
  if (cfg.has("synth.chain_file")) {
    const fs::path p = cfg.string("synth.chain_file", "");
    require_file(p, "chain file");
    return geometry::load_chain(p);
  }
  return geometry::default_finger_chain();
}

synth::SensorModelParams resolve_sensor(const Config& cfg, const geometry::ArrayLayout& layout) {
  const std::string regime = cfg.string("synth.regime", "curved");
  const std::uint64_t seed = cfg.seed("synth.sensor_seed", 1);
  synth::SensorSettings s;
  if (regime == "curved") {
    s = synth::curved_settings(seed);
  } else if (regime == "flat") {
    s = synth::flat_settings(seed);
  } else if (regime == "linear") {
    s = synth::linear_settings(seed);
  } else {
    throw ConfigError("synth.regime must be curved, flat or linear, got '" + regime + "'");
  }
  s.gain_shear = cfg.number("synth.gain_shear", s.gain_shear);
  s.gain_normal = cfg.number("synth.gain_normal", s.gain_normal);
  s.gain_spread = cfg.number("synth.gain_spread", s.gain_spread);
  s.gain_cross = cfg.number("synth.gain_cross", s.gain_cross);
  s.baseline_spread = cfg.number("synth.baseline_spread", s.baseline_spread);
  s.spatial_sigma = cfg.number("synth.spatial_sigma", s.spatial_sigma);
  s.saturation_scale = cfg.number("synth.saturation_scale", s.saturation_scale);
  s.coupling_eps = cfg.number("synth.coupling_eps", s.coupling_eps);
  s.deform_gain = cfg.number("synth.deform_gain", s.deform_gain);
  s.temp_drift = cfg.number("synth.temp_drift", s.temp_drift);
  s.noise_sigma = cfg.number("synth.noise_sigma", s.noise_sigma);
  return synth::build_sensor_params(layout, s);
}

synth::PressScript resolve_script(const Config& cfg, const geometry::ArrayLayout& layout, const std::string& name,
                                  std::uint64_t seed) {
  const double duration = cfg.number("synth.duration", 150.0);
  const double max_force = cfg.number("synth.max_force", 5.0);
  synth::PressScript script;
  if (name == "default") {
    script = synth::default_press_script(layout, seed, duration, max_force);
  } else if (name == "zero") {
    synth::PressSegment seg;
    seg.duration = duration - script.static_lead;
    seg.contact_start = seg.contact_end = layout.positions.front();
    script.segments.push_back(seg);
  } else {
    throw ConfigError("unknown script '" + name + "' (default, zero)");
  }
  script.sample_rate = cfg.number("synth.sample_rate", 100.0);
  script.validate();
  return script;
}

// Synthetic raw recording with the configured array and sensor model.
pipeline::Recording synthesize(const Config& cfg, const std::string& script_name, std::uint64_t seed) {
  const auto layout = resolve_layout(cfg, "fingertip");
  const auto chain = resolve_chain(cfg);
  auto sensor = resolve_sensor(cfg, layout);
  sensor.seed = config::fnv1a("noise:" + std::to_string(sensor.seed) + ":" + std::to_string(seed));
  const auto script = resolve_script(cfg, layout, script_name, seed);
  synth::CollectionRig rig;
  rig.force_noise_sigma = cfg.number("synth.force_noise_sigma", 0.0);
  rig.temperature = cfg.number("synth.temperature", 25.0);
  return synth::generate_recording(script, layout, sensor, chain, rig);
}

pipeline::PreprocessOptions preprocess_options(const Config& cfg) {
  pipeline::PreprocessOptions o;
  o.cutoff_hz = cfg.number("preprocess.cutoff", o.cutoff_hz);
  o.rate_hz = cfg.number("preprocess.rate", o.rate_hz);
  return o;
}

pipeline::Recording load_processed(const Context& ctx, const std::string& data) {
  if (data.empty()) throw ConfigError("--data is required");
  const fs::path base = data;
  fs::path csv = base;
  if (csv.extension() != ".csv") csv += ".csv";
  require_file(csv, "recording");
  auto rec = pipeline::read_recording(base);
  if (!rec.meta.processed) rec = pipeline::preprocess(rec, preprocess_options(ctx.cfg));
  return rec;
}

models::TrainSpec train_spec(const Config& cfg, std::optional<std::uint64_t> seed) {
  models::TrainSpec spec;
  spec.batch_size = static_cast<int>(cfg.integer("train.batch_size", spec.batch_size));
  spec.learning_rate = cfg.number("train.learning_rate", spec.learning_rate);
  spec.epochs = static_cast<int>(cfg.integer("train.epochs", spec.epochs));
  spec.seed = seed.value_or(cfg.seed("train.seed", 0));
  return spec;
}

int cmd_synth(const Context& ctx, const Options& o) {
  if (o.out.empty()) throw ConfigError("--out is required");
  const std::uint64_t seed = o.seed.value_or(ctx.cfg.seed("synth.seed", 1));
  auto rec = synthesize(ctx.cfg, o.script, seed);
  rec.meta.tags["version"] = std::string(kVersion);
  rec.meta.tags["config_hash"] = ctx.hash;
  rec.meta.tags["seed"] = std::to_string(seed);
  rec.meta.tags["script"] = o.script;
  const fs::path out = o.out;
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  pipeline::write_recording(rec, out, ctx.banner());
  ctx.out << "wrote " << rec.taxels.size() << " samples of " << rec.meta.array_id << " to " << o.out << ".csv\n";
  return kOk;
}

int cmd_preprocess(const Context& ctx, const Options& o) {
  if (o.out.empty()) throw ConfigError("--out is required");
  auto rec = load_processed(ctx, o.data);
  rec.meta.tags["version"] = std::string(kVersion);
  rec.meta.tags["config_hash"] = ctx.hash;
  const fs::path out = o.out;
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  pipeline::write_recording(rec, out, ctx.banner());
  ctx.out << "processed " << rec.taxels.size() << " samples to " << o.out << ".csv\n";
  return kOk;
}

int cmd_train(const Context& ctx, const Options& o) {
  if (o.out.empty()) throw ConfigError("--out is required");
  const auto kind = models::parse_kind(o.model.empty() ? ctx.cfg.string("train.model", "m3l") : o.model);
  const auto rec = load_processed(ctx, o.data);
  const auto layout = resolve_layout(ctx.cfg, rec.meta.array_id);
  const auto data = pipeline::standardize(rec);
  const double damping = o.damping.value_or(ctx.cfg.number("train.damping", models::kDefaultDamping));
  const auto spec = train_spec(ctx.cfg, o.seed);

  models::ForceModel model;
  std::vector<double> curve;
  if (models::is_linear(kind)) {
    model = models::fit_least_squares(data, kind, layout, kind == models::ModelKind::M3L ? damping : 0.0);
  } else {
    auto res = models::train_adam(data, kind, layout, spec);
    model = res.model;
    curve = res.epoch_loss;
    ctx.out << "loss " << res.initial_loss << " -> " << curve.back() << " after " << curve.size() << " epochs\n";
  }
  auto meta = ctx.meta();
  meta["seed"] = spec.seed;
  save_model(model, o.out, meta);

  const auto fit_report = eval::evaluate(pipeline::destandardize(data).F, models::predict(model, data.X, layout));
  ctx.out << models::to_string(kind) << " (" << models::param_count(kind, layout.n) << " parameters, lambda "
          << model.lambda << ") saved to " << o.out << "\n";
  if (kind == models::ModelKind::M4) ctx.out << models::kM4CountNote << "\n";
  ctx.out << "training fit:\n";
  eval::write_report(ctx.out, fit_report);
  return kOk;
}

int cmd_eval(const Context& ctx, const Options& o) {
  const std::string model_path = o.model;
  if (model_path.empty()) throw ConfigError("--model PATH is required");
  require_file(model_path, "model file");
  const auto model = models::load_model(model_path);
  const auto rec = load_processed(ctx, o.data);
  const auto layout = resolve_layout(ctx.cfg, rec.meta.array_id);
  const auto res = eval::stream_eval(model, rec, layout);
  if (!o.out.empty()) {
    auto f = open_out(o.out);
    f << "# " << ctx.banner() << '\n';
    eval::write_stream_trace(f, res);
  }
  ctx.out << res.estimate.rows() << " predictions\n";
  eval::write_report(ctx.out, res.report);
  return kOk;
}

int cmd_bench(const Context& ctx, const Options& o) {
  eval::BenchmarkOptions opts;
  const std::string kinds = o.kinds.empty() ? ctx.cfg.string("bench.kinds", "m1,m2,m3,m3l,m4,m5") : o.kinds;
  for (const auto& k : split_list(kinds)) opts.kinds.push_back(models::parse_kind(k));
  if (opts.kinds.empty()) throw ConfigError("--kinds lists no model; valid kinds: " + std::string(models::kValidKinds));
  const auto rec = load_processed(ctx, o.data);
  const auto layout = resolve_layout(ctx.cfg, rec.meta.array_id);

  const std::uint64_t base = o.seed.value_or(ctx.cfg.seed("bench.seed", 0));
  const auto count = ctx.cfg.integer("bench.subsets", 8);
  if (count < 1) throw ConfigError("bench.subsets must be positive");
  opts.seeds.clear();
  for (std::int64_t s = 0; s < count; ++s) opts.seeds.push_back(base + static_cast<std::uint64_t>(s));
  opts.damping = o.damping.value_or(ctx.cfg.number("train.damping", models::kDefaultDamping));
  opts.train = train_spec(ctx.cfg, std::nullopt);
  opts.include_perfect = ctx.cfg.boolean("bench.perfect", false);

  const auto rows = eval::benchmark(pipeline::to_dataset(rec), layout, opts);
  eval::write_benchmark_table(ctx.out, rows);
  if (std::any_of(opts.kinds.begin(), opts.kinds.end(), [](auto k) { return k == models::ModelKind::M4; })) {
    ctx.out << "note: " << models::kM4CountNote << "\n";
  }
  if (!o.out.empty()) {
    {
      auto f = open_out(o.out + ".csv");
      f << "# " << ctx.banner() << '\n';
      eval::write_benchmark_csv(f, rows);
    }
    auto t = open_out(o.out + ".txt");
    t << "# " << ctx.banner() << '\n';
    eval::write_benchmark_table(t, rows);
  }
  return kOk;
}

models::ForceModel sim_model(const Context& ctx, const Options& o, models::ModelKind kind,
                             const control::Scenario& sc) {
  std::string path = o.model.empty() ? ctx.cfg.string("sim.model_file", "") : o.model;
  if (!path.empty()) {
    require_file(path, "model file");
    return models::load_model(path);
  }
  // Train on a rigid-contact synthetic recording of the same sensor.
  const std::uint64_t seed = ctx.cfg.seed("sim.train_seed", ctx.cfg.seed("synth.seed", 1));
  const auto raw = synthesize(ctx.cfg, "default", seed);
  const auto rec = pipeline::preprocess(raw, preprocess_options(ctx.cfg));
  const auto data = pipeline::standardize(rec);
  const double damping = o.damping.value_or(ctx.cfg.number("train.damping", models::kDefaultDamping));
  ctx.out << "training " << models::to_string(kind) << " on " << rec.taxels.size() << " rigid-contact samples\n";
  return models::fit(data, kind, sc.layout, damping, train_spec(ctx.cfg, std::nullopt));
}

int cmd_sim(const Context& ctx, const Options& o) {
  const Config& cfg = ctx.cfg;
  const std::string controller = o.controller.empty() ? cfg.string("sim.controller", "perfect") : o.controller;
  const auto regime = control::parse_regime(o.contact.empty() ? cfg.string("sim.contact", "rigid") : o.contact);

  control::EstimatorMode mode;
  std::optional<models::ModelKind> kind;
  if (controller == "openloop") {
    mode = control::EstimatorMode::OpenLoop;
  } else if (controller == "perfect") {
    mode = control::EstimatorMode::Perfect;
  } else {
    mode = control::EstimatorMode::Model;
    try {
      kind = models::parse_kind(controller);
    } catch (const ConfigError&) {
      throw ConfigError("unknown controller '" + controller + "' (openloop, perfect, m1, m3l, m4, m5)");
    }
  }

  const auto layout = resolve_layout(cfg, "fingertip");
  if (layout.array_id != "fingertip") throw ConfigError("sim needs the fingertip array");
  const auto sensor = resolve_sensor(cfg, layout);
  auto sc = control::default_scenario(regime, mode, cfg.number("sim.force", 1.5), &sensor);
  sc.layout = layout;
  sc.chain = resolve_chain(cfg);
  sc.duration = cfg.number("sim.duration", regime == control::ContactRegime::Soft ? 15.0 : 10.0);
  sc.summary_window = cfg.number("sim.window", 13.0);
  sc.seed = o.seed.value_or(cfg.seed("sim.seed", 0));
  sc.plant.actuator_gain = cfg.number("sim.actuator_gain", 1.0);
  auto vec3 = [&](const std::string& key, const Eigen::Vector3d& fallback) {
    const auto v = cfg.numbers(key, {fallback[0], fallback[1], fallback[2]});
    if (v.size() != 3) throw ConfigError(key + " needs 3 entries");
    return Eigen::Vector3d(v[0], v[1], v[2]);
  };
  auto vec4 = [&](const std::string& key, const geometry::JointVector& fallback) {
    const auto v = cfg.numbers(key, {fallback[0], fallback[1], fallback[2], fallback[3]});
    if (v.size() != 4) throw ConfigError(key + " needs 4 entries");
    return geometry::JointVector(v[0], v[1], v[2], v[3]);
  };
  sc.controller.k_i = vec3("sim.k_i", sc.controller.k_i);
  sc.controller.k_p = vec4("sim.k_p", sc.controller.k_p);
  sc.controller.k_d = vec4("sim.k_d", sc.controller.k_d);
  sc.controller.integral_rate_limit = cfg.number("sim.integral_rate_limit", sc.controller.integral_rate_limit);
  sc.controller.integral_clamp = cfg.number("sim.integral_clamp", sc.controller.integral_clamp);
  sc.estimator_bias = vec3("sim.bias", sc.estimator_bias);
  if (kind) sc.model = sim_model(ctx, o, *kind, sc);

  const auto trace = control::run_closed_loop(sc);
  if (!o.out.empty()) {
    auto f = open_out(o.out);
    f << "# " << ctx.banner() << " controller " << controller << " contact " << control::to_string(regime)
      << " seed " << sc.seed << '\n';
    control::write_trace_csv(f, trace);
    fs::path summary = o.out;
    summary.replace_extension(".summary.txt");
    auto s = open_out(summary);
    s << "# " << ctx.banner() << '\n';
    control::write_summary(s, trace.summary);
  }
  ctx.out << "controller " << controller << ", " << control::to_string(regime) << " contact, "
          << trace.rows.size() << " ticks\n";
  control::write_summary(ctx.out, trace.summary);
  return kOk;
}

void add_common(CLI::App* sub, Options& o) {
  sub->add_option("--config", o.config_path, "Configuration file");
  sub->add_option("--seed", o.seed, "Seed override");
  sub->add_option("--out", o.out, "Output path");
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Tactile array force estimation toolkit", "tforce"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);
  Options o;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic raw recording");
  add_common(synth, o);
  synth->add_option("--script", o.script, "Press script: default or zero");

  auto* prep = app.add_subcommand("preprocess", "Filter, align, project and remove offsets");
  add_common(prep, o);
  prep->add_option("--data", o.data, "Recording base path")->required();

  auto* train = app.add_subcommand("train", "Fit or train a force model");
  add_common(train, o);
  train->add_option("--data", o.data, "Recording base path")->required();
  train->add_option("--model", o.model, "Model kind: " + std::string(models::kValidKinds));
  train->add_option("--damping", o.damping, "Damping for m3l");

  auto* ev = app.add_subcommand("eval", "Stream a recording through a trained model");
  add_common(ev, o);
  ev->add_option("--data", o.data, "Recording base path")->required();
  ev->add_option("--model", o.model, "Model file")->required();

  auto* bench = app.add_subcommand("bench", "Benchmark model kinds over 8 random splits");
  add_common(bench, o);
  bench->add_option("--data", o.data, "Recording base path")->required();
  bench->add_option("--kinds", o.kinds, "Comma separated kinds");
  bench->add_option("--damping", o.damping, "Damping for m3l");

  auto* sim = app.add_subcommand("sim", "Closed-loop force control simulation");
  add_common(sim, o);
  sim->add_option("--controller", o.controller, "openloop, perfect, m1, m3l, m4 or m5");
  sim->add_option("--contact", o.contact, "rigid or soft");
  sim->add_option("--model", o.model, "Trained model file for the estimator");
  sim->add_option("--damping", o.damping, "Damping when training m3l in-process");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::CallForVersion&) {
    out << kVersion << '\n';
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "tforce: " << e.what() << '\n';
    return kUsageError;
  }

  try {
    Context ctx{o.config_path.empty() ? Config{} : Config::load(o.config_path), "", out, err};
    ctx.hash = config::hex64(ctx.cfg.hash());
    if (synth->parsed()) return cmd_synth(ctx, o);
    if (prep->parsed()) return cmd_preprocess(ctx, o);
    if (train->parsed()) return cmd_train(ctx, o);
    if (ev->parsed()) return cmd_eval(ctx, o);
    if (bench->parsed()) return cmd_bench(ctx, o);
    if (sim->parsed()) return cmd_sim(ctx, o);
    err << "tforce: no command\n";
    return kUsageError;
  } catch (const ConfigError& e) {
    err << "tforce: " << e.what() << '\n';
    return kUsageError;
  } catch (const DataError& e) {
    err << "tforce: " << e.what() << '\n';
    return kUsageError;
  } catch (const ShapeError& e) {
    err << "tforce: " << e.what() << '\n';
    return kUsageError;
  } catch (const std::exception& e) {
    err << "tforce: " << e.what() << '\n';
    return kRuntimeError;
  }
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace tforce::cli
