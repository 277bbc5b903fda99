#include <iostream>
#include <optional>

#include <unistd.h>

#include <CLI11.hpp>

#include "homotion/cli.hpp"
#include "homotion/errors.hpp"
#include "homotion/io.hpp"
#include "homotion/runtime.hpp"

namespace fs = std::filesystem;
using namespace homotion;
using nlohmann::json;

namespace {

struct Common {
  std::string config;
  std::string profile = "default";
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> jobs;
  bool nondeterministic = false;
  bool quiet = false;

  void attach(CLI::App* app) {
    app->add_option("--config", config, "Run config JSON; unknown keys are rejected");
    app->add_option("--profile", profile, "Base profile: default or smoke");
    app->add_option("--seed", seed, "Root seed");
    app->add_option("--jobs", jobs, "Worker threads (ignored unless --nondeterministic)");
    app->add_flag("--nondeterministic", nondeterministic, "Allow --jobs > 1");
    app->add_flag("-q,--quiet", quiet, "Suppress progress lines");
  }

  cli::RunConfig load() const {
    cli::RunConfig c = cli::profile(profile);
    if (!config.empty()) c = cli::load_run_config(config, c);
    if (seed) c.seed = *seed;
    if (jobs) c.jobs = *jobs;
    if (nondeterministic) c.deterministic = false;
    return c;
  }

  cli::Log log() const {
    if (quiet) return {};
    return [](const std::string& line) { std::cerr << line << '\n'; };
  }
};

std::vector<dataset::InteractionWindow> load_windows_any(const fs::path& p) {
  if (fs::is_directory(p)) return dataset::load_window_dir(p);
  return dataset::load_windows(p);
}

std::optional<dataset::DescriptorRegistry> load_registry(const std::string& dir) {
  if (dir.empty()) return std::nullopt;
  return dataset::DescriptorRegistry::load_dir(dir);
}

// Without a manifest the split is recomputed from the config and seed.
std::vector<dataset::InteractionWindow> subset(const std::vector<dataset::InteractionWindow>& windows,
                                               const cli::RunConfig& cfg, const std::string& manifest,
                                               const std::string& split) {
  if (split == "all") return windows;
  return cli::split_windows(windows, cli::manifest_for(windows, cfg, manifest), split);
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"homotion: object motion forecasting from human-object interaction"};
  app.set_version_flag("--version", std::string(cli::version()));
  app.require_subcommand(1);
  std::function<void()> action;

  // descriptors
  Common d_common;
  std::string d_model, d_objects, d_out;
  auto* d = app.add_subcommand("descriptors", "Compute dynamic descriptors for object models");
  d_common.attach(d);
  d->add_option("--model", d_model, "Bundled class name or model file");
  d->add_option("--objects", d_objects, "Directory of model files (one descriptor each)");
  bool d_no_floor = false, d_no_gravity = false;
  d->add_flag("--no-floor", d_no_floor, "Simulate without the floor plane");
  d->add_flag("--no-gravity", d_no_gravity, "Simulate without gravity");
  d->add_option("--out", d_out, "Output file (--model) or directory (--objects)")->required();
  d->callback([&] {
    action = [&] {
      auto raw = d_common.load();
      if (d_no_floor) raw.sim.floor_enabled = false;
      if (d_no_gravity) raw.sim.gravity_enabled = false;
      const auto cfg = cli::resolve(raw);
      if (d_model.empty() == d_objects.empty()) throw ConfigError("give exactly one of --model or --objects");
      if (!d_model.empty()) {
        cli::run_descriptor(cli::resolve_model(cfg, d_model), cfg.sim, cli::effective_jobs(cfg), d_out);
      } else {
        cli::run_descriptors_dir(d_objects, cfg.sim, cli::effective_jobs(cfg), d_out, d_common.log());
      }
    };
  });

  // synth
  Common s_common;
  cli::SynthRequest s_req;
  std::string s_model, s_out;
  bool s_from_config = false;
  auto* s = app.add_subcommand("synth", "Generate synthetic interaction clips");
  s_common.attach(s);
  s->add_option("--template", s_req.template_name, "Template name or all")->default_val("all");
  s->add_option("--model,--object", s_model, "Bundled class name or model file");
  s->add_option("--object-id", s_req.object_id, "Object id (default: model name)");
  s->add_option("--scale", s_req.scale, "Instance scale")->check(CLI::PositiveNumber);
  s->add_option("--count", s_req.count, "Clips per template");
  s->add_option("--format", s_req.format, "json or csv")->check(CLI::IsMember({"json", "csv"}));
  s->add_flag("--from-config", s_from_config, "Generate every configured object and template");
  s->add_option("--out", s_out, "Output directory")->required();
  s->callback([&] {
    action = [&] {
      const auto cfg = cli::resolve(s_common.load());
      if (s_from_config) {
        cli::run_synth_config(cfg, s_out, s_common.log());
        return;
      }
      if (s_model.empty()) throw ConfigError("--model is required unless --from-config is given");
      s_req.seed = cfg.seed;
      const fs::path tmp = fs::temp_directory_path();
      const auto model = cli::resolve_model(cfg, s_model);
      const std::string id = s_req.object_id.empty() ? fs::path(s_model).stem().string() : s_req.object_id;
      s_req.object_id = id;
      s_req.model_file = tmp / ("homotion-" + id + "-" + std::to_string(::getpid()) + ".json");
      rigidsim::save_model(model, s_req.model_file);
      try {
        const auto files = cli::run_synth(s_req, cfg.data.synth, cli::effective_jobs(cfg), s_out);
        fs::remove(s_req.model_file);
        if (!s_common.quiet) std::cerr << "synth: " << files.size() << " clips\n";
      } catch (...) {
        fs::remove(s_req.model_file);
        throw;
      }
    };
  });

  // extract
  Common e_common;
  std::string e_in, e_out;
  bool e_keep_moving = false;
  auto* e = app.add_subcommand("extract", "Cut clips into interaction windows");
  e_common.attach(e);
  e->add_option("--in", e_in, "Video directory")->required();
  e->add_option("--out", e_out, "Output directory")->required();
  std::optional<double> e_rest;
  e->add_option("--rest-threshold", e_rest, "Rest threshold in mm")->check(CLI::PositiveNumber);
  e->add_flag("--keep-moving", e_keep_moving, "Keep windows whose object is already moving");
  e->callback([&] {
    action = [&] {
      auto raw = e_common.load();
      if (e_rest) raw.window.labels.rest_threshold = *e_rest;
      const auto cfg = cli::resolve(raw);
      const auto st = cli::run_extract(e_in, cfg.window, e_out, e_keep_moving);
      if (!e_common.quiet) {
        std::cerr << "extract: " << st.kept << " of " << st.candidates << " windows kept from " << st.videos
                  << " videos\n";
      }
    };
  });

  // split
  Common p_common;
  std::string p_windows, p_out;
  auto* p = app.add_subcommand("split", "Write a train/val/test split manifest");
  p_common.attach(p);
  p->add_option("--windows,--data", p_windows, "Window file or directory")->required();
  p->add_option("--out", p_out, "Manifest file")->required();
  p->callback([&] {
    action = [&] {
      const auto cfg = cli::resolve(p_common.load());
      cli::run_split(load_windows_any(p_windows), cfg.data.reserved_objects, cfg.data.ratios, cfg.seed, p_out);
    };
  });

  // train
  Common t_common;
  std::string t_windows, t_descriptors, t_manifest, t_variant = "full", t_out;
  std::optional<std::size_t> t_epochs;
  auto* t = app.add_subcommand("train", "Train one model variant");
  t_common.attach(t);
  t->add_option("--windows,--data", t_windows, "Window file or directory")->required();
  t->add_option("--descriptors", t_descriptors, "Descriptor directory (needed by the full variant)");
  t->add_option("--manifest", t_manifest, "Split manifest (default: split with the config)");
  t->add_option("--variant", t_variant, "full, no_descriptor or base");
  t->add_option("--epochs", t_epochs, "Maximum epochs");
  t->add_option("--out", t_out, "Checkpoint directory")->required();
  t->callback([&] {
    action = [&] {
      auto raw = t_common.load();
      raw.model.variant = model::parse_variant(t_variant);
      if (t_epochs) raw.train.max_epochs = *t_epochs;
      const auto cfg = cli::resolve(raw);
      const auto windows = load_windows_any(t_windows);
      const auto manifest = cli::manifest_for(windows, cfg, t_manifest);
      const auto reg = load_registry(t_descriptors);
      cli::write_provenance(t_out, cfg, {{"stage", "train"}});
      const auto r = cli::run_train(cfg, windows, manifest, reg ? &*reg : nullptr, t_out, t_common.log());
      std::cout << json{{"best_epoch", r.best_epoch},
                        {"best_val_loss", r.best_val_loss},
                        {"epochs", r.curves.size()},
                        {"early_stopped", r.early_stopped}}
                       .dump()
                << '\n';
    };
  });

  // eval
  Common v_common;
  std::string v_ckpt, v_windows, v_descriptors, v_manifest, v_split = "test_seen", v_out, v_tag, v_metric;
  auto* v = app.add_subcommand("eval", "Score a checkpoint on a split");
  v_common.attach(v);
  v->add_option("--checkpoint", v_ckpt, "Checkpoint directory")->required();
  v->add_option("--windows,--data", v_windows, "Window file or directory")->required();
  v->add_option("--descriptors", v_descriptors, "Descriptor directory");
  v->add_option("--manifest", v_manifest, "Split manifest (default: split with the config)");
  v->add_option("--split", v_split, "train, val, test_seen, test_unseen or all");
  v->add_option("--tag", v_tag, "Column label in comparison tables");
  v->add_option("--rotation-metric", v_metric, "geodesic or vector_difference");
  v->add_option("--out", v_out, "Report CSV (default: stdout)");
  v->callback([&] {
    action = [&] {
      auto cfg = cli::resolve(v_common.load());
      if (!v_metric.empty()) cfg.eval.rotation_metric = eval::parse_rotation_metric(v_metric);
      auto m = model::HOGCNModel::load(v_ckpt);
      const auto windows = subset(load_windows_any(v_windows), cfg, v_manifest, v_split);
      if (windows.empty()) throw DataError("split " + v_split + " has no windows");
      const auto reg = load_registry(v_descriptors);
      auto r = cli::run_eval(m, windows, reg ? &*reg : nullptr, v_split, cfg.eval);
      if (!v_tag.empty()) r.tag = v_tag;
      const auto text = eval::report_csv(r);
      if (v_out.empty()) {
        std::cout << text;
      } else {
        io::write_text(v_out, text);
      }
    };
  });

  // predict
  Common r_common;
  std::string r_ckpt, r_windows, r_descriptors, r_manifest, r_split = "all", r_out;
  std::size_t r_limit = 0;
  auto* r = app.add_subcommand("predict", "Forecast object and human motion for windows");
  r_common.attach(r);
  r->add_option("--checkpoint", r_ckpt, "Checkpoint directory")->required();
  r->add_option("--windows,--data", r_windows, "Window file or directory")->required();
  r->add_option("--descriptors", r_descriptors, "Descriptor directory");
  r->add_option("--manifest", r_manifest, "Split manifest (default: split with the config)");
  r->add_option("--split", r_split, "Split to predict (default: all windows)");
  r->add_option("--limit", r_limit, "Predict at most this many windows");
  r->add_option("--out", r_out, "Prediction JSON (default: stdout)");
  r->callback([&] {
    action = [&] {
      const auto cfg = cli::resolve(r_common.load());
      auto m = model::HOGCNModel::load(r_ckpt);
      auto windows = subset(load_windows_any(r_windows), cfg, r_manifest, r_split);
      if (r_limit > 0 && windows.size() > r_limit) windows.resize(r_limit);
      const auto reg = load_registry(r_descriptors);
      const auto j = cli::predict(m, windows, reg ? &*reg : nullptr, r_ckpt, r_windows);
      if (r_out.empty()) {
        std::cout << j.dump() << '\n';
      } else {
        io::write_json(r_out, j);
      }
    };
  });

  // plot
  std::vector<std::string> l_reports;
  std::string l_out, l_table;
  auto* l = app.add_subcommand("plot", "Plot and tabulate evaluation reports");
  l->add_option("--reports,reports", l_reports, "Report CSV files")->required();
  l->add_option("--out", l_out, "SVG file");
  l->add_option("--table", l_table, "Comparison CSV file");
  l->callback([&] {
    action = [&] {
      if (l_out.empty() && l_table.empty()) throw ConfigError("give --out and/or --table");
      std::vector<eval::MetricsReport> reports;
      for (const auto& f : l_reports) reports.push_back(eval::report_from_csv(io::read_text(f)));
      if (!l_out.empty()) io::write_text(l_out, eval::plot_svg(reports));
      if (!l_table.empty()) io::write_text(l_table, eval::compare_csv(reports));
    };
  });

  // pipeline
  Common q_common;
  std::string q_out;
  bool q_resume = false;
  std::optional<std::size_t> q_epochs;
  auto* q = app.add_subcommand("pipeline", "synth, descriptors, extract, split, train and eval in one run");
  q_common.attach(q);
  q->add_option("--out", q_out, "Run directory")->required();
  q->add_option("--epochs", q_epochs, "Maximum epochs per variant");
  q->add_flag("--resume", q_resume, "Skip stages already completed with the same config");
  q->callback([&] {
    action = [&] {
      auto raw = q_common.load();
      if (q_epochs) raw.train.max_epochs = *q_epochs;
      cli::PipelineOptions opt;
      opt.resume = q_resume;
      opt.log = q_common.log();
      cli::run_pipeline(raw, q_out, opt);
    };
  });

  // config
  Common c_common;
  auto* c = app.add_subcommand("config", "Print the resolved run config");
  c_common.attach(c);
  c->callback([&] { action = [&] { std::cout << cli::to_json(cli::resolve(c_common.load())).dump(2) << '\n'; }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 2;
  }
  try {
    if (action) action();
  } catch (const std::exception& err) {
    std::cerr << cli::error_json(err).dump() << '\n';
    return cli::exit_code(err);
  }
  return 0;
}
