#include "homotion/cli.hpp"

#include <algorithm>
#include <chrono>
#include <set>

#include "homotion/errors.hpp"
#include "homotion/hash.hpp"
#include "homotion/io.hpp"
#include "homotion/parallel.hpp"

namespace homotion::cli {

using nlohmann::json;
using dataset::InteractionWindow;

const char* version() { return HOMOTION_VERSION; }

namespace {

void check_keys(const json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [k, _] : j.items()) {
    if (!known.count(k)) throw ConfigError("unknown " + where + " option '" + k + "'");
  }
}

json data_json(const DataConfig& d) {
  json objects = json::array();
  for (const auto& o : d.objects) objects.push_back({{"id", o.id}, {"model", o.model}, {"scale", o.scale}});
  return {{"models_dir", d.models_dir.string()},
          {"objects", objects},
          {"templates", d.templates},
          {"clips_per_template", d.clips_per_template},
          {"duration", d.synth.duration},
          {"frame_rate", d.synth.frame_rate},
          {"noise", d.synth.noise},
          {"reserved_objects", d.reserved_objects},
          {"ratios", {d.ratios.train, d.ratios.val, d.ratios.test}}};
}

DataConfig data_from_json(const json& j) {
  check_keys(j, {"models_dir", "objects", "templates", "clips_per_template", "duration", "frame_rate", "noise",
                 "reserved_objects", "ratios"},
             "data");
  DataConfig d;
  d.models_dir = j.at("models_dir").get<std::string>();
  for (const auto& o : j.at("objects")) {
    check_keys(o, {"id", "model", "scale"}, "data.objects");
    ObjectSpec s;
    s.id = o.at("id").get<std::string>();
    s.model = o.at("model").get<std::string>();
    s.scale = o.value("scale", 1.0);
    d.objects.push_back(s);
  }
  d.templates = j.at("templates").get<std::vector<std::string>>();
  d.clips_per_template = j.at("clips_per_template").get<std::size_t>();
  d.synth.duration = j.at("duration").get<double>();
  d.synth.frame_rate = j.at("frame_rate").get<double>();
  d.synth.noise = j.at("noise").get<double>();
  d.reserved_objects = j.at("reserved_objects").get<std::vector<std::string>>();
  const auto r = j.at("ratios").get<std::vector<double>>();
  if (r.size() != 3) throw ConfigError("data.ratios must list train, val and test fractions");
  d.ratios = {r[0], r[1], r[2]};
  return d;
}

json eval_json(const EvalConfig& e) {
  return {{"batch_size", e.batch_size},
          {"rotation_metric", eval::rotation_metric_name(e.rotation_metric)},
          {"splits", e.splits}};
}

EvalConfig eval_from_json(const json& j) {
  check_keys(j, {"batch_size", "rotation_metric", "splits"}, "eval");
  EvalConfig e;
  e.batch_size = j.at("batch_size").get<std::size_t>();
  e.rotation_metric = eval::parse_rotation_metric(j.at("rotation_metric").get<std::string>());
  e.splits = j.at("splits").get<std::vector<std::string>>();
  return e;
}

std::uint64_t clip_seed(std::uint64_t root, const std::string& object_id, const std::string& tmpl, std::size_t i) {
  return fnv1a64(std::to_string(root) + "/" + object_id + "/" + tmpl + "/" + std::to_string(i));
}

std::vector<std::string> template_list(const std::vector<std::string>& names) {
  if (names.empty() || (names.size() == 1 && names[0] == "all")) return dataset::template_names();
  for (const auto& n : names) dataset::parse_template(n);
  return names;
}

void log_line(const Log& log, const std::string& line) {
  if (log) log(line);
}

std::string clip_name(const std::string& object_id, const std::string& tmpl, std::size_t i) {
  char buf[8];
  std::snprintf(buf, sizeof(buf), "%02zu", i);
  return object_id + "_" + tmpl + "_" + buf;
}

const std::set<std::string> kSplitNames = {"train", "val", "test_seen", "test_unseen"};

}  // namespace

void RunConfig::validate() const {
  window.validate();
  model.validate();
  train.validate();
  if (variants.empty()) throw ConfigError("at least one model variant is required");
  if (data.clips_per_template == 0) throw ConfigError("data.clips_per_template must be at least 1");
  template_list(data.templates);
  std::set<std::string> ids;
  for (const auto& o : data.objects) {
    if (o.id.empty()) throw ConfigError("object ids must not be empty");
    if (!ids.insert(o.id).second) throw ConfigError("duplicate object id " + o.id);
    if (!(o.scale > 0)) throw ConfigError("object " + o.id + " needs a positive scale");
  }
  for (const auto& r : data.reserved_objects) {
    if (!ids.count(r)) throw ConfigError("reserved object " + r + " is not listed in data.objects");
  }
  if (eval.batch_size == 0) throw ConfigError("eval.batch_size must be at least 1");
  for (const auto& s : eval.splits) {
    if (!kSplitNames.count(s)) throw ConfigError("unknown split '" + s + "'");
  }
  if (window.input_frames != model.input_frames || window.frames() - window.input_frames != model.output_frames) {
    throw ConfigError("window config yields " + std::to_string(window.input_frames) + "+" +
                      std::to_string(window.frames() - window.input_frames) + " frames, model expects " +
                      std::to_string(model.input_frames) + "+" + std::to_string(model.output_frames));
  }
}

RunConfig default_run_config() {
  RunConfig c;
  c.data.objects = {{"box_a", "box", 1.0},       {"box_b", "box", 1.25},     {"chair_a", "chair", 1.0},
                    {"chair_b", "chair", 0.85},  {"table_a", "table", 1.0},  {"table_b", "table", 0.8},
                    {"basket_a", "basket", 1.0}, {"board_a", "board", 1.0}, {"tripod_a", "tripod", 1.0},
                    {"tripod_b", "tripod", 1.2}};
  c.data.reserved_objects = {"tripod_a", "tripod_b"};
  c.train.max_epochs = 100;
  return c;
}

RunConfig smoke_profile() {
  RunConfig c = default_run_config();
  c.data.objects = {{"box_a", "box", 1.0}, {"chair_a", "chair", 1.0}, {"tripod_a", "tripod", 1.0}};
  c.data.reserved_objects = {"tripod_a"};
  c.data.templates = {"push", "lift_carry"};
  c.data.synth.duration = 4.0;
  c.model.human_channels = {8, 8};
  c.model.object_channels = 8;
  c.model.trunk_channels = {16, 16};
  c.model.head_channels = 16;
  c.model.fusion_features = 8;
  c.train.max_epochs = 2;
  c.train.batch_size = 8;
  c.eval.batch_size = 8;
  return c;
}

RunConfig profile(const std::string& name) {
  if (name == "default") return default_run_config();
  if (name == "smoke") return smoke_profile();
  throw ConfigError("unknown profile '" + name + "' (expected default or smoke)");
}

json to_json(const RunConfig& c) {
  json variants = json::array();
  for (auto v : c.variants) variants.push_back(model::variant_name(v));
  return {{"seed", c.seed},
          {"jobs", c.jobs},
          {"deterministic", c.deterministic},
          {"sim", rigidsim::to_json(c.sim)},
          {"data", data_json(c.data)},
          {"window", dataset::to_json(c.window)},
          {"model", model::to_json(c.model)},
          {"variants", variants},
          {"train", train::to_json(c.train)},
          {"eval", eval_json(c.eval)}};
}

RunConfig run_config_from_json(const json& j, const RunConfig& base) {
  check_keys(j, {"seed", "jobs", "deterministic", "sim", "data", "window", "model", "variants", "train", "eval"},
             "run config");
  json merged = to_json(base);
  for (const auto& [k, v] : j.items()) {
    if (merged[k].is_object() && v.is_object()) {
      for (const auto& [kk, vv] : v.items()) merged[k][kk] = vv;
    } else {
      merged[k] = v;
    }
  }
  RunConfig c;
  try {
    c.seed = merged.at("seed").get<std::uint64_t>();
    c.jobs = merged.at("jobs").get<unsigned>();
    c.deterministic = merged.at("deterministic").get<bool>();
    c.sim = rigidsim::sim_config_from_json(merged.at("sim"));
    c.data = data_from_json(merged.at("data"));
    c.window = dataset::window_config_from_json(merged.at("window"));
    c.model = model::model_config_from_json(merged.at("model"));
    c.variants.clear();
    for (const auto& v : merged.at("variants")) c.variants.push_back(model::parse_variant(v.get<std::string>()));
    c.train = train::train_config_from_json(merged.at("train"));
    c.eval = eval_from_json(merged.at("eval"));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const fs::path& path, const RunConfig& base) {
  json j;
  try {
    j = io::read_json(path);
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  return run_config_from_json(j, base);
}

RunConfig resolve(RunConfig cfg) {
  if (cfg.deterministic) cfg.jobs = 1;
  if (cfg.jobs == 0) cfg.jobs = 1;
  cfg.model.seed = cfg.seed;
  cfg.train.seed = cfg.seed;
  cfg.train.checkpoint_dir.clear();
  if (cfg.data.models_dir.empty()) cfg.data.models_dir = fs::path(HOMOTION_DATA_DIR) / "models";
  cfg.validate();
  return cfg;
}

unsigned effective_jobs(const RunConfig& cfg) { return cfg.deterministic ? 1u : std::max(1u, cfg.jobs); }

std::string run_config_hash(const RunConfig& cfg) { return hex64(fnv1a64(to_json(cfg).dump())); }

void write_provenance(const fs::path& dir, const RunConfig& cfg, const json& extra) {
  fs::create_directories(dir);
  io::write_json(dir / "config.json", to_json(cfg));
  json p = {{"tool", "homotion"}, {"version", version()}, {"seed", cfg.seed}, {"config_hash", run_config_hash(cfg)}};
  for (const auto& [k, v] : extra.items()) p[k] = v;
  io::write_json(dir / "provenance.json", p);
}

const char* error_kind(const std::exception& e) {
  if (const auto* h = dynamic_cast<const Error*>(&e)) return h->kind();
  return "internal";
}

int exit_code(const std::exception& e) {
  if (dynamic_cast<const NumericError*>(&e)) return 4;
  if (dynamic_cast<const DataError*>(&e)) return 3;
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const DimensionError*>(&e) ||
      dynamic_cast<const ContractError*>(&e) || dynamic_cast<const GraphError*>(&e)) {
    return 2;
  }
  return 1;
}

json error_json(const std::exception& e, const std::string& stage) {
  json j = {{"error", error_kind(e)}, {"message", e.what()}, {"exit_code", exit_code(e)}};
  if (!stage.empty()) j["stage"] = stage;
  return j;
}

rigidsim::ConceptualModel resolve_model(const RunConfig& cfg, const std::string& name) {
  const fs::path as_path(name);
  if (as_path.has_extension() || as_path.has_parent_path()) return rigidsim::load_model(as_path);
  const fs::path dir = cfg.data.models_dir.empty() ? fs::path(HOMOTION_DATA_DIR) / "models" : cfg.data.models_dir;
  return rigidsim::load_model(dir / (name + ".json"));
}

void run_descriptor(const rigidsim::ConceptualModel& model, const rigidsim::SimConfig& sim, unsigned jobs,
                    const fs::path& out_file) {
  const auto d = rigidsim::compute_descriptor(model, sim, jobs);
  io::write_json(out_file, rigidsim::descriptor_to_json(d, sim, model.class_name));
}

namespace {

struct ClipJob {
  dataset::Template tmpl;
  std::string name;
  std::uint64_t seed;
};

std::vector<fs::path> generate_clips(const dataset::ObjectInstance& inst, const std::vector<ClipJob>& jobs_list,
                                     const dataset::SynthConfig& synth, unsigned jobs, const fs::path& out_dir,
                                     const std::string& format) {
  if (format != "json" && format != "csv") throw ConfigError("video format must be json or csv");
  rigidsim::save_model(inst.model, out_dir / "objects" / (inst.object_id + ".json"));
  std::vector<dataset::MoCapVideo> videos(jobs_list.size());
  const auto skeleton = graphs::default_skeleton();
  parallel_for(jobs_list.size(), jobs, [&](std::size_t i) {
    videos[i] = dataset::synth_generate(jobs_list[i].tmpl, inst, skeleton, synth, jobs_list[i].seed);
    videos[i].id = jobs_list[i].name;
  });
  std::vector<fs::path> out;
  for (const auto& v : videos) {
    const auto path = out_dir / "videos" / (v.id + "." + format);
    dataset::save_video(v, path);
    out.push_back(path);
  }
  return out;
}

}  // namespace

std::vector<fs::path> run_synth(const SynthRequest& req, const dataset::SynthConfig& synth, unsigned jobs,
                                const fs::path& out_dir) {
  if (req.count == 0) throw ConfigError("--count must be at least 1");
  const auto model = rigidsim::load_model(req.model_file);
  const std::string id = req.object_id.empty() ? req.model_file.stem().string() : req.object_id;
  const auto inst = dataset::make_instance(model, id, req.scale);
  std::vector<ClipJob> list;
  for (const auto& t : template_list({req.template_name})) {
    for (std::size_t i = 0; i < req.count; ++i) {
      list.push_back({dataset::parse_template(t), clip_name(id, t, i), clip_seed(req.seed, id, t, i)});
    }
  }
  return generate_clips(inst, list, synth, jobs, out_dir, req.format);
}

std::vector<fs::path> run_synth_config(const RunConfig& cfg, const fs::path& out_dir, const Log& log) {
  std::vector<fs::path> out;
  for (const auto& spec : cfg.data.objects) {
    const auto inst = dataset::make_instance(resolve_model(cfg, spec.model), spec.id, spec.scale);
    std::vector<ClipJob> list;
    for (const auto& t : template_list(cfg.data.templates)) {
      for (std::size_t i = 0; i < cfg.data.clips_per_template; ++i) {
        list.push_back({dataset::parse_template(t), clip_name(spec.id, t, i), clip_seed(cfg.seed, spec.id, t, i)});
      }
    }
    const auto files = generate_clips(inst, list, cfg.data.synth, effective_jobs(cfg), out_dir, "json");
    log_line(log, "synth: " + spec.id + " -> " + std::to_string(files.size()) + " clips");
    out.insert(out.end(), files.begin(), files.end());
  }
  return out;
}

void run_descriptors_dir(const fs::path& objects_dir, const rigidsim::SimConfig& sim, unsigned jobs,
                         const fs::path& out_dir, const Log& log) {
  if (!fs::is_directory(objects_dir)) throw DataError("object directory not found: " + objects_dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(objects_dir)) {
    if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError("no object models in " + objects_dir.string());
  for (const auto& f : files) {
    run_descriptor(rigidsim::load_model(f), sim, jobs, out_dir / f.filename());
    log_line(log, "descriptors: " + f.stem().string());
  }
}

ExtractSummary run_extract(const fs::path& videos_dir, const dataset::WindowConfig& cfg, const fs::path& out_dir,
                           bool keep_moving) {
  cfg.validate();
  fs::path root = fs::is_directory(videos_dir / "videos") ? videos_dir / "videos" : videos_dir;
  if (!fs::is_directory(root)) throw DataError("video directory not found: " + videos_dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    const auto ext = e.path().extension();
    if (ext == ".csv") files.push_back(e.path());
    if (ext == ".json" && io::read_json(e.path()).value("format", "") == "homotion-video") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError("no videos found in " + root.string());
  ExtractSummary s;
  std::vector<InteractionWindow> all;
  for (const auto& f : files) {
    dataset::ExtractStats st;
    auto w = dataset::extract_windows(dataset::load_video(f), cfg, &st, keep_moving);
    s.candidates += st.candidates;
    s.kept += st.kept;
    ++s.videos;
    all.insert(all.end(), std::make_move_iterator(w.begin()), std::make_move_iterator(w.end()));
  }
  fs::create_directories(out_dir);
  dataset::save_windows(all, out_dir / "windows.json");
  io::write_json(out_dir / "stats.json", {{"videos", s.videos}, {"candidates", s.candidates}, {"kept", s.kept},
                                          {"window_config", dataset::to_json(cfg)}});
  return s;
}

dataset::SplitManifest run_split(const std::vector<InteractionWindow>& windows,
                                 const std::vector<std::string>& reserved, const dataset::SplitRatios& ratios,
                                 std::uint64_t seed, const fs::path& out_file) {
  auto m = dataset::make_splits(windows, reserved, ratios, seed);
  io::write_json(out_file, dataset::to_json(m));
  return m;
}

dataset::SplitManifest manifest_for(const std::vector<InteractionWindow>& windows, const RunConfig& cfg,
                                    const fs::path& manifest_file) {
  if (!manifest_file.empty()) return dataset::manifest_from_json(io::read_json(manifest_file));
  return dataset::make_splits(windows, cfg.data.reserved_objects, cfg.data.ratios, cfg.seed);
}

std::vector<InteractionWindow> split_windows(const std::vector<InteractionWindow>& windows,
                                             const dataset::SplitManifest& m, const std::string& split) {
  if (split == "train") return dataset::select(windows, m.train);
  if (split == "val") return dataset::select(windows, m.val);
  if (split == "test_seen") return dataset::select(windows, m.test_seen);
  if (split == "test_unseen") return dataset::select(windows, m.test_unseen);
  if (split == "all") return windows;
  throw ConfigError("unknown split '" + split + "' (expected train, val, test_seen, test_unseen or all)");
}

train::TrainResult run_train(const RunConfig& cfg, const std::vector<InteractionWindow>& windows,
                             const dataset::SplitManifest& manifest, const dataset::DescriptorRegistry* descriptors,
                             const fs::path& out_dir, const Log& log) {
  const auto train_set = split_windows(windows, manifest, "train");
  const auto val_set = split_windows(windows, manifest, "val");
  model::HOGCNModel m(cfg.model);
  auto tc = cfg.train;
  tc.checkpoint_dir = out_dir;
  const std::string tag = model::variant_name(cfg.model.variant);
  log_line(log, "train[" + tag + "]: " + std::to_string(train_set.size()) + " train, " +
                    std::to_string(val_set.size()) + " val windows, " + std::to_string(m.num_parameters()) +
                    " parameters");
  auto result = train::train(m, train_set, val_set, descriptors, tc, [&](const train::EpochRecord& r) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "train[%s]: epoch %zu train %.4f val %.4f%s (%.1fs)", tag.c_str(), r.epoch,
                  r.train_loss, r.val_loss, r.improved ? " *" : "", r.seconds);
    log_line(log, buf);
  });
  return result;
}

eval::MetricsReport run_eval(model::HOGCNModel& model, const std::vector<InteractionWindow>& windows,
                             const dataset::DescriptorRegistry* descriptors, const std::string& split,
                             const EvalConfig& cfg) {
  eval::EvalOptions opt;
  opt.split = split;
  opt.batch_size = cfg.batch_size;
  opt.rotation_metric = cfg.rotation_metric;
  auto r = eval::evaluate(model, windows, descriptors, opt);
  r.validate();
  return r;
}

namespace {

json points_json(const tensor::Tensor& t, std::size_t b, std::size_t k) {
  const std::size_t K = t.size(1), n = t.size(2);
  const double* p = t.data().data() + (b * K + k) * n * 3;
  json a = json::array();
  for (std::size_t i = 0; i < n; ++i) a.push_back({p[3 * i], p[3 * i + 1], p[3 * i + 2]});
  return a;
}

}  // namespace

json predict(model::HOGCNModel& model, const std::vector<InteractionWindow>& windows,
             const dataset::DescriptorRegistry* descriptors, const std::string& checkpoint_name,
             const std::string& windows_name) {
  const auto& mc = model.config();
  model.set_training(false);
  tensor::NoGradScope no_grad;
  json records = json::array();
  double total_ms = 0.0;
  for (const auto& w : windows) {
    const std::size_t joints = w.frames.empty() ? 0 : w.frames[0].skeleton.size();
    const std::size_t keypoints = w.frames.empty() ? 0 : w.frames[0].object_keypoints.size();
    if (w.input_frames() != mc.input_frames || w.target_frames() != mc.output_frames || joints != mc.num_joints() ||
        keypoints != mc.num_keypoints) {
      throw ConfigError("checkpoint " + checkpoint_name + " expects " + std::to_string(mc.input_frames) + "+" +
                        std::to_string(mc.output_frames) + " frames with " + std::to_string(mc.num_joints()) +
                        " joints and " + std::to_string(mc.num_keypoints) + " keypoints, but window " + w.id +
                        " in " + windows_name + " has " + std::to_string(w.input_frames()) + "+" +
                        std::to_string(w.target_frames()) + " frames with " + std::to_string(joints) +
                        " joints and " + std::to_string(keypoints) + " keypoints");
    }
    const auto t0 = std::chrono::steady_clock::now();
    const auto batch = model::make_batch({&w}, descriptors, mc);
    const auto pred = model.forward(batch);
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    total_ms += ms;
    json frames = json::array();
    for (std::size_t k = 0; k < mc.output_frames; ++k) {
      const double* d = pred.delta.data().data() + k * 6;
      frames.push_back({{"horizon_s", static_cast<double>(k + 1) * eval::kHorizonSeconds},
                        {"skeleton", points_json(pred.human, 0, k)},
                        {"delta", {{"translation", {d[0], d[1], d[2]}}, {"rotation", {d[3], d[4], d[5]}}}},
                        {"motion_prob", pred.motion_prob[k]},
                        {"object_keypoints", points_json(pred.object_keypoints, 0, k)}});
    }
    records.push_back({{"window_id", w.id}, {"object_id", w.object_id}, {"latency_ms", ms}, {"frames", frames}});
  }
  return {{"format", "homotion-predictions"},
          {"version", 1},
          {"tool_version", version()},
          {"checkpoint", checkpoint_name},
          {"variant", model::variant_name(mc.variant)},
          {"units", {{"position", "mm"}, {"rotation", "rad"}}},
          {"count", records.size()},
          {"mean_latency_ms", records.empty() ? 0.0 : total_ms / static_cast<double>(records.size())},
          {"predictions", records}};
}

const std::vector<std::string>& pipeline_stages() {
  static const std::vector<std::string> stages = {"synth", "descriptors", "extract", "split", "train", "eval"};
  return stages;
}

namespace {

[[noreturn]] void rethrow_in_stage(const std::string& stage) {
  const std::string prefix = "stage " + stage + ": ";
  try {
    throw;
  } catch (const NumericError& e) {
    throw NumericError(prefix + e.what());
  } catch (const DataError& e) {
    throw DataError(prefix + e.what());
  } catch (const ConfigError& e) {
    throw ConfigError(prefix + e.what());
  } catch (const DimensionError& e) {
    throw DimensionError(prefix + e.what());
  } catch (const ContractError& e) {
    throw ContractError(prefix + e.what());
  } catch (const GraphError& e) {
    throw GraphError(prefix + e.what());
  } catch (const std::exception& e) {
    throw std::runtime_error(prefix + e.what());
  }
}

void run_stage(const RunConfig& cfg, const std::string& stage, const fs::path& run_dir, const Log& log) {
  const fs::path dir = run_dir / stage;
  const unsigned jobs = effective_jobs(cfg);
  if (stage == "synth") {
    run_synth_config(cfg, dir, log);
  } else if (stage == "descriptors") {
    run_descriptors_dir(run_dir / "synth" / "objects", cfg.sim, jobs, dir, log);
  } else if (stage == "extract") {
    const auto s = run_extract(run_dir / "synth" / "videos", cfg.window, dir);
    log_line(log, "extract: " + std::to_string(s.kept) + " of " + std::to_string(s.candidates) +
                      " windows kept from " + std::to_string(s.videos) + " videos");
  } else if (stage == "split") {
    const auto windows = dataset::load_window_dir(run_dir / "extract");
    const auto m = run_split(windows, cfg.data.reserved_objects, cfg.data.ratios, cfg.seed, dir / "manifest.json");
    log_line(log, "split: train " + std::to_string(m.train.size()) + ", val " + std::to_string(m.val.size()) +
                      ", test_seen " + std::to_string(m.test_seen.size()) + ", test_unseen " +
                      std::to_string(m.test_unseen.size()));
  } else if (stage == "train" || stage == "eval") {
    const auto windows = dataset::load_window_dir(run_dir / "extract");
    const auto manifest = dataset::manifest_from_json(io::read_json(run_dir / "split" / "manifest.json"));
    const auto registry = dataset::DescriptorRegistry::load_dir(run_dir / "descriptors");
    if (stage == "train") {
      for (auto v : cfg.variants) {
        RunConfig vc = cfg;
        vc.model.variant = v;
        run_train(vc, windows, manifest, &registry, dir / model::variant_name(v), log);
      }
    } else {
      for (const auto& split : cfg.eval.splits) {
        const auto subset = split_windows(windows, manifest, split);
        if (subset.empty()) {
          log_line(log, "eval: split " + split + " is empty, skipped");
          continue;
        }
        std::vector<eval::MetricsReport> reports;
        for (auto v : cfg.variants) {
          const std::string name = model::variant_name(v);
          auto m = model::HOGCNModel::load(run_dir / "train" / name / "best");
          reports.push_back(run_eval(m, subset, &registry, split, cfg.eval));
          io::write_text(dir / name / ("report_" + split + ".csv"), eval::report_csv(reports.back()));
          log_line(log, "eval[" + name + "] " + split + ": mean MPJPE-O " +
                            io::format_double(reports.back().mpjpe_o.summary.mean) + " mm");
        }
        const auto table = eval::compare_csv(reports);
        io::write_text(dir / ("compare_" + split + ".csv"), table);
        io::write_text(dir / ("curves_" + split + ".svg"), eval::plot_svg(reports));
        if (split == cfg.eval.splits.front()) io::write_text(run_dir / "report.csv", table);
      }
    }
  }
  write_provenance(dir, cfg, {{"stage", stage}});
}

}  // namespace

void run_pipeline(const RunConfig& raw, const fs::path& run_dir, const PipelineOptions& options) {
  const RunConfig cfg = resolve(raw);
  const std::string hash = run_config_hash(cfg);
  if (options.resume && fs::exists(run_dir / "config.json")) {
    const auto previous = io::read_json(run_dir / "config.json");
    if (previous != to_json(cfg)) {
      throw ConfigError("run directory " + run_dir.string() +
                        " was created with a different config; rerun without --resume");
    }
  }
  fs::create_directories(run_dir);
  write_provenance(run_dir, cfg);
  bool rerun = !options.resume;
  for (const auto& stage : pipeline_stages()) {
    const fs::path dir = run_dir / stage;
    const fs::path marker = dir / ".done";
    if (!rerun && fs::exists(marker) && io::read_text(marker) == hash + "\n") {
      log_line(options.log, "stage " + stage + ": complete, skipped");
      continue;
    }
    rerun = true;
    log_line(options.log, "stage " + stage + ": running");
    try {
      fs::remove_all(dir);
      if (stage == "eval") fs::remove(run_dir / "report.csv");
      run_stage(cfg, stage, run_dir, options.log);
    } catch (...) {
      rethrow_in_stage(stage);
    }
    io::write_text(marker, hash + "\n");
  }
}

}  // namespace homotion::cli
