#pragma once

#include <cstdint>
#include <exception>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "homotion/dataset.hpp"
#include "homotion/eval.hpp"
#include "homotion/model.hpp"
#include "homotion/rigidsim.hpp"
#include "homotion/train.hpp"

// Artifact plumbing shared by the homotion tool: the unified run config,
// one function per subcommand and the resumable pipeline.
namespace homotion::cli {

namespace fs = std::filesystem;

const char* version();

struct ObjectSpec {
  std::string id;
  std::string model;  // bundled class name or path to a model file
  double scale = 1.0;
};

struct DataConfig {
  fs::path models_dir;  // empty: the bundled models
  std::vector<ObjectSpec> objects;
  std::vector<std::string> templates;  // empty: every template
  std::size_t clips_per_template = 1;
  dataset::SynthConfig synth;
  std::vector<std::string> reserved_objects;  // held out as test_unseen
  dataset::SplitRatios ratios;
};

struct EvalConfig {
  std::size_t batch_size = 32;
  eval::RotationMetric rotation_metric = eval::RotationMetric::kGeodesic;
  std::vector<std::string> splits = {"test_seen", "test_unseen"};
};

struct RunConfig {
  std::uint64_t seed = 1;
  unsigned jobs = 1;
  bool deterministic = true;  // forces jobs = 1
  rigidsim::SimConfig sim;
  DataConfig data;
  dataset::WindowConfig window;
  model::ModelConfig model;
  std::vector<model::Variant> variants = {model::Variant::kFull, model::Variant::kNoDescriptor,
                                          model::Variant::kBase};
  train::TrainConfig train;
  EvalConfig eval;

  void validate() const;
};

RunConfig default_run_config();
// Seconds-scale end-to-end profile.
RunConfig smoke_profile();
RunConfig profile(const std::string& name);  // "default" or "smoke"

nlohmann::json to_json(const RunConfig& cfg);
// Strict: unknown keys at any level are a ConfigError. Missing keys keep
// the defaults of `base`.
RunConfig run_config_from_json(const nlohmann::json& j, const RunConfig& base = default_run_config());
RunConfig load_run_config(const fs::path& path, const RunConfig& base = default_run_config());

// Pushes the root seed into the model and train sections, clamps jobs in
// deterministic mode and fills in the bundled models directory.
RunConfig resolve(RunConfig cfg);

unsigned effective_jobs(const RunConfig& cfg);

// Writes config.json (resolved) and provenance.json (tool, version, seed,
// config hash) into `dir`.
void write_provenance(const fs::path& dir, const RunConfig& cfg, const nlohmann::json& extra = nlohmann::json::object());
std::string run_config_hash(const RunConfig& cfg);

// Exit code for an exception: 2 config, 3 data, 4 numeric, 1 otherwise.
int exit_code(const std::exception& e);
const char* error_kind(const std::exception& e);
nlohmann::json error_json(const std::exception& e, const std::string& stage = "");

using Log = std::function<void(const std::string&)>;

// Subcommand bodies.
rigidsim::ConceptualModel resolve_model(const RunConfig& cfg, const std::string& model);
void run_descriptor(const rigidsim::ConceptualModel& model, const rigidsim::SimConfig& sim, unsigned jobs,
                    const fs::path& out_file);

struct SynthRequest {
  std::string template_name;  // or "all"
  fs::path model_file;
  std::string object_id;  // empty: file stem
  double scale = 1.0;
  std::size_t count = 1;
  std::uint64_t seed = 1;
  std::string format = "json";  // json or csv
};
// Writes <out>/objects/<object_id>.json and <out>/videos/<video_id>.<fmt>.
std::vector<fs::path> run_synth(const SynthRequest& req, const dataset::SynthConfig& synth, unsigned jobs,
                                const fs::path& out_dir);

// Generates every configured object x template x clip into `out_dir`.
std::vector<fs::path> run_synth_config(const RunConfig& cfg, const fs::path& out_dir, const Log& log = {});

// Computes descriptors for every model in `objects_dir` into `out_dir`.
void run_descriptors_dir(const fs::path& objects_dir, const rigidsim::SimConfig& sim, unsigned jobs,
                         const fs::path& out_dir, const Log& log = {});

struct ExtractSummary {
  std::size_t videos = 0;
  std::size_t candidates = 0;
  std::size_t kept = 0;
};
// Reads every video (json or csv) under `videos_dir` and writes
// <out_dir>/windows.json plus stats.json.
ExtractSummary run_extract(const fs::path& videos_dir, const dataset::WindowConfig& cfg, const fs::path& out_dir,
                           bool keep_moving = false);

dataset::SplitManifest run_split(const std::vector<dataset::InteractionWindow>& windows,
                                 const std::vector<std::string>& reserved, const dataset::SplitRatios& ratios,
                                 std::uint64_t seed, const fs::path& out_file);

// Loads a manifest when given, otherwise splits `windows` with the config.
dataset::SplitManifest manifest_for(const std::vector<dataset::InteractionWindow>& windows, const RunConfig& cfg,
                                    const fs::path& manifest_file);

std::vector<dataset::InteractionWindow> split_windows(const std::vector<dataset::InteractionWindow>& windows,
                                                      const dataset::SplitManifest& manifest,
                                                      const std::string& split);

// Trains cfg.model on the train split, validating on val. Writes best/,
// last/ and curves.csv under `out_dir`.
train::TrainResult run_train(const RunConfig& cfg, const std::vector<dataset::InteractionWindow>& windows,
                             const dataset::SplitManifest& manifest, const dataset::DescriptorRegistry* descriptors,
                             const fs::path& out_dir, const Log& log = {});

eval::MetricsReport run_eval(model::HOGCNModel& model, const std::vector<dataset::InteractionWindow>& windows,
                             const dataset::DescriptorRegistry* descriptors, const std::string& split,
                             const EvalConfig& cfg);

// Predictions for each window, one forward pass per window, in input order.
// A window whose dimensions disagree with the checkpoint raises ConfigError
// naming both sources.
nlohmann::json predict(model::HOGCNModel& model, const std::vector<dataset::InteractionWindow>& windows,
                       const dataset::DescriptorRegistry* descriptors, const std::string& checkpoint_name,
                       const std::string& windows_name);

// Stage names in execution order.
const std::vector<std::string>& pipeline_stages();

struct PipelineOptions {
  bool resume = false;
  Log log;
};

// synth -> descriptors -> extract -> split -> train -> eval under `run_dir`.
// Each finished stage leaves a .done marker; with `resume` completed stages
// are skipped until the first missing one. Failures are rethrown with the
// stage name prefixed, keeping their kind.
void run_pipeline(const RunConfig& cfg, const fs::path& run_dir, const PipelineOptions& options);

}  // namespace homotion::cli
