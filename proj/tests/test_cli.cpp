#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>

#include "homotion/cli.hpp"
#include "homotion/errors.hpp"
#include "homotion/io.hpp"

using namespace homotion;
using namespace homotion::cli;
using nlohmann::json;

namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("homotion_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

Run run_tool(const std::string& args) {
  static int calls = 0;
  const auto dir = fs::temp_directory_path() /
                   ("homotion_cli_tool_" + std::to_string(::getpid()) + "_" + std::to_string(calls++));
  fs::create_directories(dir);
  const auto out = dir / "stdout.txt", err = dir / "stderr.txt";
  const std::string cmd =
      std::string(HOMOTION_CLI_PATH) + " " + args + " >" + out.string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = io::read_text(out);
  r.err = io::read_text(err);
  return r;
}

json last_json_line(const std::string& text) {
  auto end = text.find_last_not_of('\n');
  auto begin = text.rfind('\n', end);
  begin = begin == std::string::npos ? 0 : begin + 1;
  return json::parse(text.substr(begin, end - begin + 1));
}

model::ModelConfig small_model(model::Variant v = model::Variant::kFull) {
  model::ModelConfig c;
  c.variant = v;
  c.human_channels = {8, 8};
  c.object_channels = 8;
  c.trunk_channels = {16, 16};
  c.head_channels = 16;
  c.fusion_features = 8;
  return c;
}

struct Windows {
  std::vector<dataset::InteractionWindow> windows;
  dataset::DescriptorRegistry registry;
};

// At least 100 windows from one box instance.
const Windows& windows_fixture() {
  static const Windows w = [] {
    Windows out;
    const auto base = rigidsim::load_model(std::string(HOMOTION_DATA_DIR) + "/models/box.json");
    const auto inst = dataset::make_instance(base, "box_1", 1.0);
    out.registry.add(inst.object_id, rigidsim::compute_descriptor(inst.model, rigidsim::SimConfig{}));
    std::uint64_t seed = 3;
    for (const auto& name : dataset::template_names()) {
      auto v = dataset::synth_generate(dataset::parse_template(name), inst, graphs::default_skeleton(),
                                       dataset::SynthConfig{}, seed++);
      v.id = "box_1_" + name;
      auto ws = dataset::extract_windows(v, dataset::WindowConfig{}, nullptr, true);
      out.windows.insert(out.windows.end(), ws.begin(), ws.end());
      if (out.windows.size() >= 110) break;
    }
    return out;
  }();
  return w;
}

struct SmokeRun {
  fs::path dir;
  std::vector<std::string> log;
};

const SmokeRun& smoke_run() {
  static const SmokeRun r = [] {
    SmokeRun out;
    out.dir = scratch("smoke_a");
    PipelineOptions opt;
    opt.log = [&](const std::string& line) { out.log.push_back(line); };
    run_pipeline(smoke_profile(), out.dir, opt);
    return out;
  }();
  return r;
}

std::vector<std::string> ran_stages(const std::vector<std::string>& log) {
  std::vector<std::string> out;
  for (const auto& line : log) {
    const std::string suffix = ": running";
    if (line.rfind("stage ", 0) == 0 && line.size() > suffix.size() &&
        line.compare(line.size() - suffix.size(), suffix.size(), suffix) == 0) {
      out.push_back(line.substr(6, line.size() - 6 - suffix.size()));
    }
  }
  return out;
}

}  // namespace

TEST(RunConfigTest, DefaultsValidateAndRoundTrip) {
  const auto c = default_run_config();
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(to_json(run_config_from_json(to_json(c))), to_json(c));
  const auto s = smoke_profile();
  EXPECT_EQ(to_json(run_config_from_json(to_json(s), default_run_config())), to_json(s));
}

TEST(RunConfigTest, UnknownKeysAreRejectedAtEveryLevel) {
  EXPECT_THROW(run_config_from_json({{"sedd", 3}}), ConfigError);
  for (const std::string section : {"sim", "data", "window", "model", "train", "eval"}) {
    json j = {{section, {{"not_an_option", 1}}}};
    EXPECT_THROW(run_config_from_json(j), ConfigError) << section;
  }
  json obj = {{"data", {{"objects", {{{"id", "x"}, {"model", "box"}, {"colour", "red"}}}}, {"reserved_objects", json::array()}}}};
  EXPECT_THROW(run_config_from_json(obj), ConfigError);
  EXPECT_THROW(run_config_from_json({{"seed", "seven"}}), ConfigError);
  EXPECT_THROW(run_config_from_json({{"variants", {"fancy"}}}), ConfigError);
}

TEST(RunConfigTest, PartialOverridesKeepOtherDefaults) {
  const auto c = run_config_from_json({{"seed", 9}, {"train", {{"batch_size", 4}}}, {"model", {{"head_channels", 32}}}});
  const auto d = default_run_config();
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.train.batch_size, 4u);
  EXPECT_EQ(c.train.max_epochs, d.train.max_epochs);
  EXPECT_EQ(c.train.adam.learning_rate, d.train.adam.learning_rate);
  EXPECT_EQ(c.model.head_channels, 32u);
  EXPECT_EQ(c.model.trunk_channels, d.model.trunk_channels);
  EXPECT_EQ(c.data.objects.size(), d.data.objects.size());
}

TEST(RunConfigTest, ValidationCatchesInconsistentSections) {
  EXPECT_THROW(run_config_from_json({{"data", {{"ratios", {0.5, 0.5}}}}}), ConfigError);
  EXPECT_THROW(run_config_from_json({{"data", {{"reserved_objects", {"ghost"}}}}}), ConfigError);
  EXPECT_THROW(run_config_from_json({{"window", {{"input_frames", 8}}}}), ConfigError);
  EXPECT_THROW(run_config_from_json({{"eval", {{"splits", {"holdout"}}}}}), ConfigError);
  EXPECT_THROW(run_config_from_json({{"variants", json::array()}}), ConfigError);
  EXPECT_THROW(run_config_from_json({{"data", {{"templates", {"juggle"}}}}}), ConfigError);
  EXPECT_THROW(profile("huge"), ConfigError);
}

TEST(RunConfigTest, BundledConfigFilesMatchProfiles) {
  const fs::path root = fs::path(HOMOTION_DATA_DIR).parent_path() / "configs";
  auto expect_same = [](RunConfig a, RunConfig b) {
    a.data.models_dir.clear();
    b.data.models_dir.clear();
    EXPECT_EQ(to_json(a), to_json(b));
  };
  expect_same(load_run_config(root / "default.json"), default_run_config());
  expect_same(load_run_config(root / "smoke.json"), smoke_profile());
}

TEST(RunConfigTest, MissingConfigFileIsConfigError) {
  EXPECT_THROW(load_run_config("/nonexistent/run.json"), ConfigError);
}

TEST(RunConfigTest, ResolvePropagatesRootSeedAndClampsJobs) {
  auto c = default_run_config();
  c.seed = 77;
  c.jobs = 8;
  const auto r = resolve(c);
  EXPECT_EQ(r.model.seed, 77u);
  EXPECT_EQ(r.train.seed, 77u);
  EXPECT_EQ(r.jobs, 1u);
  EXPECT_EQ(effective_jobs(r), 1u);
  EXPECT_EQ(r.data.models_dir, fs::path(HOMOTION_DATA_DIR) / "models");
  c.deterministic = false;
  EXPECT_EQ(effective_jobs(resolve(c)), 8u);
}

TEST(Provenance, RecordsResolvedConfigVersionAndSeed) {
  const auto dir = scratch("provenance");
  const auto cfg = resolve(smoke_profile());
  write_provenance(dir, cfg, {{"stage", "x"}});
  EXPECT_EQ(io::read_json(dir / "config.json"), to_json(cfg));
  const auto p = io::read_json(dir / "provenance.json");
  EXPECT_EQ(p.at("version"), version());
  EXPECT_EQ(p.at("seed"), cfg.seed);
  EXPECT_EQ(p.at("config_hash"), run_config_hash(cfg));
  EXPECT_EQ(p.at("stage"), "x");
  auto other = cfg;
  other.seed = 2;
  EXPECT_NE(run_config_hash(other), run_config_hash(cfg));
}

TEST(ErrorReporting, ExitCodesByKind) {
  EXPECT_EQ(exit_code(ConfigError("a")), 2);
  EXPECT_EQ(exit_code(DimensionError("a")), 2);
  EXPECT_EQ(exit_code(DataError("a")), 3);
  EXPECT_EQ(exit_code(NumericError("a")), 4);
  EXPECT_EQ(exit_code(std::runtime_error("a")), 1);
  const auto j = error_json(DataError("missing file"), "extract");
  EXPECT_EQ(j.at("error"), "data");
  EXPECT_EQ(j.at("message"), "missing file");
  EXPECT_EQ(j.at("exit_code"), 3);
  EXPECT_EQ(j.at("stage"), "extract");
}

TEST(Predict, HundredWindowsInOrderWithSchema) {
  const auto& f = windows_fixture();
  ASSERT_GE(f.windows.size(), 100u);
  const std::vector<dataset::InteractionWindow> ws(f.windows.begin(), f.windows.begin() + 100);
  model::HOGCNModel m(small_model());
  const auto j = predict(m, ws, &f.registry, "ckpt", "windows.json");
  EXPECT_EQ(j.at("format"), "homotion-predictions");
  EXPECT_EQ(j.at("checkpoint"), "ckpt");
  EXPECT_EQ(j.at("variant"), "full");
  EXPECT_GT(j.at("mean_latency_ms").get<double>(), 0.0);
  const auto& preds = j.at("predictions");
  ASSERT_EQ(preds.size(), 100u);
  const auto& mc = m.config();
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto& p = preds[i];
    EXPECT_EQ(p.at("window_id"), ws[i].id);
    EXPECT_GT(p.at("latency_ms").get<double>(), 0.0);
    const auto& frames = p.at("frames");
    ASSERT_EQ(frames.size(), mc.output_frames);
    for (std::size_t k = 0; k < frames.size(); ++k) {
      const auto& fr = frames[k];
      EXPECT_NEAR(fr.at("horizon_s").get<double>(), 0.1 * static_cast<double>(k + 1), 1e-12);
      ASSERT_EQ(fr.at("skeleton").size(), mc.num_joints());
      ASSERT_EQ(fr.at("object_keypoints").size(), mc.num_keypoints);
      ASSERT_EQ(fr.at("delta").at("translation").size(), 3u);
      ASSERT_EQ(fr.at("delta").at("rotation").size(), 3u);
      const double prob = fr.at("motion_prob").get<double>();
      EXPECT_GE(prob, 0.0);
      EXPECT_LE(prob, 1.0);
      for (const auto& pt : fr.at("skeleton")) ASSERT_EQ(pt.size(), 3u);
    }
  }
  EXPECT_TRUE(m.config().variant == model::Variant::kFull);
  EXPECT_FALSE(m.training());
}

TEST(Predict, StaticWindowFromTrainedModelValidates) {
  const auto& f = windows_fixture();
  auto w = f.windows.front();
  for (auto& fr : w.frames) fr = w.frames.front();
  for (auto& d : w.labels.deltas) d = PoseDelta{};
  for (auto& c : w.labels.motion) c = 0;
  model::HOGCNModel m(small_model());
  train::TrainConfig tc;
  tc.batch_size = 4;
  tc.max_epochs = 2;
  const std::vector<dataset::InteractionWindow> tr(f.windows.begin(), f.windows.begin() + 8);
  train::train(m, tr, {w}, &f.registry, tc);
  const auto j = predict(m, {w}, &f.registry, "ckpt", "static.json");
  ASSERT_EQ(j.at("predictions").size(), 1u);
  for (const auto& fr : j.at("predictions")[0].at("frames")) {
    for (const auto& v : fr.at("delta").at("translation")) EXPECT_TRUE(std::isfinite(v.get<double>()));
    for (const auto& pt : fr.at("object_keypoints")) {
      for (const auto& v : pt) EXPECT_TRUE(std::isfinite(v.get<double>()));
    }
  }
}

TEST(Predict, DimensionMismatchNamesBothSources) {
  const auto& f = windows_fixture();
  dataset::WindowConfig wc;
  wc.input_frames = 8;
  const auto base = rigidsim::load_model(std::string(HOMOTION_DATA_DIR) + "/models/box.json");
  const auto inst = dataset::make_instance(base, "box_1", 1.0);
  auto v = dataset::synth_generate(dataset::Template::kPush, inst, graphs::default_skeleton(), dataset::SynthConfig{}, 5);
  v.id = "v";
  const auto ws = dataset::extract_windows(v, wc, nullptr, true);
  ASSERT_FALSE(ws.empty());
  model::HOGCNModel m(small_model());
  try {
    predict(m, ws, &f.registry, "runs/a/best", "short_windows.json");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("runs/a/best"), std::string::npos) << msg;
    EXPECT_NE(msg.find("short_windows.json"), std::string::npos) << msg;
  }
}

TEST(Pipeline, SmokeProfileCompletesWithProvenance) {
  const auto& r = smoke_run();
  EXPECT_EQ(ran_stages(r.log), pipeline_stages());
  ASSERT_TRUE(fs::exists(r.dir / "report.csv"));
  for (const auto& stage : pipeline_stages()) {
    const auto dir = r.dir / stage;
    EXPECT_TRUE(fs::exists(dir / ".done")) << stage;
    EXPECT_TRUE(fs::exists(dir / "config.json")) << stage;
    EXPECT_EQ(io::read_json(dir / "provenance.json").at("version"), version()) << stage;
  }
  for (const std::string v : {"full", "no_descriptor", "base"}) {
    EXPECT_TRUE(fs::exists(r.dir / "train" / v / "best")) << v;
    EXPECT_TRUE(fs::exists(r.dir / "train" / v / "curves.csv")) << v;
    const auto rep = eval::report_from_csv(io::read_text(r.dir / "eval" / v / "report_test_seen.csv"));
    EXPECT_NO_THROW(rep.validate());
  }
  const auto table = io::read_text(r.dir / "report.csv");
  EXPECT_EQ(table.rfind("metric,horizon,full,no_descriptor,base,best", 0), 0u);
  EXPECT_TRUE(fs::exists(r.dir / "eval" / "curves_test_unseen.svg"));
}

TEST(Pipeline, RerunWithSameSeedIsByteIdentical) {
  const auto& a = smoke_run();
  const auto dir = scratch("smoke_b");
  run_pipeline(smoke_profile(), dir, {});
  EXPECT_EQ(io::read_text(dir / "report.csv"), io::read_text(a.dir / "report.csv"));
  EXPECT_EQ(io::read_text(dir / "split" / "manifest.json"), io::read_text(a.dir / "split" / "manifest.json"));
}

TEST(Pipeline, ResumeRerunsOnlyMissingStages) {
  const auto& a = smoke_run();
  const auto dir = scratch("smoke_resume");
  fs::remove(dir);
  fs::copy(a.dir, dir, fs::copy_options::recursive);
  std::vector<std::string> log;
  PipelineOptions opt;
  opt.resume = true;
  opt.log = [&](const std::string& line) { log.push_back(line); };

  run_pipeline(smoke_profile(), dir, opt);
  EXPECT_TRUE(ran_stages(log).empty());

  log.clear();
  fs::remove_all(dir / "eval");
  fs::remove(dir / "report.csv");
  run_pipeline(smoke_profile(), dir, opt);
  EXPECT_EQ(ran_stages(log), std::vector<std::string>({"eval"}));
  EXPECT_EQ(io::read_text(dir / "report.csv"), io::read_text(a.dir / "report.csv"));

  log.clear();
  fs::remove(dir / "split" / ".done");
  run_pipeline(smoke_profile(), dir, opt);
  EXPECT_EQ(ran_stages(log), std::vector<std::string>({"split", "train", "eval"}));
  EXPECT_EQ(io::read_text(dir / "report.csv"), io::read_text(a.dir / "report.csv"));

  auto other = smoke_profile();
  other.seed = 99;
  EXPECT_THROW(run_pipeline(other, dir, opt), ConfigError);
}

TEST(Pipeline, StageFailureNamesStageAndKeepsKind) {
  const auto dir = scratch("smoke_fail");
  auto cfg = smoke_profile();
  cfg.data.models_dir = dir / "no_models_here";
  try {
    run_pipeline(cfg, dir / "run", {});
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("stage synth"), std::string::npos) << e.what();
  }
  EXPECT_FALSE(fs::exists(dir / "run" / "synth" / ".done"));
}

TEST(Tool, VersionAndUsage) {
  const auto v = run_tool("--version");
  EXPECT_EQ(v.code, 0);
  EXPECT_NE(v.out.find(version()), std::string::npos);
  EXPECT_EQ(run_tool("").code, 2);
  EXPECT_EQ(run_tool("train --no-such-flag").code, 2);
}

TEST(Tool, ConfigErrorsExitTwoWithJson) {
  const auto dir = scratch("tool_config");
  io::write_json(dir / "bad.json", {{"train", {{"lr", 0.1}}}});
  const auto r = run_tool("config --config " + (dir / "bad.json").string());
  EXPECT_EQ(r.code, 2);
  const auto j = last_json_line(r.err);
  EXPECT_EQ(j.at("error"), "config");
  EXPECT_NE(j.at("message").get<std::string>().find("lr"), std::string::npos);
}

TEST(Tool, DataErrorsExitThreeWithJson) {
  const auto r = run_tool("extract --in /nonexistent/videos --out " + (scratch("tool_data") / "w").string() + "");
  EXPECT_EQ(r.code, 3);
  EXPECT_EQ(last_json_line(r.err).at("error"), "data");
}

TEST(Tool, SubcommandsChainOnDisk) {
  const auto dir = scratch("tool_chain");
  const std::string d = dir.string();
  const std::string prof = " --profile smoke -q";
  ASSERT_EQ(run_tool("synth --model box --object-id box_t --template push --count 2 --out " + d + "/data" + prof).code, 0);
  EXPECT_TRUE(fs::exists(dir / "data" / "objects" / "box_t.json"));
  EXPECT_TRUE(fs::exists(dir / "data" / "videos" / "box_t_push_01.json"));
  ASSERT_EQ(run_tool("descriptors --objects " + d + "/data/objects --out " + d + "/desc" + prof).code, 0);
  EXPECT_EQ(rigidsim::load_descriptor(dir / "desc" / "box_t.json").values.size(), 360u);
  ASSERT_EQ(run_tool("extract --in " + d + "/data --out " + d + "/windows" + prof).code, 0);
  ASSERT_EQ(run_tool("split --data " + d + "/windows --out " + d + "/manifest.json" + prof).code, 0);
  const auto t = run_tool("train --data " + d + "/windows --descriptors " + d + "/desc --manifest " + d +
                          "/manifest.json --epochs 1 --out " + d + "/run" + prof);
  ASSERT_EQ(t.code, 0) << t.err;
  EXPECT_EQ(last_json_line(t.out).at("epochs"), 1);
  EXPECT_TRUE(fs::exists(dir / "run" / "provenance.json"));
  const auto e = run_tool("eval --checkpoint " + d + "/run/best --data " + d + "/windows --descriptors " + d +
                          "/desc --manifest " + d + "/manifest.json --split train --out " + d + "/report.csv" + prof);
  ASSERT_EQ(e.code, 0) << e.err;
  ASSERT_EQ(run_tool("plot --reports " + d + "/report.csv --out " + d + "/c.svg --table " + d + "/t.csv").code, 0);
  EXPECT_EQ(io::read_text(dir / "c.svg").rfind("<svg", 0), 0u);
  const auto p = run_tool("predict --checkpoint " + d + "/run/best --data " + d + "/windows --descriptors " + d +
                          "/desc --limit 3 --out " + d + "/pred.json" + prof);
  ASSERT_EQ(p.code, 0) << p.err;
  EXPECT_EQ(io::read_json(dir / "pred.json").at("predictions").size(), 3u);
}
