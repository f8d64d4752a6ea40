// memflow command-line entry point: dataset generation, training, evaluation,
// online inference and one-step-ahead prediction.
#include "memflow/checkpoint.hpp"
#include "memflow/evaluate.hpp"
#include "memflow/io.hpp"
#include "memflow/predictor.hpp"
#include "memflow/train.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <regex>
#include <sstream>

namespace fs = std::filesystem;
using memflow::Config;
using memflow::Error;
using memflow::ErrorCode;
using nlohmann::json;

namespace {

/// Config files are JSON objects with one section per subcommand, keyed by
/// long option names, e.g. {"train": {"steps": 4000, "lr": 1e-3}}.
class JsonConfig : public CLI::Config {
 public:
  std::string to_config(const CLI::App* app, bool default_also, bool, std::string) const override {
    return to_json(app, default_also).dump(2);
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    json j;
    try {
      input >> j;
    } catch (const json::exception& e) {
      throw CLI::ConversionError(std::string("config file is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw CLI::ConversionError("config file must hold a JSON object");
    std::vector<CLI::ConfigItem> out;
    flatten(j, "", {}, out);
    return out;
  }

  static json to_json(const CLI::App* app, bool default_also) {
    json j = json::object();
    for (const CLI::Option* opt : app->get_options({})) {
      if (opt->get_lnames().empty() || !opt->get_configurable()) continue;
      const std::string& name = opt->get_lnames()[0];
      if (opt->get_type_size() != 0) {
        if (opt->count() == 1) j[name] = opt->results().at(0);
        else if (opt->count() > 1) j[name] = opt->results();
        else if (default_also && !opt->get_default_str().empty()) j[name] = opt->get_default_str();
      } else if (opt->count() > 0 || default_also) {
        j[name] = opt->count() > 0;
      }
    }
    for (const CLI::App* sub : app->get_subcommands({}))
      if (sub->parsed()) j[sub->get_name()] = to_json(sub, default_also);
    return j;
  }

 private:
  static std::string scalar(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    if (v.is_number()) return v.dump();
    throw CLI::ConversionError("unsupported config value " + v.dump());
  }

  static void flatten(const json& j, const std::string& name, std::vector<std::string> parents,
                      std::vector<CLI::ConfigItem>& out) {
    if (j.is_object()) {
      if (!name.empty()) parents.push_back(name);
      for (const auto& [key, value] : j.items()) flatten(value, key, parents, out);
      return;
    }
    CLI::ConfigItem item;
    item.parents = parents;
    item.name = name;
    if (j.is_array())
      for (const auto& v : j) item.inputs.push_back(scalar(v));
    else
      item.inputs.push_back(scalar(j));
    out.push_back(std::move(item));
  }
};

/// Usage errors detected after parsing (exit 2).
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class JsonlLog {
 public:
  explicit JsonlLog(const fs::path& path) {
    if (path.empty()) return;
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    out_.open(path, std::ios::app);
    if (!out_) throw Error(ErrorCode::IoFailure, "cannot open log " + path.string());
  }
  void write(const json& j) {
    if (out_) out_ << j.dump() << '\n' << std::flush;
  }

 private:
  std::ofstream out_;
};

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

void write_snapshot(const fs::path& dir, const CLI::App* cmd, const std::optional<Config>& cfg) {
  json j{{"command", cmd->get_name()}, {"options", JsonConfig::to_json(cmd, true)}};
  if (cfg) j["model"] = memflow::config_to_json(*cfg);
  write_json(dir / ("resolved_config_" + cmd->get_name() + ".json"), j);
}

/// Frames of a directory in numeric order of the last integer in the name.
std::vector<fs::path> list_frames(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorCode::IoFailure, "not a directory: " + dir.string());
  static const std::regex digits("(\\d+)(?!.*\\d)");
  std::vector<std::pair<long, fs::path>> found;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() != ".png") continue;
    const std::string stem = e.path().stem().string();
    if (stem.rfind("flow", 0) == 0) continue;
    std::smatch m;
    const long idx = std::regex_search(stem, m, digits) ? std::stol(m[1]) : -1;
    found.emplace_back(idx, e.path());
  }
  std::sort(found.begin(), found.end());
  std::vector<fs::path> out;
  for (auto& [i, p] : found) out.push_back(p);
  return out;
}

std::vector<memflow::Clip> load_split(const fs::path& data, int limit) {
  memflow::Manifest m = memflow::read_manifest(data);
  if (limit > 0 && static_cast<int>(m.records.size()) > limit) m.records.resize(limit);
  return memflow::load_clips(m);
}

std::uint64_t default_seed() {
  if (const char* s = std::getenv("MEMFLOW_SEED")) {
    try {
      return std::stoull(s);
    } catch (const std::exception&) {
      throw UsageError(std::string("MEMFLOW_SEED is not an unsigned integer: ") + s);
    }
  }
  return 0;
}

// ---------------------------------------------------------------- options

struct DatasetArgs {
  memflow::GeneratorSpec spec;
  std::string motion = "velocity";
  std::optional<std::vector<double>> background_velocity;
  int count = 0;
  fs::path out;
  std::optional<std::uint64_t> seed;
};

/// Architecture and inference settings shared by train/eval/infer/predict.
struct ModelArgs {
  std::optional<int> feature_dim, key_dim, value_dim, iters_train, iters_infer, l_max, levels, radius;
  std::optional<double> gamma, n_avg;
  std::optional<std::vector<int>> widths;
  bool no_rescale = false;
  bool warm_start = false;
  bool detach_memory = false;

  void add_architecture(CLI::App* c) {
    c->add_option("--feature-dim", feature_dim, "Feature/context/hidden channels D");
    c->add_option("--key-dim", key_dim, "Memory key channels D_k");
    c->add_option("--value-dim", value_dim, "Memory value channels D_v");
    c->add_option("--iters-train", iters_train, "Refinement iterations during training");
    c->add_option("--levels", levels, "Correlation pyramid levels");
    c->add_option("--radius", radius, "Correlation lookup radius");
    c->add_option("--gamma", gamma, "Sequence loss decay");
    c->add_option("--n-avg", n_avg, "Log base of the attention re-scaling (default: 1.5 x training tokens)");
    c->add_option("--widths", widths, "Encoder stage widths")->expected(3);
    c->add_flag("--detach-memory", detach_memory, "Stop gradients at memory entries");
  }
  void add_inference(CLI::App* c, bool with_iters = true) {
    if (with_iters) c->add_option("--iters", iters_infer, "Refinement iterations at inference");
    c->add_option("--l-max", l_max, "Memory length in frames")->check(CLI::NonNegativeNumber);
    c->add_flag("--no-rescale", no_rescale, "Use the plain 1/sqrt(D_k) attention scale");
    c->add_flag("--warm-start", warm_start, "Initialize each pair from the forward-warped previous flow");
  }

  void apply(Config& cfg) const {
    if (feature_dim) cfg.feature_dim = *feature_dim;
    if (key_dim) cfg.key_dim = *key_dim;
    if (value_dim) cfg.value_dim = *value_dim;
    if (iters_train) cfg.iters_train = *iters_train;
    if (iters_infer) cfg.iters_infer = *iters_infer;
    if (l_max) cfg.l_max = *l_max;
    if (levels) cfg.pyramid_levels = *levels;
    if (radius) cfg.lookup_radius = *radius;
    if (gamma) cfg.gamma = *gamma;
    if (n_avg) cfg.n_avg = *n_avg;
    if (widths) cfg.encoder_widths = *widths;
    if (no_rescale) cfg.rescale = false;
    if (warm_start) cfg.warm_start = true;
    if (detach_memory) cfg.detach_memory = true;
  }
};

struct TrainArgs {
  fs::path data, val, out = "runs/train";
  std::string task = "flow";
  memflow::TrainOptions options;
  std::optional<fs::path> init;
  std::optional<std::uint64_t> seed;
  int val_limit = 0;
};

struct EvalArgs {
  fs::path checkpoint;
  std::vector<fs::path> data;
  std::vector<int> iters;
  std::string task = "flow";
  bool self_loop = false;
  fs::path out;
  int limit = 0;
};

struct StreamArgs {
  fs::path checkpoint, frames, out, gt;
  bool self_loop = false;
};

// ---------------------------------------------------------------- commands

int cmd_make_dataset(DatasetArgs& a, int workers, const CLI::App* cmd) {
  a.spec.family = memflow::parse_motion_family(a.motion);
  if (a.background_velocity) {
    if (a.background_velocity->size() != 2) throw UsageError("--background-velocity takes two values");
    a.spec.background_velocity = std::array<double, 2>{(*a.background_velocity)[0], (*a.background_velocity)[1]};
  }
  const std::uint64_t seed = a.seed ? *a.seed : default_seed();
  memflow::Manifest m = memflow::make_dataset(a.spec, a.count, a.out, seed, workers);
  write_snapshot(a.out, cmd, std::nullopt);
  std::cout << m.path.string() << std::endl;
  return 0;
}

int cmd_train(TrainArgs& a, const ModelArgs& model_args, int workers, const fs::path& log_path,
              const CLI::App* cmd) {
  if (a.task == "flow") a.options.task = memflow::TrainTask::Flow;
  else if (a.task == "predict") a.options.task = memflow::TrainTask::Predict;
  else throw UsageError("--task must be flow or predict");
  if (a.options.task == memflow::TrainTask::Predict && !a.init && !a.options.resume)
    throw UsageError("--task predict needs a trained estimator (--init) or --resume");

  const std::vector<memflow::Clip> train_clips = load_split(a.data, 0);
  if (train_clips.empty()) throw Error(ErrorCode::InvalidSpec, "training split is empty");
  std::vector<memflow::Clip> val_clips;
  if (!a.val.empty()) val_clips = load_split(a.val, a.val_limit);

  memflow::Model model;
  if (a.init) {
    model = memflow::load_checkpoint(*a.init).model;
    model_args.apply(model.config);
  } else {
    Config cfg;
    const auto& f = train_clips.front().frames.front();
    cfg.n_avg = 1.5 * (f.height / 8) * (f.width / 8);
    cfg.seed = a.seed ? *a.seed : default_seed();
    model_args.apply(cfg);
    cfg.validate();
    model = memflow::init_model(cfg, cfg.seed);
  }
  model.config.validate();

  fs::create_directories(a.out);
  a.options.checkpoint = a.out / "model.ckpt";
  a.options.workers = workers;
  write_snapshot(a.out, cmd, model.config);
  JsonlLog log(log_path.empty() ? a.out / "train_log.jsonl" : log_path);
  const auto start = std::chrono::steady_clock::now();
  memflow::TrainResult r = memflow::train(std::move(model), train_clips, val_clips, a.options, [&](const json& j) {
    log.write(j);
    const std::string ev = j.at("event");
    const long step = j.at("step");
    if (ev == "validation" || (ev == "step" && (step + 1) % 100 == 0)) std::cerr << j.dump() << std::endl;
  });
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  json summary{{"event", "done"},  {"steps", r.steps},        {"last_loss", r.last_loss},
               {"seconds", secs},  {"checkpoint", a.options.checkpoint.string()}};
  if (r.final_val_epe) summary["final_val_epe"] = *r.final_val_epe;
  log.write(summary);
  std::cout << summary.dump() << std::endl;
  return 0;
}

int cmd_eval(EvalArgs& a, const ModelArgs& model_args, int workers, const CLI::App* cmd) {
  memflow::Checkpoint ck = memflow::load_checkpoint(a.checkpoint);
  Config cfg = ck.model.config;
  model_args.apply(cfg);
  cfg.validate();
  if (a.task != "flow" && a.task != "predict") throw UsageError("--task must be flow or predict");
  std::vector<int> iters = a.iters;
  if (iters.empty()) iters.push_back(cfg.iters_infer);
  if (!a.out.empty()) write_snapshot(a.out, cmd, cfg);

  for (const auto& split : a.data) {
    const auto clips = load_split(split, a.limit);
    const std::string name = fs::is_directory(split) ? split.filename().string() : split.parent_path().filename().string();
    if (a.task == "predict") {
      memflow::PredictionEvaluation e = memflow::evaluate_prediction(ck.model.params, cfg, clips, a.self_loop, workers);
      json j{{"split", name},
             {"task", "predict"},
             {"self_loop", a.self_loop},
             {"l_max", cfg.l_max},
             {"prediction", json::parse(e.prediction.to_json())},
             {"warped_estimate", json::parse(e.warped_estimate.to_json())},
             {"warped_oracle", json::parse(e.warped_oracle.to_json())}};
      std::cout << j.dump() << std::endl;
      if (!a.out.empty()) write_json(a.out / ("eval_predict_" + name + ".json"), j);
      continue;
    }
    for (int k : iters) {
      Config c = cfg;
      c.iters_infer = k;
      c.validate();
      memflow::FlowEvaluation e = memflow::evaluate_flow(ck.model.params, c, clips, workers);
      json j{{"split", name},          {"task", "flow"},
             {"iters", k},             {"l_max", c.l_max},
             {"rescale", c.rescale},   {"warm_start", c.warm_start},
             {"report", json::parse(e.report.to_json())},
             {"epe_per_iteration", e.epe_per_iteration}};
      std::cout << j.dump() << std::endl;
      if (!a.out.empty())
        write_json(a.out / ("eval_" + name + "_iters" + std::to_string(k) + "_lmax" + std::to_string(c.l_max) + ".json"),
                   j);
    }
  }
  return 0;
}

int cmd_infer(StreamArgs& a, const ModelArgs& model_args, const CLI::App* cmd) {
  memflow::Checkpoint ck = memflow::load_checkpoint(a.checkpoint);
  Config cfg = ck.model.config;
  model_args.apply(cfg);
  cfg.validate();
  const auto paths = list_frames(a.frames);
  if (paths.size() < 2) throw Error(ErrorCode::TooFewFrames, "need at least two frames, found " + std::to_string(paths.size()));
  fs::create_directories(a.out);
  write_snapshot(a.out, cmd, cfg);

  memflow::EstimatorState state;
  memflow::ImageFrame prev = memflow::read_png(paths[0]);
  double busy = 0.0;
  for (std::size_t t = 0; t + 1 < paths.size(); ++t) {
    // Frame t+1 is read only when pair t is processed.
    memflow::ImageFrame next = memflow::read_png(paths[t + 1]);
    const auto start = std::chrono::steady_clock::now();
    memflow::PairEstimate est = memflow::estimate_pair(state, prev, next, ck.model.params, cfg);
    busy += std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    char name[32];
    std::snprintf(name, sizeof(name), "flow_%04zu", t);
    memflow::write_flo(est.flows.back(), a.out / (std::string(name) + ".flo"));
    memflow::write_png(memflow::flow_to_color(est.flows.back()), a.out / (std::string(name) + ".png"));
    state = std::move(est.state);
    prev = std::move(next);
  }
  const double fps = static_cast<double>(paths.size() - 1) / std::max(busy, 1e-9);
  std::cout << json{{"pairs", paths.size() - 1}, {"seconds", busy}, {"fps", fps}}.dump() << std::endl;
  return 0;
}

int cmd_predict(StreamArgs& a, const ModelArgs& model_args, const fs::path& log_path, const CLI::App* cmd) {
  memflow::Checkpoint ck = memflow::load_checkpoint(a.checkpoint);
  Config cfg = ck.model.config;
  model_args.apply(cfg);
  cfg.validate();
  const auto paths = list_frames(a.frames);
  if (paths.size() < 2) throw Error(ErrorCode::TooFewFrames, "need at least two frames, found " + std::to_string(paths.size()));
  fs::create_directories(a.out);
  write_snapshot(a.out, cmd, cfg);
  JsonlLog log(log_path.empty() ? a.out / "predict_log.jsonl" : log_path);
  const fs::path gt_dir = a.gt.empty() ? a.frames : a.gt;

  memflow::PredictorState state;
  memflow::MetricAccumulator acc;
  std::vector<memflow::ImageFrame> seen;
  seen.push_back(memflow::read_png(paths[0]));
  for (std::size_t t = 0; t < paths.size(); ++t) {
    std::optional<memflow::Prediction> p;
    if (t == 0) {
      log.write({{"event", "cold_start"}, {"t", 0}, {"note", "no flow observed yet; no prediction for t = 0"}});
    } else {
      // Predicts f_{t -> t+1} from frames 0..t only.
      p = memflow::predict(state, seen[t], ck.model.params, cfg);
      char name[32];
      std::snprintf(name, sizeof(name), "pred_%04zu", t);
      memflow::write_flo(p->full, a.out / (std::string(name) + ".flo"));
      memflow::write_png(memflow::flow_to_color(p->full), a.out / (std::string(name) + ".png"));
      json rec{{"event", "prediction"}, {"t", t}};
      const fs::path gt = gt_dir / ("flow_" + std::to_string(t) + ".flo");
      if (fs::exists(gt)) {
        memflow::FlowField g = memflow::read_flo(gt);
        acc.add(p->full, g);
        rec["epe"] = memflow::epe(p->full, g);
      }
      log.write(rec);
    }
    if (t + 1 >= paths.size()) break;
    seen.push_back(memflow::read_png(paths[t + 1]));
    state = memflow::observe(state, seen[t], seen[t + 1], ck.model.params, cfg, a.self_loop && p ? &*p : nullptr);
  }
  json summary{{"predictions", paths.size() - 1}, {"self_loop", a.self_loop}};
  if (acc.pixels() > 0) {
    memflow::EvalReport r = acc.report();
    summary["report"] = json::parse(r.to_json());
    write_json(a.out / "prediction_report.json", summary["report"]);
  }
  log.write(summary);
  std::cout << summary.dump() << std::endl;
  return 0;
}

bool is_usage(ErrorCode c) { return c == ErrorCode::InvalidSpec || c == ErrorCode::InvalidConfig; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Memory-augmented optical flow: synthetic data, training, evaluation and prediction"};
  app.require_subcommand(1);
  app.config_formatter(std::make_shared<JsonConfig>());
  app.set_config("--config", "", "JSON config file; command-line flags take precedence");
  app.allow_config_extras(CLI::config_extras_mode::error);
  int workers = 1;
  fs::path log_path;
  app.add_option("--workers", workers, "Worker threads for data generation and evaluation")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  app.add_option("--log", log_path, "Line-delimited JSON log (default: inside the output directory)");

  DatasetArgs ds;
  CLI::App* mk = app.add_subcommand("make-dataset", "Render a synthetic split with ground-truth flow");
  mk->add_option("--count", ds.count, "Number of clips")->required()->check(CLI::NonNegativeNumber);
  mk->add_option("--frames", ds.spec.frames, "Frames per clip")->check(CLI::Range(2, 1000))->capture_default_str();
  mk->add_option("--height", ds.spec.height, "Frame height (multiple of 8)")->capture_default_str();
  mk->add_option("--width", ds.spec.width, "Frame width (multiple of 8)")->capture_default_str();
  mk->add_option("--sprites", ds.spec.sprites, "Sprites per clip")->capture_default_str();
  mk->add_option("--motion", ds.motion, "velocity | accel | rotation")
      ->check(CLI::IsMember({"velocity", "accel", "rotation"}))
      ->capture_default_str();
  mk->add_option("--min-size", ds.spec.min_size, "Smallest sprite radius")->capture_default_str();
  mk->add_option("--max-size", ds.spec.max_size, "Largest sprite radius")->capture_default_str();
  mk->add_option("--max-speed", ds.spec.max_speed, "Largest sprite speed, px/frame")->capture_default_str();
  mk->add_option("--background-speed", ds.spec.background_speed, "Largest background speed")->capture_default_str();
  mk->add_option("--background-velocity", ds.background_velocity, "Fixed background velocity u v")->expected(2);
  mk->add_option("--gravity", ds.spec.gravity, "Shared acceleration along +y (accel)")->capture_default_str();
  mk->add_option("--seed", ds.seed, "Dataset seed (default: $MEMFLOW_SEED or 0)");
  mk->add_option("--out", ds.out, "Output directory")->required();

  ModelArgs model_args;
  TrainArgs tr;
  CLI::App* train = app.add_subcommand("train", "Train the estimator or the predictor");
  train->add_option("--data", tr.data, "Training split (directory or manifest)")->required();
  train->add_option("--val", tr.val, "Validation split");
  train->add_option("--val-limit", tr.val_limit, "Use at most this many validation clips");
  train->add_option("--out", tr.out, "Run directory")->capture_default_str();
  train->add_option("--task", tr.task, "flow | predict")->check(CLI::IsMember({"flow", "predict"}))->capture_default_str();
  train->add_option("--steps", tr.options.steps, "Optimizer steps")->check(CLI::NonNegativeNumber)->capture_default_str();
  train->add_option("--batch", tr.options.batch, "Clips per step")->check(CLI::PositiveNumber)->capture_default_str();
  train->add_option("--lr", tr.options.lr, "Peak learning rate")->capture_default_str();
  train->add_option("--wd", tr.options.weight_decay, "AdamW weight decay")->capture_default_str();
  train->add_option("--pct-start", tr.options.pct_start, "Warm-up fraction")->capture_default_str();
  train->add_option("--clip", tr.options.clip, "Gradient norm clip")->capture_default_str();
  train->add_option("--val-every", tr.options.val_every, "Validation cadence in steps")->capture_default_str();
  train->add_option("--checkpoint-every", tr.options.checkpoint_every, "Checkpoint cadence")->capture_default_str();
  train->add_option("--resume", tr.options.resume, "Resume from a checkpoint written by train")->check(CLI::ExistingFile);
  train->add_option("--init", tr.init, "Start from a checkpoint (predictor training)")->check(CLI::ExistingFile);
  train->add_option("--seed", tr.seed, "Initialization seed (default: $MEMFLOW_SEED or 0)");
  model_args.add_architecture(train);
  model_args.add_inference(train);

  EvalArgs ev;
  CLI::App* eval = app.add_subcommand("eval", "Score a checkpoint on one or more splits");
  eval->add_option("--checkpoint", ev.checkpoint, "Checkpoint")->required()->check(CLI::ExistingFile);
  eval->add_option("--data", ev.data, "Split(s) with ground truth")->required();
  eval->add_option("--task", ev.task, "flow | predict")->check(CLI::IsMember({"flow", "predict"}))->capture_default_str();
  eval->add_option("--iters", ev.iters, "Iteration count(s); one report per value");
  eval->add_flag("--self-loop", ev.self_loop, "Predictor memory from its own predictions");
  eval->add_option("--limit", ev.limit, "Use at most this many clips per split");
  eval->add_option("--out", ev.out, "Directory for report files");
  model_args.add_inference(eval, false);

  StreamArgs in;
  CLI::App* infer = app.add_subcommand("infer", "Estimate flow over a frame directory, causally");
  infer->add_option("--checkpoint", in.checkpoint, "Checkpoint")->required()->check(CLI::ExistingFile);
  infer->add_option("--frames", in.frames, "Directory of PNG frames")->required();
  infer->add_option("--out", in.out, "Output directory")->required();
  model_args.add_inference(infer);

  StreamArgs pr;
  CLI::App* predict = app.add_subcommand("predict", "Predict the next flow before each frame arrives");
  predict->add_option("--checkpoint", pr.checkpoint, "Checkpoint with predictor parameters")->required()->check(CLI::ExistingFile);
  predict->add_option("--frames", pr.frames, "Directory of PNG frames")->required();
  predict->add_option("--gt", pr.gt, "Directory with flow_<t>.flo ground truth (default: the frame directory)");
  predict->add_option("--out", pr.out, "Output directory")->required();
  predict->add_flag("--self-loop", pr.self_loop, "Build memory from the predicted flow");
  model_args.add_inference(predict);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*mk) return cmd_make_dataset(ds, workers, mk);
    if (*train) return cmd_train(tr, model_args, workers, log_path, train);
    if (*eval) return cmd_eval(ev, model_args, workers, eval);
    if (*infer) return cmd_infer(in, model_args, infer);
    if (*predict) return cmd_predict(pr, model_args, log_path, predict);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << std::endl;
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return is_usage(e.code()) ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
  return 2;
}
