// Acceptance suite: one PASS/FAIL line per criterion. Trained checkpoints are
// cached in the directory given as argv[1] (default: ./acceptance_cache).

#include "memflow/checkpoint.hpp"
#include "memflow/correlation.hpp"
#include "memflow/estimator.hpp"
#include "memflow/evaluate.hpp"
#include "memflow/io.hpp"
#include "memflow/memory.hpp"
#include "memflow/metrics.hpp"
#include "memflow/model.hpp"
#include "memflow/ops.hpp"
#include "memflow/predictor.hpp"
#include "memflow/synth.hpp"
#include "memflow/train.hpp"
#include "support.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

using namespace memflow;
using support::random_mat;

namespace {

namespace fs = std::filesystem;

struct Result {
  bool pass;
  std::string detail;
};

int failures = 0;

void report(const std::string& name, const Result& r) {
  std::cout << (r.pass ? "PASS " : "FAIL ") << name << ": " << r.detail << std::endl;
  if (!r.pass) ++failures;
}

std::string fmt(double x) {
  std::ostringstream s;
  s.precision(4);
  s << x;
  return s.str();
}

template <typename T>
MemoryBuffer<T> random_buffer(int frames, int h, int w, int dk, int dv, std::mt19937_64& rng) {
  MemoryBuffer<T> buf;
  for (int f = 0; f < frames; ++f) {
    MemoryBlock<T> b;
    b.frame_id = f;
    b.keys = random_mat(h * w, dk, rng).cast<T>();
    b.values = random_mat(h * w, dv, rng).cast<T>();
    buf = buf.with_frame(b, h, w, frames);
  }
  return buf;
}

template <typename T>
FeatureMap<T> fmap(int h, int w, const Mat<double>& data) {
  return FeatureMap<T>{h, w, 8, data.cast<T>()};
}

Config memory_config(int d, int dk, int dv) {
  Config c;
  c.feature_dim = d;
  c.key_dim = dk;
  c.value_dim = dv;
  return c;
}

// --- mechanism criteria ----------------------------------------------------

Result attention_normalization() {
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<int> side(1, 16), dim(2, 12), mult(0, 2);
  std::uniform_real_distribution<double> sharp(0.1, 8.0);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int h = side(rng), w = side(rng), d = dim(rng), dk = dim(rng), dv = dim(rng);
    const Config cfg = memory_config(d, dk, dv);
    auto proj = ProjectionParams<float>::init(d, dk, dv, dv, rng);
    proj.w_q *= static_cast<float>(sharp(rng));
    proj.alpha = 1.0f;
    auto buf = random_buffer<float>(mult(rng), h, w, dk, dv, rng);
    Mat<float> attn;
    read_out(fmap<float>(h, w, random_mat(h * w, d, rng)), fmap<float>(h, w, random_mat(h * w, dv, rng)), buf, proj,
             cfg, &attn);
    if (attn.cols() != h * w + buf.size()) return {false, "attention has the wrong number of columns"};
    worst = std::max(worst, (attn.rowwise().sum().array() - 1.0f).abs().cast<double>().maxCoeff());
  }
  return {worst < 1e-5, "max |row sum - 1| = " + fmt(worst) + " over 1000 configurations (tol 1e-5)"};
}

Result rescale_identity() {
  std::mt19937_64 rng(102);
  double worst = 0.0;
  for (int frames = 0; frames <= 2; ++frames) {
    const int h = 4, w = 5, dk = 64;
    Config cfg = memory_config(6, dk, 5);
    cfg.n_avg = static_cast<double>((frames + 1) * h * w);
    auto proj = ProjectionParams<double>::init(6, dk, 5, 5, rng);
    proj.alpha = 1.0;
    auto buf = random_buffer<double>(frames, h, w, dk, 5, rng);
    auto fc = fmap<double>(h, w, random_mat(h * w, 6, rng)), fm = fmap<double>(h, w, random_mat(h * w, 5, rng));
    Config plain = cfg;
    plain.rescale = false;
    worst = std::max(worst, (read_out(fc, fm, buf, proj, cfg).data - read_out(fc, fm, buf, proj, plain).data)
                                .cwiseAbs()
                                .maxCoeff());
  }
  const double c = rescale_coefficient(0, 8, 8, 64.0, 64);
  return {worst <= 1e-6 && c == 0.125,
          "max deviation from plain attention " + fmt(worst) + " (tol 1e-6); coefficient(0, 8, 8, 64, 64) = " +
              fmt(c)};
}

Result alpha_identity() {
  std::mt19937_64 rng(103);
  for (int trial = 0; trial < 50; ++trial) {
    const int h = 1 + trial % 7, w = 1 + trial % 5, frames = trial % 4;
    const Config cfg = memory_config(6, 4, 5);
    auto proj = ProjectionParams<float>::init(6, 4, 5, 5, rng);
    if (proj.alpha != 0.0f) return {false, "alpha does not initialize to 0"};
    auto buf = random_buffer<float>(frames, h, w, 4, 5, rng);
    auto fm = fmap<float>(h, w, random_mat(h * w, 5, rng, -50, 50));
    auto out = read_out(fmap<float>(h, w, random_mat(h * w, 6, rng, -50, 50)), fm, buf, proj, cfg);
    if (std::memcmp(out.data.data(), fm.data.data(), sizeof(float) * fm.data.size()) != 0)
      return {false, "f_am differs from f_m at trial " + std::to_string(trial)};
  }
  return {true, "f_am == f_m bitwise on 50 random buffers"};
}

Result gradient_checks() {
  std::mt19937_64 rng(104);
  const int h = 4, w = 4;
  std::map<std::string, double> errs;

  const int d = 5, dk = 3, dv = 4;
  auto buf = random_buffer<double>(1, h, w, dk, dv, rng);
  const double coef = rescale_coefficient(buf.size(), h, w, 24.0, dk);
  Mat<double> alpha(1, 1);
  alpha << 0.7;
  auto ro = support::check_gradients(
      {{"f_c", random_mat(h * w, d, rng), h, w},
       {"f_m", random_mat(h * w, dv, rng), h, w},
       {"W_q", random_mat(d, dk, rng), d, 1},
       {"W_k", random_mat(d, dk, rng), d, 1},
       {"W_v", random_mat(dv, dv, rng), dv, 1},
       {"alpha", alpha, 1, 1}},
      nullptr, {}, [&](Tape<double>& tape, const std::vector<Var<double>>& v) {
        ProjectionVars<double> proj{v[2], v[3], v[4], v[5]};
        return read_out(tape, v[0], v[1], buf, proj, coef).f_am;
      });
  for (const auto& [k, e] : ro) errs["read_out/" + k] = e;

  Mat<double> a = random_mat(h * w, 5, rng), b = random_mat(h * w, 5, rng);
  auto lk = support::check_gradients(
      {{"flow", random_mat(h * w, 2, rng, -1.3, 1.3), h, w}}, nullptr, {},
      [&](Tape<double>& tape, const std::vector<Var<double>>& v) {
        auto pyr = build_pyramid(tape.constant(a, h, w), tape.constant(b, h, w), 2);
        return lookup(pyr, v[0], 1);
      });
  errs["lookup/flow"] = lk.at("flow");

  const Mat<double> flow = random_mat(h * w, 2, rng, -1.7, 1.7);
  auto fw = support::check_gradients({{"values", random_mat(h * w, 2, rng, -3, 3), h, w}}, nullptr, {},
                                     [&](Tape<double>&, const std::vector<Var<double>>& v) {
                                       return ops::splat(v[0], flow);
                                     });
  errs["forward_warp/values"] = fw.at("values");

  double worst = 0.0;
  std::string which;
  for (const auto& [k, e] : errs)
    if (e >= worst) worst = e, which = k;
  return {worst < 1e-4, "worst relative error " + fmt(worst) + " (" + which + ", tol 1e-4, " +
                            std::to_string(errs.size()) + " gradients)"};
}

Result buffer_semantics() {
  std::mt19937_64 rng(105);
  auto proj = ProjectionParams<double>::init(4, 3, 2, 2, rng);
  for (int m = 0; m <= 3; ++m)
    for (int K = 0; K <= 5; ++K) {
      MemoryBuffer<double> buf;
      for (int id = 0; id < K; ++id)
        buf = update(buf, fmap<double>(2, 2, random_mat(4, 4, rng)), fmap<double>(2, 2, random_mat(4, 2, rng)), proj,
                     id, m);
      const int l = std::min(K, m);
      std::vector<int> ids;
      for (int id = K - l; id < K; ++id) ids.push_back(id);
      if (buf.length() != l || buf.size() != 4 * l || buf.frame_ids() != ids)
        return {false, "K=" + std::to_string(K) + " m=" + std::to_string(m)};
    }
  return {true, "l = min(K, m) and the newest ids kept for K <= 5, m <= 3"};
}

Result loss_oracle() {
  std::mt19937_64 rng(106);
  std::uniform_int_distribution<int> count(1, 15), side(1, 6), pairs(1, 3);
  std::normal_distribution<float> noise(0.0f, 2.0f);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const int h = side(rng), w = side(rng), p = pairs(rng), n = count(rng);
    std::vector<std::vector<FlowField>> its(p);
    std::vector<FlowField> gts;
    for (int q = 0; q < p; ++q) {
      FlowField g = FlowField::zeros(h, w);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) g.u(y, x) = noise(rng), g.v(y, x) = noise(rng);
      gts.push_back(g);
      for (int i = 0; i < n; ++i) {
        FlowField f = FlowField::zeros(h, w);
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x) f.u(y, x) = noise(rng), f.v(y, x) = noise(rng);
        its[q].push_back(f);
      }
    }
    long double total = 0.0L;
    for (int q = 0; q < p; ++q)
      for (int i = 1; i <= n; ++i) {
        long double l1 = 0.0L;
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x)
            l1 += std::fabs((long double)its[q][i - 1].u(y, x) - gts[q].u(y, x)) +
                  std::fabs((long double)its[q][i - 1].v(y, x) - gts[q].v(y, x));
        total += std::pow(0.85L, n - i) * l1 / (h * w);
      }
    total /= p;
    worst = std::max(worst, std::fabs(sequence_loss(its, gts, 0.85) - static_cast<double>(total)));
  }
  std::vector<FlowField> twelve(12, FlowField::zeros(4, 4));
  twelve.back() = FlowField::constant(4, 4, 1.0f, 0.0f);
  const double l12 = sequence_loss({twelve}, {FlowField::zeros(4, 4)}, 0.85);
  const double l2 = sequence_loss({{FlowField::constant(4, 4, 1.0f, 0.0f), FlowField::zeros(4, 4)}},
                                  {FlowField::zeros(4, 4)}, 0.85);
  return {worst <= 1e-7 && l12 == 1.0 && l2 == 0.85,
          "max deviation " + fmt(worst) + " over 200 lists (tol 1e-7); N=12 example " + fmt(l12) +
              ", N=2 example " + fmt(l2)};
}

Result metric_oracles() {
  std::mt19937_64 rng(107);
  std::normal_distribution<float> n(0.0f, 3.0f);
  std::bernoulli_distribution keep(0.7);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    FlowField p = FlowField::zeros(8, 8), g = FlowField::zeros(8, 8);
    MaskGrid mask(8, 8);
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) {
        p.u(y, x) = n(rng), p.v(y, x) = n(rng), g.u(y, x) = 10 * n(rng), g.v(y, x) = n(rng);
        mask(y, x) = keep(rng);
      }
    mask(0, 0) = true;
    for (const MaskGrid* m : {static_cast<const MaskGrid*>(nullptr), static_cast<const MaskGrid*>(&mask)}) {
      double e = 0, fl = 0, px1 = 0, wa = 0;
      int count = 0;
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
          if (m && !(*m)(y, x)) continue;
          const double du = double(p.u(y, x)) - g.u(y, x), dv = double(p.v(y, x)) - g.v(y, x);
          const double err = std::sqrt(du * du + dv * dv), mag = std::hypot(double(g.u(y, x)), double(g.v(y, x)));
          ++count;
          e += err;
          fl += err > 3.0 && err > 0.05 * mag;
          px1 += err > 1.0;
          double num = 0, den = 0;
          for (int i = 1; i <= 100; ++i) {
            const double wi = 1.0 - (i - 1) / 100.0;
            num += wi * (err <= i * 0.05);
            den += wi;
          }
          wa += num / den;
        }
      worst = std::max({worst, std::fabs(epe(p, g, m) - e / count), std::fabs(fl_all(p, g, m) - 100 * fl / count),
                        std::fabs(outlier_1px(p, g, m) - 100 * px1 / count),
                        std::fabs(wauc(p, g, m) - 100 * wa / count)});
    }
  }
  const FlowField zero = FlowField::zeros(8, 8);
  const double e345 = epe(FlowField::constant(8, 8, 3, 4), zero);
  const FlowField gt100 = FlowField::constant(8, 8, 100, 0);
  const double fl4 = fl_all(FlowField::constant(8, 8, 104, 0), gt100);
  const double fl6 = fl_all(FlowField::constant(8, 8, 106, 0), gt100);
  return {worst <= 1e-6 && e345 == 5.0 && fl4 == 0.0 && fl6 == 100.0,
          "max deviation " + fmt(worst) + " over 100 instances x {unmasked, masked} (tol 1e-6); (3,4) EPE " +
              fmt(e345) + "; Fl with EPE 4 / 6 at |gt| 100: " + fmt(fl4) + "% / " + fmt(fl6) + "%"};
}

Result flo_round_trip(const fs::path& dir) {
  std::mt19937_64 rng(108);
  std::uniform_int_distribution<int> side(1, 40);
  std::uniform_int_distribution<std::uint32_t> bits;
  const fs::path path = dir / "round_trip.flo";
  for (int trial = 0; trial < 100; ++trial) {
    FlowField f = FlowField::zeros(side(rng), side(rng));
    for (int y = 0; y < f.height(); ++y)
      for (int x = 0; x < f.width(); ++x) {
        // Arbitrary finite bit patterns, not just well-behaved magnitudes.
        float a, b;
        do {
          std::uint32_t r = bits(rng);
          std::memcpy(&a, &r, 4);
        } while (!std::isfinite(a));
        do {
          std::uint32_t r = bits(rng);
          std::memcpy(&b, &r, 4);
        } while (!std::isfinite(b));
        f.u(y, x) = a, f.v(y, x) = b;
      }
    write_flo(f, path);
    const FlowField g = read_flo(path);
    if (g.height() != f.height() || g.width() != f.width() ||
        std::memcmp(g.u.data(), f.u.data(), sizeof(float) * f.u.size()) != 0 ||
        std::memcmp(g.v.data(), f.v.data(), sizeof(float) * f.v.size()) != 0)
      return {false, "field " + std::to_string(trial) + " changed"};
  }
  return {true, "100 random fields bitwise identical"};
}

// --- trained criteria --------------------------------------------------------

// Desk-scale recipe.
constexpr int kTrainClips = 2000;
constexpr long kFlowSteps = 40000;
constexpr double kFlowLr = 4e-4;
constexpr int kPredictClips = 1000;
constexpr long kPredictSteps = 4000;
constexpr double kPredictLr = 4e-4;
constexpr int kValClips = 40;
constexpr int kValFrames = 5;

std::vector<Clip> clips(const GeneratorSpec& spec, int count, std::uint64_t seed0) {
  std::vector<Clip> out(count);
  parallel_for(count, 4, [&](int i) {
    VideoSample v = generate(spec, seed0 + static_cast<std::uint64_t>(i));
    out[i] = Clip{std::move(v.frames), std::move(v.flows)};
  });
  return out;
}

GeneratorSpec family_spec(MotionFamily family, int frames) {
  GeneratorSpec s;
  s.family = family;
  s.frames = frames;
  return s;
}

TrainLogger progress(const std::string& tag) {
  auto start = std::make_shared<std::chrono::steady_clock::time_point>(std::chrono::steady_clock::now());
  return [tag, start](const nlohmann::json& j) {
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - *start).count();
    if (j["event"] == "validation")
      std::cerr << "[" << tag << "] step " << j["step"] << " val_epe " << j["val_epe"] << " (" << secs << " s)"
                << std::endl;
  };
}

Model flow_model(const fs::path& cache) {
  const fs::path path = cache / "flow.ckpt";
  if (fs::exists(path)) return load_checkpoint(path).model;
  std::cerr << "training the estimator (" << kFlowSteps << " steps); cached at " << path << std::endl;
  Config cfg;
  // Half the clips move faster than the evaluation data.
  auto train_clips = clips(family_spec(MotionFamily::Velocity, 3), kTrainClips / 2, 1'000'000);
  GeneratorSpec fast = family_spec(MotionFamily::Velocity, 3);
  fast.background_speed = 8.0;
  fast.max_speed = 16.0;
  for (auto& c : clips(fast, kTrainClips / 2, 1'500'000)) train_clips.push_back(std::move(c));
  auto val = clips(family_spec(MotionFamily::Velocity, 3), 20, 2'000'000);
  TrainOptions o;
  o.steps = kFlowSteps;
  o.lr = kFlowLr;
  o.val_every = 2000;
  o.checkpoint = cache / "flow_partial.ckpt";
  o.checkpoint_every = 1000;
  if (fs::exists(o.checkpoint)) o.resume = o.checkpoint;
  TrainResult r = train(init_model(cfg, 1), train_clips, val, o, progress("flow"));
  save_checkpoint(path, r.model, {{"steps", r.steps}});
  return r.model;
}

Model predictor_model(const fs::path& cache, const Model& estimator) {
  const fs::path path = cache / "predict.ckpt";
  if (fs::exists(path)) return load_checkpoint(path).model;
  std::cerr << "training the predictor (" << kPredictSteps << " steps); cached at " << path << std::endl;
  std::vector<Clip> train_clips = clips(family_spec(MotionFamily::Velocity, 5), kPredictClips / 2, 3'000'000);
  for (auto& c : clips(family_spec(MotionFamily::Accel, 5), kPredictClips / 2, 4'000'000))
    train_clips.push_back(std::move(c));
  auto val = clips(family_spec(MotionFamily::Accel, 5), 10, 5'000'000);
  TrainOptions o;
  o.task = TrainTask::Predict;
  o.steps = kPredictSteps;
  o.lr = kPredictLr;
  o.val_every = 1000;
  o.checkpoint = cache / "predict_partial.ckpt";
  o.checkpoint_every = 1000;
  if (fs::exists(o.checkpoint)) o.resume = o.checkpoint;
  TrainResult r = train(estimator, train_clips, val, o, progress("predict"));
  save_checkpoint(path, r.model, {{"steps", r.steps}});
  return r.model;
}

Result desk_scale_training(const Model& model) {
  const auto val = clips(family_spec(MotionFamily::Velocity, kValFrames), kValClips, 6'000'000);
  Config cfg = model.config;
  cfg.iters_infer = 15;
  const FlowEvaluation base = evaluate_flow(model.params, cfg, val);
  Config no_mem = cfg;
  no_mem.l_max = 0;
  const double epe_no_mem = evaluate_flow(model.params, no_mem, val).report.epe();
  Config warm = cfg;
  warm.warm_start = true;
  const double epe_warm = evaluate_flow(model.params, warm, val).report.epe();

  const double epe = base.report.epe();
  const double epe2 = base.epe_per_iteration.at(1), epe15 = base.epe_per_iteration.at(14);
  const double rel = std::fabs(epe_warm - epe) / epe;
  const bool a = epe < 1.0, b = epe < epe_no_mem, c = epe15 <= epe2, d = rel < 0.10;
  std::string detail = std::string("(a) ") + (a ? "ok" : "no") + " EPE " + fmt(epe) + " < 1.0; (b) " +
                       (b ? "ok" : "no") + " l_max=1 " + fmt(epe) + " < l_max=0 " + fmt(epe_no_mem) + "; (c) " +
                       (c ? "ok" : "no") + " 15 iters " + fmt(epe15) + " <= 2 iters " + fmt(epe2) + "; (d) " +
                       (d ? "ok" : "no") + " warm start " + fmt(epe_warm) + ", rel change " + fmt(rel) + " < 0.1";
  return {a && b && c && d, detail};
}

Result predictor_criterion(const Model& model) {
  const auto accel = clips(family_spec(MotionFamily::Accel, kValFrames), kValClips, 7'000'000);
  const auto vel = clips(family_spec(MotionFamily::Velocity, kValFrames), kValClips, 8'000'000);
  const PredictionEvaluation ea = evaluate_prediction(model.params, model.config, accel);
  const PredictionEvaluation ev = evaluate_prediction(model.params, model.config, vel);
  const double pa = ea.prediction.epe(), wa = ea.warped_estimate.epe();
  const double pv = ev.prediction.epe(), ov = ev.warped_oracle.epe();
  const bool a = pa < wa, v = pv <= 1.2 * ov;
  return {a && v, std::string("accel: ") + (a ? "ok" : "no") + " prediction " + fmt(pa) + " < warped estimate " +
                      fmt(wa) + "; velocity: " + (v ? "ok" : "no") + " prediction " + fmt(pv) +
                      " within 20% of warped oracle " + fmt(ov)};
}

bool same(const FlowField& a, const FlowField& b) {
  return a.height() == b.height() && a.width() == b.width() && a.u == b.u && a.v == b.v;
}

Result causality(const Model& model) {
  Model m = model;
  const Config& cfg = m.config;
  GeneratorSpec spec = family_spec(MotionFamily::Velocity, 6);
  const VideoSample v = generate(spec, 9'000'000);
  const int T = static_cast<int>(v.frames.size());
  std::mt19937_64 rng(109);
  std::uniform_real_distribution<float> u01(0.0f, 1.0f);
  auto scramble = [&](std::vector<ImageFrame> frames, int from) {
    for (int t = from; t < T; ++t)
      for (Eigen::Index i = 0; i < frames[t].pixels.size(); ++i) frames[t].pixels.data()[i] = u01(rng);
    return frames;
  };

  const auto flows = run_video(v.frames, m.params, cfg);
  for (int t = 0; t + 2 < T; ++t) {
    const auto other = run_video(scramble(v.frames, t + 2), m.params, cfg);
    for (int s = 0; s <= t; ++s)
      if (!same(flows[s], other[s]))
        return {false, "estimator flow " + std::to_string(s) + " changed when frames > " + std::to_string(t + 1) +
                           " changed"};
  }

  auto predictions = [&](const std::vector<ImageFrame>& frames) {
    std::vector<FlowField> out;
    PredictorState state;
    for (int t = 0; t + 1 < T; ++t) {
      if (t >= 1) out.push_back(predict_flow(state, frames[t], m.params, cfg));
      state = observe(state, frames[t], frames[t + 1], m.params, cfg);
    }
    out.push_back(predict_flow(state, frames[T - 1], m.params, cfg));
    return out;  // out[k] predicts f_{k+1 -> k+2}
  };
  const auto preds = predictions(v.frames);
  for (int t = 1; t + 1 < T; ++t) {
    const auto other = predictions(scramble(v.frames, t + 1));
    for (int s = 1; s <= t; ++s)
      if (!same(preds[s - 1], other[s - 1]))
        return {false, "prediction at t=" + std::to_string(s) + " changed when frames > " + std::to_string(t) +
                           " changed"};
  }
  return {true, "estimator flows and predictor outputs bitwise unchanged under future-frame edits (T=" +
                    std::to_string(T) + ")"};
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path cache = argc > 1 ? fs::path(argv[1]) : fs::path("acceptance_cache");
  fs::create_directories(cache);
  auto guarded = [](const std::string& name, const std::function<Result()>& fn) {
    try {
      report(name, fn());
    } catch (const std::exception& e) {
      report(name, {false, std::string("threw ") + e.what()});
    }
  };

  guarded("attention normalization", attention_normalization);
  guarded("re-scaling identity", rescale_identity);
  guarded("alpha initialization identity", alpha_identity);
  guarded("gradient checks", gradient_checks);
  guarded("buffer semantics", buffer_semantics);
  guarded("loss oracle", loss_oracle);
  guarded("metric oracles", metric_oracles);
  guarded(".flo round trip", [&] { return flo_round_trip(cache); });

  std::optional<Model> estimator, predictor;
  try {
    estimator = flow_model(cache);
    predictor = predictor_model(cache, *estimator);
  } catch (const std::exception& e) {
    std::cerr << "training failed: " << e.what() << std::endl;
  }
  guarded("desk-scale training", [&]() -> Result {
    if (!estimator) return {false, "no trained estimator"};
    return desk_scale_training(*estimator);
  });
  guarded("predictor", [&]() -> Result {
    if (!predictor) return {false, "no trained predictor"};
    return predictor_criterion(*predictor);
  });
  guarded("causality", [&]() -> Result {
    if (!predictor) return {false, "no trained model"};
    return causality(*predictor);
  });

  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
