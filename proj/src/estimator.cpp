#include "memflow/estimator.hpp"

#include "memflow/ops.hpp"

#include <cmath>

namespace memflow {

void init_update_block(EncoderParams& params, const Config& cfg, std::mt19937_64& rng) {
  const int hid = cfg.hidden_dim();
  const int in = hid + cfg.context_dim() + 2 * cfg.value_dim;
  for (const char* cell : {"gru.0", "gru.1"}) {
    const std::string c(cell);
    nn::add_large_kernel(params, c + ".z", in, hid, rng);
    nn::add_large_kernel(params, c + ".r", in, hid, rng);
    nn::add_large_kernel(params, c + ".q", in, hid, rng);
  }
  nn::add_conv(params, "fhead.1", hid, 64, 1, rng);
  nn::add_depthwise(params, "fhead.2", 64, 7, rng);
  params.at("fhead.2.w") *= 0.3f;
  nn::add_conv(params, "fhead.3", 64, 2, 1, rng, 0.01);
}

template <typename T>
GruVars<T> gru_step(Tape<T>& tape, Var<T> hidden, Var<T> f_c, Var<T> f_m, Var<T> f_am) {
  Var<T> x = ops::concat_cols(std::vector<Var<T>>{f_c, f_m, f_am});
  Var<T> h = hidden;
  for (const char* cell : {"gru.0", "gru.1"}) {
    const std::string c(cell);
    Var<T> hx = ops::concat_cols(std::vector<Var<T>>{h, x});
    Var<T> z = ops::sigmoid(nn::large_kernel(tape, c + ".z", hx));
    Var<T> r = ops::sigmoid(nn::large_kernel(tape, c + ".r", hx));
    Var<T> q = ops::tanh(nn::large_kernel(tape, c + ".q", ops::concat_cols(std::vector<Var<T>>{ops::mul(r, h), x})));
    h = ops::add(ops::mul(ops::one_minus(z), h), ops::mul(z, q));
  }
  Var<T> d = ops::relu(nn::conv(tape, "fhead.1", h));
  d = ops::relu(nn::depthwise(tape, "fhead.2", d));
  return {h, nn::conv(tape, "fhead.3", d)};
}

template <typename T>
Var<T> motion_at(Tape<T>& tape, const Config& cfg, Var<T> features_a, Var<T> features_b, Var<T> flow) {
  PyramidVars<T> pyr = build_pyramid(features_a, features_b, cfg.pyramid_levels);
  return motion_encoder(tape, flow, lookup(pyr, flow, cfg.lookup_radius));
}

template <typename T>
PairTrace<T> estimate_pair(Tape<T>& tape, const Config& cfg, const FrameVars<T>& first, Var<T> second_features,
                           const MemoryBuffer<T>& buffer, int iters, const Mat<T>* init_flow, bool upsample_all) {
  const int h = first.features.h(), w = first.features.w();
  if (second_features.h() != h || second_features.w() != w)
    throw Error(ErrorCode::ShapeMismatch, "frame pair resolutions differ");
  if (iters < 1) throw Error(ErrorCode::InvalidConfig, "iteration count must be >= 1");
  PyramidVars<T> pyr = build_pyramid(first.features, second_features, cfg.pyramid_levels);
  const T coef = static_cast<T>(attention_coefficient(cfg, buffer.size(), h, w));
  ProjectionVars<T> proj = ProjectionVars<T>::bind(tape, "mem");

  Mat<T> start = init_flow ? *init_flow : Mat<T>::Zero(static_cast<Eigen::Index>(h) * w, 2);
  if (start.rows() != static_cast<Eigen::Index>(h) * w || start.cols() != 2)
    throw Error(ErrorCode::ShapeMismatch, "initial flow does not match the feature grid");
  PairTrace<T> trace;
  trace.context = first.context;
  Var<T> flow = tape.constant(std::move(start), h, w);
  Var<T> hidden = first.hidden;
  for (int i = 0; i < iters; ++i) {
    Var<T> fixed = ops::detach(flow);
    Var<T> f_m = motion_encoder(tape, fixed, lookup(pyr, fixed, cfg.lookup_radius));
    Var<T> f_am = read_out(tape, first.context, f_m, buffer, proj, coef).f_am;
    GruVars<T> g = gru_step(tape, hidden, first.context, f_m, f_am);
    hidden = g.hidden;
    flow = ops::add(fixed, g.delta);
    trace.flows_coarse.push_back(flow);
    if (upsample_all || i + 1 == iters) trace.flows_full.push_back(upsample_flow(tape, "up", flow, hidden));
  }
  Var<T> fixed = ops::detach(flow);
  trace.flow = flow;
  trace.hidden = hidden;
  trace.motion = motion_encoder(tape, fixed, lookup(pyr, fixed, cfg.lookup_radius));
  return trace;
}

template <typename T>
Var<T> sequence_loss(const std::vector<Var<T>>& iterates, const Mat<T>& gt, T gamma) {
  if (iterates.empty()) throw Error(ErrorCode::LengthMismatch, "no iterates");
  const int n = static_cast<int>(iterates.size());
  Var<T> total;
  for (int i = 0; i < n; ++i) {
    const T weight = static_cast<T>(std::pow(static_cast<double>(gamma), n - 1 - i));
    Var<T> term = ops::scale(ops::l1_mean(iterates[i], gt), weight);
    total = total.valid() ? ops::add(total, term) : term;
  }
  return total;
}

double sequence_loss(const std::vector<std::vector<FlowField>>& iterates, const std::vector<FlowField>& gts,
                     double gamma) {
  if (iterates.size() != gts.size() || iterates.empty())
    throw Error(ErrorCode::LengthMismatch, "one iterate list per ground-truth flow required");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw Error(ErrorCode::InvalidConfig, "gamma must lie in (0, 1]");
  double total = 0.0;
  for (std::size_t p = 0; p < gts.size(); ++p) {
    const auto& its = iterates[p];
    if (its.empty()) throw Error(ErrorCode::LengthMismatch, "pair without iterates");
    const int n = static_cast<int>(its.size());
    const double pixels = static_cast<double>(gts[p].height()) * gts[p].width();
    for (int i = 0; i < n; ++i) {
      if (its[i].height() != gts[p].height() || its[i].width() != gts[p].width())
        throw Error(ErrorCode::ShapeMismatch, "iterate and ground truth differ in size");
      const double l1 = ((its[i].u.cast<double>() - gts[p].u.cast<double>()).cwiseAbs().sum() +
                         (its[i].v.cast<double>() - gts[p].v.cast<double>()).cwiseAbs().sum()) /
                        pixels;
      total += std::pow(gamma, n - 1 - i) * l1;
    }
  }
  return total / static_cast<double>(gts.size());
}

namespace {

struct EncodedFrame {
  int height = 0;
  int width = 0;
  Mat<float> features;
  Mat<float> context;
  Mat<float> hidden;
};

EncodedFrame encode_frame(const ImageFrame& padded, const EncoderParams& params, const Config& cfg,
                          bool with_context) {
  Tape<float> tape(&params, false);
  Var<float> img = image_input(tape, padded);
  EncodedFrame e;
  Var<float> f = feature_encoder(tape, img);
  e.height = f.h();
  e.width = f.w();
  e.features = f.value();
  if (with_context) {
    auto [c, h] = context_encoder(tape, img, cfg.context_dim());
    e.context = c.value();
    e.hidden = h.value();
  }
  return e;
}

PairEstimate estimate_encoded(const EstimatorState& state, const EncodedFrame& a, const EncodedFrame& b,
                              const EncoderParams& params, const Config& cfg, int out_h, int out_w) {
  Tape<float> tape(&params, false);
  FrameVars<float> first{tape.constant(a.features, a.height, a.width), tape.constant(a.context, a.height, a.width),
                         tape.constant(a.hidden, a.height, a.width)};
  Var<float> second = tape.constant(b.features, b.height, b.width);
  std::optional<Mat<float>> init;
  if (cfg.warm_start && state.frame_index > 0 && state.flow.height() == a.height && state.flow.width() == a.width) {
    Mat<float> prev = state.flow.as_matrix<float>();
    init = ops::splat_forward(prev, prev, a.height, a.width);
  }
  PairTrace<float> trace =
      estimate_pair(tape, cfg, first, second, state.buffer, cfg.iters_infer, init ? &*init : nullptr, true);

  PairEstimate out;
  for (const auto& f : trace.flows_full) out.flows.push_back(crop_flow(FlowField::from_matrix(f.value(), f.h(), f.w()), out_h, out_w));
  out.coarse = FlowField::from_matrix(trace.flow.value(), a.height, a.width);
  out.motion = FeatureMap<float>{a.height, a.width, 8, trace.motion.value()};
  out.context = FeatureMap<float>{a.height, a.width, 8, trace.context.value()};

  out.state.hidden = FeatureMap<float>{a.height, a.width, 8, trace.hidden.value()};
  out.state.flow = out.coarse;
  out.state.buffer = update(state.buffer, trace.context, trace.motion, ProjectionVars<float>::bind(tape, "mem"),
                            state.frame_index, cfg.l_max, false);
  out.state.frame_index = state.frame_index + 1;
  return out;
}

void check_pair(const ImageFrame& a, const ImageFrame& b) {
  if (a.height != b.height || a.width != b.width) throw Error(ErrorCode::ShapeMismatch, "frame sizes differ");
}

}  // namespace

PairEstimate estimate_pair(const EstimatorState& state, const ImageFrame& frame_t, const ImageFrame& frame_t1,
                           const EncoderParams& params, const Config& cfg) {
  check_pair(frame_t, frame_t1);
  const int m = padding_multiple(cfg);
  EncodedFrame a = encode_frame(pad_frame(frame_t, m), params, cfg, true);
  EncodedFrame b = encode_frame(pad_frame(frame_t1, m), params, cfg, false);
  return estimate_encoded(state, a, b, params, cfg, frame_t.height, frame_t.width);
}

std::vector<std::vector<FlowField>> run_video_iterates(const std::vector<ImageFrame>& frames,
                                                       const EncoderParams& params, const Config& cfg) {
  if (frames.size() < 2) throw Error(ErrorCode::TooFewFrames, "need at least two frames");
  const int m = padding_multiple(cfg);
  EstimatorState state;
  std::vector<std::vector<FlowField>> out;
  EncodedFrame current = encode_frame(pad_frame(frames[0], m), params, cfg, true);
  for (std::size_t t = 0; t + 1 < frames.size(); ++t) {
    check_pair(frames[t], frames[t + 1]);
    const bool need_context = t + 2 < frames.size();
    EncodedFrame next = encode_frame(pad_frame(frames[t + 1], m), params, cfg, need_context);
    PairEstimate est = estimate_encoded(state, current, next, params, cfg, frames[t].height, frames[t].width);
    out.push_back(std::move(est.flows));
    state = std::move(est.state);
    current = std::move(next);
  }
  return out;
}

std::vector<FlowField> run_video(const std::vector<ImageFrame>& frames, const EncoderParams& params,
                                 const Config& cfg) {
  std::vector<FlowField> finals;
  for (auto& its : run_video_iterates(frames, params, cfg)) finals.push_back(std::move(its.back()));
  return finals;
}

#define MEMFLOW_INSTANTIATE_ESTIMATOR(T)                                                                       \
  template GruVars<T> gru_step(Tape<T>&, Var<T>, Var<T>, Var<T>, Var<T>);                                      \
  template Var<T> motion_at(Tape<T>&, const Config&, Var<T>, Var<T>, Var<T>);                                  \
  template PairTrace<T> estimate_pair(Tape<T>&, const Config&, const FrameVars<T>&, Var<T>,                    \
                                      const MemoryBuffer<T>&, int, const Mat<T>*, bool);                       \
  template Var<T> sequence_loss(const std::vector<Var<T>>&, const Mat<T>&, T);

MEMFLOW_INSTANTIATE_ESTIMATOR(float)
MEMFLOW_INSTANTIATE_ESTIMATOR(double)

}  // namespace memflow
