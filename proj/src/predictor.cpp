#include "memflow/predictor.hpp"

#include "memflow/ops.hpp"

namespace memflow {

namespace {
constexpr int kHeadWidth = 64;
}

void init_predictor(EncoderParams& params, const Config& cfg, std::mt19937_64& rng) {
  ProjectionParams<float>::init(cfg.context_dim(), cfg.key_dim, cfg.value_dim, cfg.value_dim, rng)
      .store(params, "pred.mem");
  nn::add_conv(params, "pred.head.in", cfg.context_dim() + cfg.value_dim + 2, kHeadWidth, 1, rng);
  for (const char* b : {"pred.head.b0", "pred.head.b1"}) {
    const std::string n(b);
    nn::add_depthwise(params, n + ".dw", kHeadWidth, 7, rng);
    params.at(n + ".dw.w") *= 0.3f;
    nn::add_conv(params, n + ".pw1", kHeadWidth, 2 * kHeadWidth, 1, rng);
    nn::add_conv(params, n + ".pw2", 2 * kHeadWidth, kHeadWidth, 1, rng, 0.5);
    nn::add_conv(params, n + ".gate", kHeadWidth, kHeadWidth, 1, rng, 1.0);
  }
  nn::add_conv(params, "pred.head.out", kHeadWidth, 2, 1, rng, 0.01);
  init_upsampler(params, "pred.up", kHeadWidth, rng);
}

FlowField forward_warp_flow(const FlowField& flow) {
  Mat<float> m = flow.as_matrix<float>();
  return FlowField::from_matrix(ops::splat_forward(m, m, flow.height(), flow.width()), flow.height(), flow.width());
}

double prediction_loss(const FlowField& pred, const FlowField& gt) {
  if (pred.height() != gt.height() || pred.width() != gt.width())
    throw Error(ErrorCode::ShapeMismatch, "prediction and ground truth differ in size");
  const double n = static_cast<double>(gt.height()) * gt.width();
  return ((pred.u - gt.u).cast<double>().cwiseAbs().sum() + (pred.v - gt.v).cast<double>().cwiseAbs().sum()) / n;
}

template <typename T>
PredictionVars<T> predict_flow(Tape<T>& tape, const Config& cfg, Var<T> context, const MemoryBuffer<T>& buffer,
                               const Mat<T>& prev_flow_coarse) {
  const int h = context.h(), w = context.w();
  if (prev_flow_coarse.rows() != static_cast<Eigen::Index>(h) * w)
    throw Error(ErrorCode::ShapeMismatch, "previous flow does not match the context grid");
  Var<T> zero_motion = tape.constant(Mat<T>::Zero(context.rows(), cfg.value_dim), h, w);
  const T coef = static_cast<T>(attention_coefficient(cfg, buffer.size(), h, w));
  auto proj = ProjectionVars<T>::bind(tape, "pred.mem");
  Var<T> f_am = read_out(tape, context, zero_motion, buffer, proj, coef).f_am;
  Var<T> f_p = tape.constant(ops::splat_forward(prev_flow_coarse, prev_flow_coarse, h, w), h, w);

  Var<T> x = ops::relu(nn::conv(tape, "pred.head.in", ops::concat_cols(std::vector<Var<T>>{context, f_am, f_p})));
  for (const char* b : {"pred.head.b0", "pred.head.b1"}) {
    const std::string n(b);
    Var<T> y = nn::depthwise(tape, n + ".dw", x);
    y = nn::conv(tape, n + ".pw2", ops::relu(nn::conv(tape, n + ".pw1", y)));
    Var<T> gate = ops::sigmoid(nn::conv(tape, n + ".gate", x));
    x = ops::add(x, ops::mul(gate, y));
  }
  Var<T> coarse = ops::add(f_p, nn::conv(tape, "pred.head.out", x));
  Var<T> full = upsample_flow(tape, "pred.up", coarse, x);
  return {coarse, full, f_am};
}

Prediction predict(const PredictorState& state, const ImageFrame& frame_t, const EncoderParams& params,
                   const Config& cfg) {
  if (!state.prev_flow) throw Error(ErrorCode::ColdStart, "no past observation to predict from");
  const ImageFrame padded = pad_frame(frame_t, padding_multiple(cfg));
  Tape<float> tape(&params, false);
  auto [context, hidden] = context_encoder(tape, image_input(tape, padded), cfg.context_dim());
  (void)hidden;
  if (state.prev_flow->height() != context.h() || state.prev_flow->width() != context.w())
    throw Error(ErrorCode::ShapeMismatch, "frame size changed within a stream");
  auto out = predict_flow(tape, cfg, context, state.buffer, state.prev_flow->as_matrix<float>());
  Prediction p;
  p.coarse = FlowField::from_matrix(out.coarse.value(), context.h(), context.w());
  p.full = crop_flow(FlowField::from_matrix(out.full.value(), out.full.h(), out.full.w()), frame_t.height,
                     frame_t.width);
  return p;
}

FlowField predict_flow(const PredictorState& state, const ImageFrame& frame_t, const EncoderParams& params,
                       const Config& cfg) {
  return predict(state, frame_t, params, cfg).full;
}

PredictorState observe(const PredictorState& state, const ImageFrame& frame_t, const ImageFrame& frame_t1,
                       const EncoderParams& params, const Config& cfg, const Prediction* self_loop) {
  PairEstimate est = estimate_pair(state.estimator, frame_t, frame_t1, params, cfg);
  FlowField flow = est.coarse;
  FlowField flow_full = est.flows.back();
  FeatureMap<float> motion = est.motion;
  if (self_loop) {
    const int m = padding_multiple(cfg);
    Tape<float> tape(&params, false);
    Var<float> fa = feature_encoder(tape, image_input(tape, pad_frame(frame_t, m)));
    Var<float> fb = feature_encoder(tape, image_input(tape, pad_frame(frame_t1, m)));
    flow = self_loop->coarse;
    flow_full = self_loop->full;
    Var<float> f = tape.constant(flow.as_matrix<float>(), flow.height(), flow.width());
    motion.data = motion_at(tape, cfg, fa, fb, f).value();
  }
  PredictorState next;
  next.buffer = update(state.buffer, est.context, motion, ProjectionParams<float>::from(params, "pred.mem"),
                       state.frame_index, cfg.l_max);
  next.prev_flow = flow;
  next.prev_flow_full = std::move(flow_full);
  next.estimator = std::move(est.state);
  next.frame_index = state.frame_index + 1;
  return next;
}

template PredictionVars<float> predict_flow(Tape<float>&, const Config&, Var<float>, const MemoryBuffer<float>&,
                                            const Mat<float>&);
template PredictionVars<double> predict_flow(Tape<double>&, const Config&, Var<double>, const MemoryBuffer<double>&,
                                             const Mat<double>&);

}  // namespace memflow
