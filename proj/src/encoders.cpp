#include "memflow/encoders.hpp"

#include "memflow/ops.hpp"

#include <cmath>

namespace memflow {
namespace nn {

template <typename T>
void add_conv(ParamSet<T>& params, const std::string& name, int cin, int cout, int k, std::mt19937_64& rng,
              double gain) {
  const int fan_in = k * k * cin;
  std::normal_distribution<double> dist(0.0, std::sqrt(gain / fan_in));
  Mat<T> w(fan_in, cout);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<T>(dist(rng));
  // Zero-mean filters: on non-negative (post-ReLU) inputs an uncentered filter
  // is dominated by the input mean and whole channels start dead.
  if (fan_in > 1) w.rowwise() -= w.colwise().mean();
  params.add(name + ".w", std::move(w));
  params.add(name + ".b", Mat<T>::Zero(1, cout));
}

template <typename T>
void add_depthwise(ParamSet<T>& params, const std::string& name, int channels, int k, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / (k * k)));
  Mat<T> w(k * k, channels);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<T>(dist(rng));
  params.add(name + ".w", std::move(w));
  params.add(name + ".b", Mat<T>::Zero(1, channels));
}

template <typename T>
Var<T> conv(Tape<T>& tape, const std::string& name, Var<T> x, int stride) {
  Var<T> w = tape.param(name + ".w");
  Var<T> b = tape.param(name + ".b");
  const Eigen::Index taps = w.rows() / x.cols();
  if (taps == 1 && stride == 1) return ops::linear(x, w, b);
  const int k = static_cast<int>(std::lround(std::sqrt(static_cast<double>(taps))));
  return ops::conv2d(x, w, b, k, stride);
}

template <typename T>
Var<T> depthwise(Tape<T>& tape, const std::string& name, Var<T> x) {
  Var<T> w = tape.param(name + ".w");
  const int k = static_cast<int>(std::lround(std::sqrt(static_cast<double>(w.rows()))));
  return ops::depthwise(x, w, tape.param(name + ".b"), k);
}

template <typename T>
void add_large_kernel(ParamSet<T>& params, const std::string& name, int cin, int cout, std::mt19937_64& rng) {
  add_conv(params, name + ".pw", cin, cout, 1, rng, 1.0);
  add_depthwise(params, name + ".dw", cout, 7, rng);
  // Start the depth-wise stage close to identity.
  auto& w = params.at(name + ".dw.w");
  w *= T(0.1);
  w.row(24).setOnes();
}

template <typename T>
Var<T> large_kernel(Tape<T>& tape, const std::string& name, Var<T> x) {
  return depthwise(tape, name + ".dw", conv(tape, name + ".pw", x));
}

template void add_conv(ParamSet<float>&, const std::string&, int, int, int, std::mt19937_64&, double);
template void add_depthwise(ParamSet<float>&, const std::string&, int, int, std::mt19937_64&);
template void add_large_kernel(ParamSet<float>&, const std::string&, int, int, std::mt19937_64&);
template Var<float> conv(Tape<float>&, const std::string&, Var<float>, int);
template Var<double> conv(Tape<double>&, const std::string&, Var<double>, int);
template Var<float> depthwise(Tape<float>&, const std::string&, Var<float>);
template Var<double> depthwise(Tape<double>&, const std::string&, Var<double>);
template Var<float> large_kernel(Tape<float>&, const std::string&, Var<float>);
template Var<double> large_kernel(Tape<double>&, const std::string&, Var<double>);

}  // namespace nn

namespace {

void add_block(EncoderParams& params, const std::string& name, int cin, int cout, int stride, std::mt19937_64& rng) {
  nn::add_conv(params, name + ".conv1", cin, cout, 3, rng);
  nn::add_conv(params, name + ".conv2", cout, cout, 3, rng);
  if (stride != 1 || cin != cout) nn::add_conv(params, name + ".down", cin, cout, 1, rng, 1.0);
}

template <typename T>
Var<T> maybe_norm(Var<T> x, bool norm) {
  return norm ? ops::instance_norm(x) : x;
}

template <typename T>
Var<T> block(Tape<T>& tape, const std::string& name, Var<T> x, int stride, bool norm) {
  Var<T> y = ops::relu(maybe_norm(nn::conv(tape, name + ".conv1", x, stride), norm));
  y = maybe_norm(nn::conv(tape, name + ".conv2", y), norm);
  Var<T> skip = x;
  const std::string down = name + ".down";
  // The skip projection exists only when the block changes shape.
  if (stride != 1 || y.cols() != x.cols()) skip = maybe_norm(nn::conv(tape, down, x, stride), norm);
  return ops::relu(ops::add(skip, y));
}

}  // namespace

template <typename T>
Var<T> image_input(Tape<T>& tape, const ImageFrame& frame) {
  Mat<T> px = (frame.pixels.cast<T>().array() * T(2) - T(1)).matrix();
  return tape.constant(std::move(px), frame.height, frame.width);
}

void init_encoder(EncoderParams& params, const std::string& prefix, const Config& cfg, int out_dim, bool,
                  std::mt19937_64& rng) {
  const auto& wd = cfg.encoder_widths;
  nn::add_conv(params, prefix + ".stem", 3, wd[0], 7, rng);
  add_block(params, prefix + ".l1.0", wd[0], wd[0], 1, rng);
  add_block(params, prefix + ".l1.1", wd[0], wd[0], 1, rng);
  add_block(params, prefix + ".l2.0", wd[0], wd[1], 2, rng);
  add_block(params, prefix + ".l2.1", wd[1], wd[1], 1, rng);
  add_block(params, prefix + ".l3.0", wd[1], wd[2], 2, rng);
  add_block(params, prefix + ".l3.1", wd[2], wd[2], 1, rng);
  nn::add_conv(params, prefix + ".head", wd[2], out_dim, 1, rng, 1.0);
}

template <typename T>
Var<T> run_encoder(Tape<T>& tape, const std::string& prefix, Var<T> image, bool norm) {
  Var<T> x = ops::relu(maybe_norm(nn::conv(tape, prefix + ".stem", image, 2), norm));
  x = block(tape, prefix + ".l1.0", x, 1, norm);
  x = block(tape, prefix + ".l1.1", x, 1, norm);
  x = block(tape, prefix + ".l2.0", x, 2, norm);
  x = block(tape, prefix + ".l2.1", x, 1, norm);
  x = block(tape, prefix + ".l3.0", x, 2, norm);
  x = block(tape, prefix + ".l3.1", x, 1, norm);
  return nn::conv(tape, prefix + ".head", x);
}

template <typename T>
Var<T> feature_encoder(Tape<T>& tape, Var<T> image) {
  return run_encoder(tape, "fnet", image, true);
}

template <typename T>
std::pair<Var<T>, Var<T>> context_encoder(Tape<T>& tape, Var<T> image, int context_dim) {
  Var<T> out = run_encoder(tape, "cnet", image, false);
  if (out.cols() < context_dim + 1) throw Error(ErrorCode::ShapeMismatch, "context encoder output too narrow");
  Var<T> context = ops::slice_cols(out, 0, context_dim);
  Var<T> hidden = ops::tanh(ops::slice_cols(out, context_dim, static_cast<int>(out.cols()) - context_dim));
  return {context, hidden};
}

void init_motion_encoder(EncoderParams& params, const Config& cfg, std::mt19937_64& rng) {
  const int corr_width = 64;
  nn::add_conv(params, "menc.corr1", cfg.corr_channels(), corr_width, 1, rng);
  nn::add_large_kernel(params, "menc.corr2", corr_width, corr_width, rng);
  nn::add_conv(params, "menc.flow1", 2, 16, 7, rng);
  nn::add_conv(params, "menc.flow2", 16, 16, 3, rng);
  nn::add_conv(params, "menc.out", corr_width + 16, cfg.value_dim - 2, 1, rng);
}

template <typename T>
Var<T> motion_encoder(Tape<T>& tape, Var<T> flow, Var<T> corr) {
  if (flow.rows() != corr.rows() || flow.cols() != 2)
    throw Error(ErrorCode::ShapeMismatch, "motion encoder: flow and correlation grids differ");
  Var<T> c = ops::relu(nn::conv(tape, "menc.corr1", corr));
  c = ops::relu(nn::large_kernel(tape, "menc.corr2", c));
  Var<T> f = ops::relu(nn::conv(tape, "menc.flow1", flow));
  f = ops::relu(nn::conv(tape, "menc.flow2", f));
  Var<T> m = ops::relu(nn::conv(tape, "menc.out", ops::concat_cols(std::vector<Var<T>>{c, f})));
  return ops::concat_cols(std::vector<Var<T>>{m, flow});
}

void init_upsampler(EncoderParams& params, const std::string& prefix, int hidden_dim, std::mt19937_64& rng) {
  nn::add_conv(params, prefix + ".mask1", hidden_dim, 64, 1, rng);
  nn::add_conv(params, prefix + ".mask2", 64, 9 * 64, 1, rng, 1.0);
}

template <typename T>
Var<T> upsample_flow(Tape<T>& tape, const std::string& prefix, Var<T> flow, Var<T> features) {
  if (flow.rows() != features.rows()) throw Error(ErrorCode::ShapeMismatch, "upsample: flow and features differ");
  Var<T> mask = nn::conv(tape, prefix + ".mask2", ops::relu(nn::conv(tape, prefix + ".mask1", features)));
  return ops::convex_upsample(flow, ops::scale(mask, T(0.25)), 8);
}

FeatureMap<float> encode_features(const ImageFrame& frame, const EncoderParams& params) {
  if (frame.height % 8 != 0 || frame.width % 8 != 0)
    throw Error(ErrorCode::IndivisibleResolution, "frame dimensions must be divisible by 8");
  Tape<float> tape(&params, false);
  Var<float> f = feature_encoder(tape, image_input(tape, frame));
  return FeatureMap<float>{f.h(), f.w(), 8, f.value()};
}

std::pair<FeatureMap<float>, FeatureMap<float>> encode_context(const ImageFrame& frame, const EncoderParams& params,
                                                               int context_dim) {
  if (frame.height % 8 != 0 || frame.width % 8 != 0)
    throw Error(ErrorCode::IndivisibleResolution, "frame dimensions must be divisible by 8");
  Tape<float> tape(&params, false);
  auto [c, h] = context_encoder(tape, image_input(tape, frame), context_dim);
  return {FeatureMap<float>{c.h(), c.w(), 8, c.value()}, FeatureMap<float>{h.h(), h.w(), 8, h.value()}};
}

FeatureMap<float> encode_motion(const FlowField& flow, const FeatureMap<float>& corr_features,
                                const EncoderParams& params) {
  if (flow.height() != corr_features.height || flow.width() != corr_features.width)
    throw Error(ErrorCode::ShapeMismatch, "motion encoder: flow and correlation grids differ");
  Tape<float> tape(&params, false);
  Var<float> f = tape.constant(flow.as_matrix<float>(), flow.height(), flow.width());
  Var<float> c = tape.constant(corr_features.data, corr_features.height, corr_features.width);
  Var<float> m = motion_encoder(tape, f, c);
  return FeatureMap<float>{m.h(), m.w(), 8, m.value()};
}

FlowField upsample_flow(const FlowField& coarse, const FeatureMap<float>& hidden, const EncoderParams& params) {
  if (coarse.height() != hidden.height || coarse.width() != hidden.width)
    throw Error(ErrorCode::ShapeMismatch, "upsample: flow and hidden grids differ");
  Tape<float> tape(&params, false);
  Var<float> f = tape.constant(coarse.as_matrix<float>(), coarse.height(), coarse.width());
  Var<float> h = tape.constant(hidden.data, hidden.height, hidden.width);
  Var<float> up = upsample_flow(tape, "up", f, h);
  return FlowField::from_matrix(up.value(), up.h(), up.w());
}

#define MEMFLOW_INSTANTIATE_ENCODERS(T)                                                 \
  template Var<T> image_input(Tape<T>&, const ImageFrame&);                             \
  template Var<T> run_encoder(Tape<T>&, const std::string&, Var<T>, bool);              \
  template Var<T> feature_encoder(Tape<T>&, Var<T>);                                    \
  template std::pair<Var<T>, Var<T>> context_encoder(Tape<T>&, Var<T>, int);            \
  template Var<T> motion_encoder(Tape<T>&, Var<T>, Var<T>);                             \
  template Var<T> upsample_flow(Tape<T>&, const std::string&, Var<T>, Var<T>);

MEMFLOW_INSTANTIATE_ENCODERS(float)
MEMFLOW_INSTANTIATE_ENCODERS(double)

}  // namespace memflow
