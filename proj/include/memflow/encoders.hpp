#pragma once

#include "memflow/autograd.hpp"

#include <random>
#include <string>
#include <utility>

namespace memflow {

/// Learnable tensors of every network, namespaced by module prefix
/// ("fnet", "cnet", "menc", "up", "gru", "fhead", "mem", "pred").
using EncoderParams = ParamSet<float>;

namespace nn {

/// k x k convolution "<name>.w" ((k*k*cin) x cout, He-normal, each filter
/// shifted to zero mean) and "<name>.b" (zeros).
template <typename T>
void add_conv(ParamSet<T>& params, const std::string& name, int cin, int cout, int k, std::mt19937_64& rng,
              double gain = 2.0);
template <typename T>
void add_depthwise(ParamSet<T>& params, const std::string& name, int channels, int k, std::mt19937_64& rng);

/// Kernel size is recovered from the weight shape.
template <typename T>
Var<T> conv(Tape<T>& tape, const std::string& name, Var<T> x, int stride = 1);
template <typename T>
Var<T> depthwise(Tape<T>& tape, const std::string& name, Var<T> x);

/// Large-kernel unit: point-wise projection followed by a 7x7 depth-wise conv.
template <typename T>
void add_large_kernel(ParamSet<T>& params, const std::string& name, int cin, int cout, std::mt19937_64& rng);
template <typename T>
Var<T> large_kernel(Tape<T>& tape, const std::string& name, Var<T> x);

}  // namespace nn

/// Image (H*W) x 3 in [0,1] as a graph input, rescaled to [-1, 1].
template <typename T>
Var<T> image_input(Tape<T>& tape, const ImageFrame& frame);

/// Residual conv stack with strides 2, 2, 2 (two blocks per level) and a 1x1
/// head to `out_dim` channels.
void init_encoder(EncoderParams& params, const std::string& prefix, const Config& cfg, int out_dim, bool norm,
                  std::mt19937_64& rng);
template <typename T>
Var<T> run_encoder(Tape<T>& tape, const std::string& prefix, Var<T> image, bool norm);

/// F_theta ("fnet", instance-normalized) -> D channels at 1/8 resolution.
template <typename T>
Var<T> feature_encoder(Tape<T>& tape, Var<T> image);

/// C_theta ("cnet", unnormalized) -> 2D channels, split into the context
/// feature (linear) and the initial hidden state (tanh).
template <typename T>
std::pair<Var<T>, Var<T>> context_encoder(Tape<T>& tape, Var<T> image, int context_dim);

void init_motion_encoder(EncoderParams& params, const Config& cfg, std::mt19937_64& rng);
/// E_theta ("menc"): (flow, correlation features) -> D_v channels; the last
/// two channels carry the flow itself.
template <typename T>
Var<T> motion_encoder(Tape<T>& tape, Var<T> flow, Var<T> corr);

void init_upsampler(EncoderParams& params, const std::string& prefix, int hidden_dim, std::mt19937_64& rng);
/// Convex 8x upsampling with a mask predicted from `features`.
template <typename T>
Var<T> upsample_flow(Tape<T>& tape, const std::string& prefix, Var<T> flow, Var<T> features);

FeatureMap<float> encode_features(const ImageFrame& frame, const EncoderParams& params);
std::pair<FeatureMap<float>, FeatureMap<float>> encode_context(const ImageFrame& frame, const EncoderParams& params,
                                                               int context_dim);
FeatureMap<float> encode_motion(const FlowField& flow, const FeatureMap<float>& corr_features,
                                const EncoderParams& params);
FlowField upsample_flow(const FlowField& coarse, const FeatureMap<float>& hidden, const EncoderParams& params);

}  // namespace memflow
