#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace memflow {

/// Dense row-major matrix. Spatial tensors are stored as (H*W) x C with pixels
/// in raster order, so a 1x1 convolution is a single GEMM.
template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

/// Single-channel H x W float grid.
using Grid = Mat<float>;
using MaskGrid = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class ErrorCode {
  BadMagic,
  TruncatedFile,
  IoFailure,
  ShapeMismatch,
  IndivisibleResolution,
  DegenerateBase,
  LengthMismatch,
  TooFewFrames,
  DivergenceDetected,
  ColdStart,
  EmptyMask,
  InvalidSpec,
  InvalidConfig,
};

const char* to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Per-pixel displacement in pixels of the grid it lives on.
struct FlowField {
  Grid u;
  Grid v;

  FlowField() = default;
  FlowField(Grid u_, Grid v_);
  static FlowField zeros(int height, int width);
  static FlowField constant(int height, int width, float du, float dv);

  int height() const { return static_cast<int>(u.rows()); }
  int width() const { return static_cast<int>(u.cols()); }
  bool all_finite() const { return u.allFinite() && v.allFinite(); }

  /// (H*W) x 2 matrix, columns (u, v).
  template <typename T>
  Mat<T> as_matrix() const {
    Mat<T> m(height() * width(), 2);
    for (int y = 0; y < height(); ++y)
      for (int x = 0; x < width(); ++x) {
        m(y * width() + x, 0) = static_cast<T>(u(y, x));
        m(y * width() + x, 1) = static_cast<T>(v(y, x));
      }
    return m;
  }

  template <typename T>
  static FlowField from_matrix(const Mat<T>& m, int height, int width) {
    if (m.rows() != static_cast<Eigen::Index>(height) * width || m.cols() != 2)
      throw Error(ErrorCode::ShapeMismatch, "flow matrix must be (H*W) x 2");
    FlowField f = zeros(height, width);
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        f.u(y, x) = static_cast<float>(m(y * width + x, 0));
        f.v(y, x) = static_cast<float>(m(y * width + x, 1));
      }
    return f;
  }
};

/// RGB image with values in [0, 1], stored (H*W) x 3.
struct ImageFrame {
  int height = 0;
  int width = 0;
  Mat<float> pixels;

  ImageFrame() = default;
  ImageFrame(int h, int w);
  ImageFrame(int h, int w, Mat<float> px);

  float& at(int y, int x, int c) { return pixels(static_cast<Eigen::Index>(y) * width + x, c); }
  float at(int y, int x, int c) const { return pixels(static_cast<Eigen::Index>(y) * width + x, c); }
};

/// Dense H x W x C feature grid at 1/scale of the input resolution.
template <typename T>
struct FeatureMap {
  int height = 0;
  int width = 0;
  int scale = 8;
  Mat<T> data;  // (H*W) x C

  int channels() const { return static_cast<int>(data.cols()); }
};

/// Model and run configuration. Channel widths are toy-scale choices.
struct Config {
  int feature_dim = 96;       // D
  int key_dim = 64;           // D_k
  int value_dim = 96;         // D_v
  int iters_train = 12;       // N during training
  int iters_infer = 15;       // N at inference
  int l_max = 1;
  double gamma = 0.85;
  int pyramid_levels = 4;
  int lookup_radius = 4;
  double n_avg = 96.0;        // log base of the attention re-scaling
  std::uint64_t seed = 0;
  std::vector<int> encoder_widths = {16, 32, 48};

  bool rescale = true;        // false: plain 1/sqrt(D_k)
  bool warm_start = false;
  bool detach_memory = false;

  int hidden_dim() const { return feature_dim; }
  int context_dim() const { return feature_dim; }
  int corr_channels() const { return pyramid_levels * (2 * lookup_radius + 1) * (2 * lookup_radius + 1); }

  /// Throws InvalidConfig when an invariant is violated.
  void validate() const;
};

}  // namespace memflow
