#include "memflow/types.hpp"

#include <utility>

namespace memflow {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::IndivisibleResolution: return "IndivisibleResolution";
    case ErrorCode::DegenerateBase: return "DegenerateBase";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::TooFewFrames: return "TooFewFrames";
    case ErrorCode::DivergenceDetected: return "DivergenceDetected";
    case ErrorCode::ColdStart: return "ColdStart";
    case ErrorCode::EmptyMask: return "EmptyMask";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
  }
  return "Unknown";
}

FlowField::FlowField(Grid u_, Grid v_) : u(std::move(u_)), v(std::move(v_)) {
  if (u.rows() != v.rows() || u.cols() != v.cols())
    throw Error(ErrorCode::ShapeMismatch, "flow components must have identical dimensions");
}

FlowField FlowField::zeros(int height, int width) {
  return FlowField(Grid::Zero(height, width), Grid::Zero(height, width));
}

FlowField FlowField::constant(int height, int width, float du, float dv) {
  return FlowField(Grid::Constant(height, width, du), Grid::Constant(height, width, dv));
}

ImageFrame::ImageFrame(int h, int w) : height(h), width(w), pixels(Mat<float>::Zero(static_cast<Eigen::Index>(h) * w, 3)) {}

ImageFrame::ImageFrame(int h, int w, Mat<float> px) : height(h), width(w), pixels(std::move(px)) {
  if (pixels.rows() != static_cast<Eigen::Index>(h) * w || pixels.cols() != 3)
    throw Error(ErrorCode::ShapeMismatch, "image must be (H*W) x 3");
}

void Config::validate() const {
  auto fail = [](const char* what) { throw Error(ErrorCode::InvalidConfig, what); };
  if (iters_train < 1 || iters_infer < 1) fail("iteration count must be >= 1");
  if (l_max < 0) fail("l_max must be >= 0");
  if (!(gamma > 0.0 && gamma <= 1.0)) fail("gamma must lie in (0, 1]");
  if (!(n_avg > 1.0)) fail("n_avg must be > 1");
  if (feature_dim < 2 || key_dim < 1 || value_dim < 3) fail("channel widths too small");
  if (pyramid_levels < 1) fail("pyramid_levels must be >= 1");
  if (lookup_radius < 0) fail("lookup_radius must be >= 0");
  if (encoder_widths.size() != 3) fail("encoder_widths needs one width per stride level");
}

}  // namespace memflow
