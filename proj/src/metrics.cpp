#include "memflow/metrics.hpp"

#include <json.hpp>

#include <cmath>
#include <limits>

namespace memflow {

namespace {

void check(const FlowField& pred, const FlowField& gt, const MaskGrid* mask) {
  if (pred.height() != gt.height() || pred.width() != gt.width())
    throw Error(ErrorCode::ShapeMismatch, "prediction and ground truth differ in size");
  if (mask && (mask->rows() != gt.height() || mask->cols() != gt.width()))
    throw Error(ErrorCode::ShapeMismatch, "mask does not match the flow size");
}

double weight_sum() {
  static const double s = [] {
    double acc = 0.0;
    for (int i = 1; i <= kWaucThresholds; ++i) acc += wauc_weight(i);
    return acc;
  }();
  return s;
}

/// Weighted fraction of thresholds at which an error `e` counts as inlier.
double wauc_pixel(double e) {
  double acc = 0.0;
  for (int i = 1; i <= kWaucThresholds; ++i)
    if (e <= wauc_threshold(i)) acc += wauc_weight(i);
  return acc / weight_sum();
}

template <typename F>
double mean_over_mask(const FlowField& pred, const FlowField& gt, const MaskGrid* mask, F&& per_pixel) {
  check(pred, gt, mask);
  double acc = 0.0;
  long long n = 0;
  for (int y = 0; y < gt.height(); ++y)
    for (int x = 0; x < gt.width(); ++x) {
      if (mask && !(*mask)(y, x)) continue;
      const double du = static_cast<double>(pred.u(y, x)) - gt.u(y, x);
      const double dv = static_cast<double>(pred.v(y, x)) - gt.v(y, x);
      const double mag = std::hypot(static_cast<double>(gt.u(y, x)), static_cast<double>(gt.v(y, x)));
      acc += per_pixel(std::hypot(du, dv), mag);
      ++n;
    }
  if (n == 0) throw Error(ErrorCode::EmptyMask, "mask selects no pixels");
  return acc / static_cast<double>(n);
}

bool is_fl_outlier(double e, double mag) { return e > 3.0 && e > 0.05 * mag; }

}  // namespace

double wauc_threshold(int i) { return i / 20.0; }
double wauc_weight(int i) { return 1.0 - (i - 1) / 100.0; }

double epe(const FlowField& pred, const FlowField& gt, const MaskGrid* mask) {
  return mean_over_mask(pred, gt, mask, [](double e, double) { return e; });
}

double fl_all(const FlowField& pred, const FlowField& gt, const MaskGrid* mask) {
  return 100.0 * mean_over_mask(pred, gt, mask, [](double e, double m) { return is_fl_outlier(e, m) ? 1.0 : 0.0; });
}

double outlier_1px(const FlowField& pred, const FlowField& gt, const MaskGrid* mask) {
  return 100.0 * mean_over_mask(pred, gt, mask, [](double e, double) { return e > 1.0 ? 1.0 : 0.0; });
}

double wauc(const FlowField& pred, const FlowField& gt, const MaskGrid* mask) {
  return 100.0 * mean_over_mask(pred, gt, mask, [](double e, double) { return wauc_pixel(e); });
}

const std::vector<SpeedBin>& speed_bins() {
  static const std::vector<SpeedBin> bins{
      {"s0-10", 0.0, 10.0}, {"s10-40", 10.0, 40.0}, {"s40+", 40.0, std::numeric_limits<double>::infinity()}};
  return bins;
}

MetricAccumulator::MetricAccumulator() : bins_(speed_bins().size()) {}

void MetricAccumulator::add(const FlowField& pred, const FlowField& gt, const MaskGrid* mask) {
  check(pred, gt, mask);
  const auto& bins = speed_bins();
  for (int y = 0; y < gt.height(); ++y)
    for (int x = 0; x < gt.width(); ++x) {
      if (mask && !(*mask)(y, x)) continue;
      const double e = std::hypot(static_cast<double>(pred.u(y, x)) - gt.u(y, x),
                                  static_cast<double>(pred.v(y, x)) - gt.v(y, x));
      const double mag = std::hypot(static_cast<double>(gt.u(y, x)), static_cast<double>(gt.v(y, x)));
      auto bump = [&](Sums& s) {
        ++s.pixels;
        s.epe += e;
        s.fl += is_fl_outlier(e, mag);
        s.px1 += e > 1.0;
        s.wauc += wauc_pixel(e);
      };
      bump(total_);
      for (std::size_t b = 0; b < bins.size(); ++b)
        if (mag >= bins[b].lower && mag < bins[b].upper) bump(bins_[b]);
    }
}

MetricSummary MetricAccumulator::summarize(const Sums& s) {
  MetricSummary m;
  m.pixels = s.pixels;
  if (s.pixels == 0) return m;
  const double n = static_cast<double>(s.pixels);
  m.epe = s.epe / n;
  m.fl_all = 100.0 * s.fl / n;
  m.px1 = 100.0 * s.px1 / n;
  m.wauc = 100.0 * s.wauc / n;
  return m;
}

EvalReport MetricAccumulator::report() const {
  if (total_.pixels == 0) throw Error(ErrorCode::EmptyMask, "no pixels were accumulated");
  EvalReport r;
  r.all = summarize(total_);
  for (std::size_t b = 0; b < bins_.size(); ++b) r.per_bin.emplace_back(speed_bins()[b].name, summarize(bins_[b]));
  return r;
}

std::string EvalReport::to_json() const {
  // Empty bins carry null metrics rather than zeros.
  auto summary = [](const MetricSummary& m) {
    if (m.pixels == 0)
      return nlohmann::json{{"pixels", 0}, {"epe", nullptr}, {"fl_all", nullptr}, {"px1", nullptr}, {"wauc", nullptr}};
    return nlohmann::json{{"pixels", m.pixels}, {"epe", m.epe}, {"fl_all", m.fl_all}, {"px1", m.px1},
                          {"wauc", m.wauc}};
  };
  nlohmann::json j = summary(all);
  nlohmann::json bins = nlohmann::json::object();
  for (const auto& [name, m] : per_bin) bins[name] = summary(m);
  j["per_bin"] = bins;
  return j.dump();
}

}  // namespace memflow
