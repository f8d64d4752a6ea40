#pragma once

#include "memflow/types.hpp"

#include <array>
#include <string>
#include <vector>

namespace memflow {

/// WAUC grid: thresholds i/20 px and weights 1 - (i-1)/100, i = 1..100.
inline constexpr int kWaucThresholds = 100;
double wauc_threshold(int i);
double wauc_weight(int i);

// All metrics average over the pixels where `mask` is true (every pixel when
// mask is null). Errors: ShapeMismatch, EmptyMask.
double epe(const FlowField& pred, const FlowField& gt, const MaskGrid* mask = nullptr);
/// Percent of pixels with EPE > 3 and EPE > 0.05 |gt|.
double fl_all(const FlowField& pred, const FlowField& gt, const MaskGrid* mask = nullptr);
/// Percent of pixels with EPE > 1.
double outlier_1px(const FlowField& pred, const FlowField& gt, const MaskGrid* mask = nullptr);
/// Weighted mean inlier rate (EPE <= threshold), in percent.
double wauc(const FlowField& pred, const FlowField& gt, const MaskGrid* mask = nullptr);

struct MetricSummary {
  long long pixels = 0;
  double epe = 0.0;
  double fl_all = 0.0;
  double px1 = 0.0;
  double wauc = 0.0;
};

struct SpeedBin {
  std::string name;
  double lower;
  double upper;  // exclusive, may be +inf
};

/// s0-10, s10-40, s40+ over the ground-truth magnitude.
const std::vector<SpeedBin>& speed_bins();

struct EvalReport {
  MetricSummary all;
  std::vector<std::pair<std::string, MetricSummary>> per_bin;

  double epe() const { return all.epe; }
  std::string to_json() const;
};

/// Pools per-pixel statistics over many flow fields.
class MetricAccumulator {
 public:
  MetricAccumulator();
  void add(const FlowField& pred, const FlowField& gt, const MaskGrid* mask = nullptr);
  long long pixels() const { return total_.pixels; }
  EvalReport report() const;

 private:
  struct Sums {
    long long pixels = 0;
    double epe = 0.0;
    long long fl = 0;
    long long px1 = 0;
    double wauc = 0.0;  // per-pixel weighted inlier fraction
  };
  static MetricSummary summarize(const Sums& s);

  Sums total_;
  std::vector<Sums> bins_;
};

}  // namespace memflow
