#pragma once

#include "memflow/ops.hpp"

#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace support {

using memflow::Mat;
using memflow::ParamSet;
using memflow::Tape;
using memflow::Var;

inline Mat<double> random_mat(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double lo = -1.0,
                              double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  Mat<double> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = d(rng);
  return m;
}

inline double rel_err(const Mat<double>& a, const Mat<double>& b) {
  const double scale = std::max({a.norm(), b.norm(), 1e-12});
  return (a - b).norm() / scale;
}

struct Input {
  std::string name;
  Mat<double> value;
  int h;
  int w;
};

using Builder = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

/// Compares tape gradients of sum(out * R), R a fixed random weight, with
/// central differences. Returns relative error per input and parameter.
inline std::map<std::string, double> check_gradients(std::vector<Input> inputs, ParamSet<double>* params,
                                                     const std::vector<std::string>& param_names,
                                                     const Builder& build, double eps = 1e-6,
                                                     std::uint64_t seed = 99) {
  Mat<double> weight;
  auto run = [&](bool grad, std::map<std::string, Mat<double>>* grads) {
    Tape<double> tape(params, grad);
    std::vector<Var<double>> vars;
    for (const auto& in : inputs) vars.push_back(tape.input(in.value, in.h, in.w));
    Var<double> out = build(tape, vars);
    if (weight.size() == 0) {
      std::mt19937_64 rng(seed);
      weight = random_mat(out.rows(), out.cols(), rng);
    }
    Var<double> loss = memflow::ops::sum(memflow::ops::mul(out, tape.constant(weight, out.h(), out.w())));
    if (grads) {
      tape.backward(loss);
      for (std::size_t i = 0; i < inputs.size(); ++i) (*grads)[inputs[i].name] = tape.grad(vars[i]);
      auto pg = tape.param_grads();
      for (const auto& n : param_names) (*grads)[n] = pg.count(n) ? pg.at(n) : Mat<double>::Zero(1, 1);
    }
    return loss.value()(0, 0);
  };
  std::map<std::string, Mat<double>> analytic;
  run(true, &analytic);

  std::map<std::string, double> errors;
  auto numeric = [&](Mat<double>& target) {
    Mat<double> g(target.rows(), target.cols());
    for (Eigen::Index i = 0; i < target.size(); ++i) {
      const double keep = target.data()[i];
      target.data()[i] = keep + eps;
      const double up = run(false, nullptr);
      target.data()[i] = keep - eps;
      const double down = run(false, nullptr);
      target.data()[i] = keep;
      g.data()[i] = (up - down) / (2.0 * eps);
    }
    return g;
  };
  for (auto& in : inputs) errors[in.name] = rel_err(analytic[in.name], numeric(in.value));
  for (const auto& n : param_names) errors[n] = rel_err(analytic[n], numeric(params->at(n)));
  return errors;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("memflow_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace support
