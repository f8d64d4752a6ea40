#include "memflow/ops.hpp"
#include "support.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace memflow;
using support::Input;
using support::random_mat;

namespace {

constexpr double kTol = 1e-4;

int clampi(int v, int lo, int hi) { return std::max(lo, std::min(v, hi)); }

void check_all(const std::map<std::string, double>& errs) {
  for (const auto& [name, e] : errs) {
    INFO(name << " rel err " << e);
    CHECK(e < kTol);
  }
}

// Direct nested-loop convolution with replicate padding.
Mat<double> conv_oracle(const Mat<double>& x, int h, int w, const Mat<double>& wt, const Mat<double>& b, int k,
                        int stride, int& oh, int& ow) {
  const int cin = static_cast<int>(x.cols()), cout = static_cast<int>(wt.cols());
  const int pad = k / 2;
  oh = (h + 2 * pad - k) / stride + 1;
  ow = (w + 2 * pad - k) / stride + 1;
  Mat<double> out(oh * ow, cout);
  for (int oy = 0; oy < oh; ++oy)
    for (int ox = 0; ox < ow; ++ox)
      for (int o = 0; o < cout; ++o) {
        double acc = b(0, o);
        for (int ky = 0; ky < k; ++ky)
          for (int kx = 0; kx < k; ++kx)
            for (int c = 0; c < cin; ++c) {
              const int iy = clampi(oy * stride - pad + ky, 0, h - 1), ix = clampi(ox * stride - pad + kx, 0, w - 1);
              acc += wt((ky * k + kx) * cin + c, o) * x(iy * w + ix, c);
            }
        out(oy * ow + ox, o) = acc;
      }
  return out;
}

}  // namespace

TEST_CASE("conv2d matches a direct convolution") {
  std::mt19937_64 rng(1);
  for (auto [k, stride] : {std::pair{3, 1}, std::pair{3, 2}, std::pair{7, 2}, std::pair{1, 1}}) {
    const int h = 5, w = 6, cin = 3, cout = 4;
    Mat<double> x = random_mat(h * w, cin, rng), wt = random_mat(k * k * cin, cout, rng), b = random_mat(1, cout, rng);
    Tape<double> tape(nullptr, false);
    Var<double> out = ops::conv2d(tape.constant(x, h, w), tape.constant(wt), tape.constant(b, 1, 1), k, stride);
    int oh = 0, ow = 0;
    Mat<double> ref = conv_oracle(x, h, w, wt, b, k, stride, oh, ow);
    CHECK(out.h() == oh);
    CHECK(out.w() == ow);
    CHECK((out.value() - ref).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("conv2d and depthwise gradients") {
  std::mt19937_64 rng(2);
  for (auto [k, stride] : {std::pair{3, 1}, std::pair{3, 2}, std::pair{7, 1}}) {
    check_all(support::check_gradients(
        {{"x", random_mat(16, 3, rng), 4, 4}, {"w", random_mat(k * k * 3, 2, rng), k * k * 3, 1},
         {"b", random_mat(1, 2, rng), 1, 1}},
        nullptr, {}, [k = k, stride = stride](Tape<double>&, const std::vector<Var<double>>& v) {
          return ops::conv2d(v[0], v[1], v[2], k, stride);
        }));
  }
  check_all(support::check_gradients(
      {{"x", random_mat(20, 3, rng), 4, 5}, {"w", random_mat(49, 3, rng), 49, 1}, {"b", random_mat(1, 3, rng), 1, 1}},
      nullptr, {}, [](Tape<double>&, const std::vector<Var<double>>& v) { return ops::depthwise(v[0], v[1], v[2], 7); }));
}

TEST_CASE("pointwise, normalization and softmax gradients") {
  std::mt19937_64 rng(3);
  auto unary = [&](auto op) {
    check_all(support::check_gradients({{"x", random_mat(12, 3, rng), 3, 4}}, nullptr, {},
                                       [op](Tape<double>&, const std::vector<Var<double>>& v) { return op(v[0]); }));
  };
  unary([](Var<double> a) { return ops::sigmoid(a); });
  unary([](Var<double> a) { return ops::tanh(a); });
  unary([](Var<double> a) { return ops::instance_norm(a); });
  unary([](Var<double> a) { return ops::softmax_rows(a); });
  unary([](Var<double> a) { return ops::one_minus(a); });
  unary([](Var<double> a) { return ops::slice_cols(a, 1, 2); });
  unary([](Var<double> a) { return ops::scale(a, 0.3); });

  check_all(support::check_gradients(
      {{"a", random_mat(6, 4, rng), 6, 1}, {"b", random_mat(5, 4, rng), 5, 1}}, nullptr, {},
      [](Tape<double>&, const std::vector<Var<double>>& v) { return ops::matmul_nt(v[0], v[1], 0.7); }));
  check_all(support::check_gradients(
      {{"x", random_mat(6, 3, rng), 2, 3}, {"w", random_mat(3, 5, rng), 3, 1}, {"b", random_mat(1, 5, rng), 1, 1}},
      nullptr, {}, [](Tape<double>&, const std::vector<Var<double>>& v) { return ops::linear(v[0], v[1], v[2]); }));
  check_all(support::check_gradients(
      {{"a", random_mat(6, 2, rng), 2, 3}, {"b", random_mat(6, 3, rng), 2, 3}, {"s", random_mat(1, 1, rng), 1, 1}},
      nullptr, {}, [](Tape<double>&, const std::vector<Var<double>>& v) {
        Var<double> c = ops::concat_cols(std::vector<Var<double>>{v[0], v[1]});
        return ops::scale_by(ops::mul(c, c), v[2]);
      }));
  check_all(support::check_gradients(
      {{"a", random_mat(4, 3, rng), 4, 1}, {"b", random_mat(2, 3, rng), 2, 1}}, nullptr, {},
      [](Tape<double>&, const std::vector<Var<double>>& v) {
        return ops::concat_rows(std::vector<Var<double>>{v[0], v[1]});
      }));
  check_all(support::check_gradients(
      {{"c", random_mat(4, 16, rng), 2, 2}}, nullptr, {},
      [](Tape<double>&, const std::vector<Var<double>>& v) { return ops::avg_pool_cols(v[0], 4, 4); }));
}

TEST_CASE("l1_mean is the mean per-row L1 distance") {
  Mat<double> a(2, 2), t(2, 2);
  a << 1, 2, 3, 4;
  t << 0, 0, 0, 0;
  Tape<double> tape(nullptr, false);
  CHECK(ops::l1_mean(tape.constant(a), t).value()(0, 0) == doctest::Approx(5.0));
  std::mt19937_64 rng(4);
  Mat<double> target = random_mat(6, 2, rng);
  check_all(support::check_gradients({{"x", random_mat(6, 2, rng), 2, 3}}, nullptr, {},
                                     [target](Tape<double>&, const std::vector<Var<double>>& v) {
                                       return ops::l1_mean(v[0], target);
                                     }));
}

TEST_CASE("convex upsampling") {
  std::mt19937_64 rng(5);
  const int h = 3, w = 4, f = 8;
  SUBCASE("constant coarse flow scales by the factor") {
    Tape<double> tape(nullptr, false);
    Mat<double> flow(h * w, 2);
    flow.col(0).setOnes();
    flow.col(1).setZero();
    Var<double> up = ops::convex_upsample(tape.constant(flow, h, w), tape.constant(random_mat(h * w, 9 * f * f, rng, -3, 3), h, w), f);
    CHECK(up.h() == h * f);
    CHECK(up.w() == w * f);
    CHECK((up.value().col(0).array() - 8.0).abs().maxCoeff() < 1e-12);
    CHECK(up.value().col(1).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("matches a softmax-weighted neighbourhood oracle and stays in the convex hull") {
    Mat<double> flow = random_mat(h * w, 2, rng, -2, 2), mask = random_mat(h * w, 9 * f * f, rng, -3, 3);
    Tape<double> tape(nullptr, false);
    Mat<double> up = ops::convex_upsample(tape.constant(flow, h, w), tape.constant(mask, h, w), f).value();
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int sy = 0; sy < f; ++sy)
          for (int sx = 0; sx < f; ++sx) {
            double z = 0, u = 0, lo = 1e9, hi = -1e9;
            for (int ky = 0; ky < 3; ++ky)
              for (int kx = 0; kx < 3; ++kx) {
                const double e = std::exp(mask(y * w + x, (ky * 3 + kx) * f * f + sy * f + sx));
                const double val = flow(clampi(y + ky - 1, 0, h - 1) * w + clampi(x + kx - 1, 0, w - 1), 0);
                z += e;
                u += e * val;
                lo = std::min(lo, val);
                hi = std::max(hi, val);
              }
            const double got = up((y * f + sy) * (w * f) + x * f + sx, 0);
            CHECK(got == doctest::Approx(f * u / z).epsilon(1e-10));
            CHECK(got >= f * lo - 1e-9);
            CHECK(got <= f * hi + 1e-9);
          }
  }
  SUBCASE("gradients") {
    check_all(support::check_gradients(
        {{"flow", random_mat(4, 2, rng), 2, 2}, {"mask", random_mat(4, 9 * 4, rng), 2, 2}}, nullptr, {},
        [](Tape<double>&, const std::vector<Var<double>>& v) { return ops::convex_upsample(v[0], v[1], 2); }));
  }
}

TEST_CASE("splat gradient with respect to values") {
  std::mt19937_64 rng(6);
  Mat<double> flow = random_mat(16, 2, rng, -1.5, 1.5);
  check_all(support::check_gradients({{"values", random_mat(16, 3, rng), 4, 4}}, nullptr, {},
                                     [flow](Tape<double>&, const std::vector<Var<double>>& v) {
                                       return ops::splat(v[0], flow);
                                     }));
}

TEST_CASE("parameters shared across uses accumulate one gradient") {
  ParamSet<double> ps;
  Mat<double> w(1, 1);
  w << 2.0;
  ps.add("w", w);
  Tape<double> tape(&ps, true);
  Var<double> a = tape.param("w");
  Var<double> b = tape.param("w");
  CHECK(a.id == b.id);
  tape.backward(ops::mul(a, b));
  CHECK(tape.param_grads().at("w")(0, 0) == doctest::Approx(4.0));

  Tape<double> frozen(&ps, true);
  frozen.freeze("w");
  Var<double> c = frozen.param("w");
  CHECK_FALSE(c.requires_grad());
}
