#include "memflow/correlation.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>

using namespace memflow;
using support::random_mat;

namespace {

FeatureMap<double> fmap(int h, int w, Mat<double> data) { return FeatureMap<double>{h, w, 8, std::move(data)}; }

FlowField uniform_flow(int h, int w, float u, float v) { return FlowField::constant(h, w, u, v); }

}  // namespace

TEST_CASE("one-hot features give a scaled identity") {
  const int h = 2, w = 2, d = h * w;
  auto f = fmap(h, w, Mat<double>::Identity(d, d));
  auto pyr = build_pyramid(f, f, 1);
  CHECK(pyr.levels[0].isApprox(Mat<double>::Identity(d, d) / std::sqrt(double(d))));
}

TEST_CASE("zero target features give zero levels") {
  std::mt19937_64 rng(1);
  auto pyr = build_pyramid(fmap(4, 4, random_mat(16, 5, rng)), fmap(4, 4, Mat<double>::Zero(16, 5)), 3);
  for (const auto& l : pyr.levels) CHECK(l.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("pyramid levels are dot products and 2x2 mean pools") {
  std::mt19937_64 rng(2);
  const int h = 4, w = 4, d = 8;
  Mat<double> a = random_mat(h * w, d, rng), b = random_mat(h * w, d, rng);
  auto pyr = build_pyramid(fmap(h, w, a), fmap(h, w, b), 2);
  REQUIRE(pyr.levels.size() == 2);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      for (int p = 0; p < h; ++p)
        for (int q = 0; q < w; ++q) {
          double dot = 0;
          for (int c = 0; c < d; ++c) dot += a(i * w + j, c) * b(p * w + q, c);
          CHECK(pyr.at(0, i, j, p, q) == doctest::Approx(dot / std::sqrt(double(d))).epsilon(1e-12));
        }
      for (int p = 0; p < h / 2; ++p)
        for (int q = 0; q < w / 2; ++q) {
          const double mean = 0.25 * (pyr.at(0, i, j, 2 * p, 2 * q) + pyr.at(0, i, j, 2 * p + 1, 2 * q) +
                                      pyr.at(0, i, j, 2 * p, 2 * q + 1) + pyr.at(0, i, j, 2 * p + 1, 2 * q + 1));
          CHECK(pyr.at(1, i, j, p, q) == doctest::Approx(mean).epsilon(1e-12));
        }
    }
}

TEST_CASE("pyramid is bilinear in its inputs") {
  std::mt19937_64 rng(3);
  Mat<double> a = random_mat(16, 4, rng), b = random_mat(16, 4, rng);
  auto base = build_pyramid(fmap(4, 4, a), fmap(4, 4, b), 2);
  auto scaled = build_pyramid(fmap(4, 4, 2.5 * a), fmap(4, 4, -0.5 * b), 2);
  for (int k = 0; k < 2; ++k) CHECK(scaled.levels[k].isApprox(-1.25 * base.levels[k], 1e-12));
}

TEST_CASE("build_pyramid errors") {
  std::mt19937_64 rng(4);
  CHECK_THROWS_AS(build_pyramid(fmap(4, 4, random_mat(16, 3, rng)), fmap(4, 2, random_mat(8, 3, rng)), 1), Error);
  try {
    build_pyramid(fmap(6, 6, random_mat(36, 3, rng)), fmap(6, 6, random_mat(36, 3, rng)), 3);
    FAIL("expected IndivisibleResolution");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::IndivisibleResolution);
  }
}

TEST_CASE("lookup samples") {
  std::mt19937_64 rng(5);
  const int h = 4, w = 4;
  Mat<double> a = random_mat(h * w, 6, rng), b = random_mat(h * w, 6, rng);
  auto pyr = build_pyramid(fmap(h, w, a), fmap(h, w, b), 1);

  SUBCASE("zero flow, radius 0: the diagonal") {
    auto out = lookup(pyr, FlowField::zeros(h, w), 0);
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) CHECK(out.data(i * w + j, 0) == pyr.at(0, i, j, i, j));
  }
  SUBCASE("zero flow, radius 2: centre channel is the diagonal") {
    auto out = lookup(pyr, FlowField::zeros(h, w), 2);
    CHECK(out.channels() == 25);
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) CHECK(out.data(i * w + j, 12) == pyr.at(0, i, j, i, j));
  }
  SUBCASE("integer flow (1, 0) shifts the target column") {
    auto out = lookup(pyr, uniform_flow(h, w, 1.0f, 0.0f), 0);
    for (int i = 0; i < h; ++i)
      for (int j = 0; j + 1 < w; ++j) CHECK(out.data(i * w + j, 0) == doctest::Approx(pyr.at(0, i, j, i, j + 1)));
  }
  SUBCASE("half-pixel flow lands midway on a field linear in the target") {
    // Target features carry their own x coordinate so C is linear along q.
    Mat<double> f1 = Mat<double>::Ones(h * w, 1), f2(h * w, 1);
    for (int p = 0; p < h; ++p)
      for (int q = 0; q < w; ++q) f2(p * w + q, 0) = 3.0 * q + 1.0;
    auto lin = build_pyramid(fmap(h, w, f1), fmap(h, w, f2), 1);
    auto out = lookup(lin, uniform_flow(h, w, 0.5f, 0.0f), 0);
    for (int i = 0; i < h; ++i)
      for (int j = 0; j + 1 < w; ++j)
        CHECK(out.data(i * w + j, 0) ==
              doctest::Approx(0.5 * (lin.at(0, i, j, i, j) + lin.at(0, i, j, i, j + 1))).epsilon(1e-12));
  }
  SUBCASE("flow grid mismatch") { CHECK_THROWS_AS(lookup(pyr, FlowField::zeros(2, 2), 1), Error); }
}

TEST_CASE("lookup gradient with respect to flow") {
  std::mt19937_64 rng(6);
  const int h = 4, w = 4;
  Mat<double> a = random_mat(h * w, 5, rng), b = random_mat(h * w, 5, rng);
  Mat<double> flow = random_mat(h * w, 2, rng, -1.3, 1.3);
  auto errs = support::check_gradients(
      {{"flow", flow, h, w}}, nullptr, {}, [&](Tape<double>& tape, const std::vector<Var<double>>& v) {
        auto pyr = build_pyramid(tape.constant(a, h, w), tape.constant(b, h, w), 2);
        return lookup(pyr, v[0], 1);
      });
  CHECK(errs.at("flow") < 1e-4);
}
