#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>

#include "dgf/deform.hpp"
#include "dgf/grad_check.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace dgf;
using testutil::random_tensor;

namespace {

template <typename S>
DeformParams<S> zero_offset_unit_mask(int64_t b, int64_t k, int64_t ho, int64_t wo) {
  return {Tensor<S>::zeros({b, 2 * k * k, ho, wo}), Tensor<S>::full({b, k * k, ho, wo}, S(1))};
}

}  // namespace

TEST_CASE("bilinear sampling hand cases") {
  auto plane = Tensor<float>::from_values({2, 2}, {1, 2, 3, 4});
  CHECK(bilinear_sample(plane, 0.0f, 1.0f) == 2.0f);   // grid point, exact
  CHECK(bilinear_sample(plane, 1.0f, 0.0f) == 3.0f);
  CHECK(bilinear_sample(plane, 0.5f, 0.5f) == doctest::Approx(2.5));
  CHECK(bilinear_sample(plane, -5.0f, -5.0f) == 0.0f);  // fully outside
  CHECK(bilinear_sample(plane, -1.0f, 0.0f) == 0.0f);   // boundary of the support
  // partial support: neighbors outside the image contribute zero
  CHECK(bilinear_sample(plane, -0.5f, 0.0f) == doctest::Approx(0.5));
}

TEST_CASE("zero offsets and unit masks reduce to standard convolution") {
  Rng rng(21);
  struct Combo {
    int64_t k, stride, pad;
  };
  // every (kernel, stride, padding) the networks use
  const Combo combos[] = {{3, 1, 1}, {4, 2, 1}, {7, 1, 3}, {5, 1, 2}, {4, 1, 1}, {1, 1, 0}};
  for (const auto& c : combos) {
    auto x = random_tensor<float>({2, 3, 11, 11}, rng);
    auto w = random_tensor<float>({4, 3, c.k, c.k}, rng);
    auto attrs = Conv2dAttrs::square(c.k, c.stride, c.pad);
    auto ref = conv2d_raw(x, w, attrs);
    auto params = zero_offset_unit_mask<float>(2, c.k, ref.dim(2), ref.dim(3));
    auto y = deform_conv2d(x, w, params, attrs);
    CHECK(y.shape() == ref.shape());
    double worst = 0;
    for (size_t i = 0; i < y.values().size(); ++i)
      worst = std::max(worst, std::abs(static_cast<double>(y.values()[i] - ref.values()[i])));
    INFO("kernel ", c.k, " stride ", c.stride, " pad ", c.pad);
    CHECK(worst <= 1e-6);
  }
}

TEST_CASE("1x1 kernel with a fractional offset reduces to bilinear sampling") {
  auto x = Tensor<float>::from_values({1, 1, 2, 2}, {1, 2, 3, 4});
  auto w = Tensor<float>::full({1, 1, 1, 1}, 1.0f);
  auto off = Tensor<float>::zeros({1, 2, 2, 2});
  off.mutable_values()[0] = 0.5f;  // dy at output (0,0)
  off.mutable_values()[4] = 0.5f;  // dx at output (0,0)
  auto msk = Tensor<float>::full({1, 1, 2, 2}, 1.0f);
  auto y = deform_conv2d(x, w, DeformParams<float>{off, msk}, Conv2dAttrs::square(1, 1, 0));
  CHECK(y.values()[0] == doctest::Approx(2.5));
  CHECK(y.values()[3] == doctest::Approx(4.0));  // untouched tap stays on grid
}

TEST_CASE("deform_conv2d matches the tap-loop oracle on random fractional offsets") {
  Rng rng(22);
  auto x = random_tensor<float>({1, 2, 5, 5}, rng);
  auto w = random_tensor<float>({3, 2, 3, 3}, rng);
  auto off = random_tensor<float>({1, 18, 5, 5}, rng, -1.3, 1.3);
  auto msk = random_tensor<float>({1, 9, 5, 5}, rng, 0.0, 1.0);
  auto attrs = Conv2dAttrs::square(3, 1, 1);
  auto y = deform_conv2d(x, w, DeformParams<float>{off, msk}, attrs);
  std::vector<float> xv(x.values().begin(), x.values().end());
  std::vector<float> wv(w.values().begin(), w.values().end());
  std::vector<float> ov(off.values().begin(), off.values().end());
  std::vector<float> mv(msk.values().begin(), msk.values().end());
  auto ref = oracle::deform_conv2d(xv, {1, 2, 5, 5}, wv, 3, 3, 3, 1, 1, ov, mv);
  CHECK(testutil::max_abs_diff(y, ref) <= 1e-5);
}

TEST_CASE("mask scaling by a power of two scales the output exactly") {
  Rng rng(23);
  auto x = random_tensor<float>({1, 2, 6, 6}, rng);
  auto w = random_tensor<float>({2, 2, 3, 3}, rng);
  auto off = random_tensor<float>({1, 18, 6, 6}, rng, -0.8, 0.8);
  auto msk = random_tensor<float>({1, 9, 6, 6}, rng, 0.1, 1.0);
  auto attrs = Conv2dAttrs::square(3, 1, 1);
  auto y1 = deform_conv2d(x, w, DeformParams<float>{off, msk}, attrs);
  auto y2 = deform_conv2d(x, w, DeformParams<float>{off, mul_scalar(msk, 0.5f)}, attrs);
  for (size_t i = 0; i < y1.values().size(); ++i)
    CHECK(y2.values()[i] == 0.5f * y1.values()[i]);  // exact
}

TEST_CASE("analytic gradients match finite differences for all four inputs") {
  Rng rng(24);
  // fractional offsets away from integers keep the sampling piecewise smooth
  auto x = random_tensor<double>({1, 2, 5, 5}, rng);
  auto w = random_tensor<double>({2, 2, 3, 3}, rng);
  auto off = random_tensor<double>({1, 18, 3, 3}, rng, 0.2, 0.45);
  auto msk = random_tensor<double>({1, 9, 3, 3}, rng, 0.2, 0.9);
  auto f = [](const std::vector<Tensor<double>>& in) {
    auto y = deform_conv2d(in[0], in[1], Tensor<double>(),
                           DeformParams<double>{in[2], in[3]}, Conv2dAttrs::square(3, 1, 0));
    return sum_all(mul(y, y));
  };
  auto report = grad_check(f, {x, w, off, msk});
  CHECK(report.max_discrepancy[0] <= 1e-4);  // input
  CHECK(report.max_discrepancy[1] <= 1e-4);  // weight
  CHECK(report.max_discrepancy[2] <= 1e-4);  // offsets
  CHECK(report.max_discrepancy[3] <= 1e-4);  // masks
}

TEST_CASE("gradients stay correct when taps straddle the border") {
  Rng rng(25);
  auto x = random_tensor<double>({1, 1, 4, 4}, rng);
  auto w = random_tensor<double>({1, 1, 3, 3}, rng);
  // padding 1 puts edge taps outside; offsets push them across the border
  auto off = random_tensor<double>({1, 18, 4, 4}, rng, -0.7, -0.3);
  auto msk = random_tensor<double>({1, 9, 4, 4}, rng, 0.3, 0.8);
  auto f = [](const std::vector<Tensor<double>>& in) {
    auto y = deform_conv2d(in[0], in[1], Tensor<double>(),
                           DeformParams<double>{in[2], in[3]}, Conv2dAttrs::square(3, 1, 1));
    return sum_all(mul(y, y));
  };
  CHECK(grad_check(f, {x, w, off, msk}).worst <= 1e-4);
}

TEST_CASE("perturbing a pixel only moves outputs whose taps touch it") {
  Rng rng(26);
  auto x = random_tensor<float>({1, 1, 5, 5}, rng);
  auto w = random_tensor<float>({1, 1, 3, 3}, rng);
  auto off = random_tensor<float>({1, 18, 5, 5}, rng, -0.4, 0.4);
  auto msk = Tensor<float>::full({1, 9, 5, 5}, 1.0f);
  auto attrs = Conv2dAttrs::square(3, 1, 1);
  auto base = deform_conv2d(x, w, DeformParams<float>{off, msk}, attrs);

  std::vector<float> xv(x.values().begin(), x.values().end());
  std::vector<float> wv(w.values().begin(), w.values().end());
  std::vector<float> ov(off.values().begin(), off.values().end());
  std::vector<float> mv(msk.values().begin(), msk.values().end());

  Vec<float> bumped(x.values());
  bumped[12] += 0.5f;  // center pixel
  auto moved = deform_conv2d(Tensor<float>::from_values(x.shape(), std::move(bumped)), w,
                             DeformParams<float>{off, msk}, attrs);
  std::vector<float> xb(xv);
  xb[12] += 0.5f;
  auto ref_base = oracle::deform_conv2d(xv, {1, 1, 5, 5}, wv, 1, 3, 3, 1, 1, ov, mv);
  auto ref_moved = oracle::deform_conv2d(xb, {1, 1, 5, 5}, wv, 1, 3, 3, 1, 1, ov, mv);
  for (size_t i = 0; i < ref_base.size(); ++i) {
    const bool oracle_changed = std::abs(ref_moved[i] - ref_base[i]) > 1e-7;
    const bool impl_changed = std::abs(moved.values()[i] - base.values()[i]) > 1e-7;
    CHECK(oracle_changed == impl_changed);
    CHECK(std::abs((moved.values()[i] - base.values()[i]) - (ref_moved[i] - ref_base[i])) <= 1e-5);
  }
}

TEST_CASE("deform_conv2d validates parameter extents") {
  auto x = Tensor<float>::zeros({1, 2, 6, 6});
  auto w = Tensor<float>::zeros({2, 2, 3, 3});
  auto bad_off = Tensor<float>::zeros({1, 18, 5, 5});  // wrong spatial extents
  auto msk = Tensor<float>::full({1, 9, 6, 6}, 1.0f);
  CHECK_THROWS_AS(
      deform_conv2d(x, w, DeformParams<float>{bad_off, msk}, Conv2dAttrs::square(3, 1, 1)),
      DimensionError);
  auto off = Tensor<float>::zeros({1, 18, 6, 6});
  auto bad_msk = Tensor<float>::full({1, 8, 6, 6}, 1.0f);  // wrong tap count
  CHECK_THROWS_AS(
      deform_conv2d(x, w, DeformParams<float>{off, bad_msk}, Conv2dAttrs::square(3, 1, 1)),
      DimensionError);
}

TEST_CASE("no second-order graph through the fused deform kernel") {
  Rng rng(27);
  auto x = random_tensor<float>({1, 1, 4, 4}, rng, -1, 1, /*requires_grad=*/true);
  auto w = random_tensor<float>({1, 1, 3, 3}, rng, -1, 1, /*requires_grad=*/true);
  auto params = zero_offset_unit_mask<float>(1, 3, 4, 4);
  auto y = deform_conv2d(x, w, params, Conv2dAttrs::square(3, 1, 1));
  auto loss = sum_all(y);
  CHECK_THROWS_AS(grad_of(loss, {x}, /*create_graph=*/true), UsageError);
}
