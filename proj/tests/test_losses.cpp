#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>

#include "dgf/grad_check.hpp"
#include "dgf/losses.hpp"
#include "dgf/norms.hpp"
#include "dgf/conv.hpp"
#include "test_util.hpp"

using namespace dgf;
using testutil::random_tensor;

TEST_CASE("discriminator hinge values") {
  auto logit = [](std::initializer_list<float> v) {
    return Tensor<float>::from_values({static_cast<int64_t>(v.size())}, Vec<float>(v));
  };
  CHECK(adv_d_hinge(logit({2.0f}), logit({-2.0f})).scalar() == doctest::Approx(0.0));
  CHECK(adv_d_hinge(logit({0.0f}), logit({0.0f})).scalar() == doctest::Approx(2.0));
  CHECK(adv_d_hinge(logit({0.5f}), logit({-0.5f})).scalar() == doctest::Approx(1.0));
}

TEST_CASE("generator hinge values") {
  auto logit = [](std::initializer_list<float> v) {
    return Tensor<float>::from_values({static_cast<int64_t>(v.size())}, Vec<float>(v));
  };
  CHECK(adv_g_hinge(logit({0.0f})).scalar() == doctest::Approx(0.0));
  CHECK(adv_g_hinge(logit({3.0f})).scalar() == doctest::Approx(-3.0));
  CHECK(adv_g_hinge(logit({1.0f, -1.0f})).scalar() == doctest::Approx(0.0));
}

TEST_CASE("only the style-indexed logit participates in the hinge") {
  Rng rng(31);
  auto logits = random_tensor<float>({4, 5}, rng);
  auto idx = std::make_shared<const std::vector<int64_t>>(std::vector<int64_t>{1, 0, 3, 2});
  auto fake = random_tensor<float>({4, 5}, rng);
  auto base = adv_d_hinge(take_per_row(logits, idx), take_per_row(fake, idx));

  Vec<float> scrambled(logits.values());
  for (int64_t b = 0; b < 4; ++b)
    for (int64_t s = 0; s < 5; ++s)
      if (s != (*idx)[static_cast<size_t>(b)]) scrambled[b * 5 + s] += 42.0f;
  auto moved = adv_d_hinge(
      take_per_row(Tensor<float>::from_values({4, 5}, std::move(scrambled)), idx),
      take_per_row(fake, idx));
  CHECK(std::memcmp(&base.values()[0], &moved.values()[0], sizeof(float)) == 0);  // exact
}

TEST_CASE("r1 penalty on a constant and a linear discriminator") {
  const int64_t B = 2, P = 3 * 4 * 4;
  Rng rng(32);
  auto images = random_tensor<float>({B, 3, 4, 4}, rng, -1, 1, /*requires_grad=*/true);
  std::vector<int64_t> sidx{0, 1};

  // a discriminator that is constant in its input has zero penalty
  // (reach the input through a zero-weight linear probe so the graph connects)
  auto zero_d = [&](const Tensor<float>& x) {
    auto probe = mul_scalar(plane_sum(x), 0.0f);  // [B,3]
    auto logits = matmul(probe, Tensor<float>::zeros({2, 3}), false, true);
    return logits;
  };
  CHECK(r1_penalty<float>(images, sidx, zero_d, 10.0f).scalar() == doctest::Approx(0.0));

  // D(image) = sum of pixels: gradient is all ones, penalty = (gamma/2) * P
  auto sums_d = [](const Tensor<float>& x) {
    auto flat = reshape(x, {x.dim(0), 1, x.dim(1) * x.dim(2) * x.dim(3), 1});
    auto s = plane_sum(flat);  // [B,1]
    auto two = concat_channels(reshape(s, {x.dim(0), 1, 1, 1}), reshape(s, {x.dim(0), 1, 1, 1}));
    return reshape(two, {x.dim(0), 2});
  };
  auto pen = r1_penalty<float>(images, sidx, sums_d, 10.0f);
  CHECK(pen.scalar() == doctest::Approx(10.0 / 2.0 * P));
  CHECK(pen.scalar() >= 0.0f);
}

TEST_CASE("r1 parameter gradients match finite differences through a real stack") {
  // conv -> frn -> leaky_relu -> conv 1x1 -> global pool -> style logit;
  // checks the exact double-backward path the discriminator update uses
  Rng rng(33);
  auto x = random_tensor<double>({2, 2, 5, 5}, rng);
  auto w1 = random_tensor<double>({3, 2, 3, 3}, rng, -0.7, 0.7);
  auto g1 = random_tensor<double>({3}, rng, 0.5, 1.5);
  auto w2 = random_tensor<double>({2, 3, 1, 1}, rng, -0.7, 0.7);
  std::vector<int64_t> sidx{0, 1};
  auto f = [&](const std::vector<Tensor<double>>& in) {
    auto images = Tensor<double>::param(x.shape(), Vec<double>(x.values()));
    auto d_fn = [&](const Tensor<double>& img) {
      auto h = conv2d_raw(img, in[0], Conv2dAttrs::square(3, 1, 1));
      h = frn(h, in[1], Tensor<double>::zeros({3}));
      h = leaky_relu(h, 0.2);
      h = conv2d_raw(h, in[2], Conv2dAttrs::square(1, 1, 0));
      return global_avg_pool(h);  // [B, 2]
    };
    return r1_penalty<double>(images, sidx, d_fn, 10.0);
  };
  auto report = grad_check(f, {w1, g1, w2});
  CHECK(report.worst <= 1e-4);
}

TEST_CASE("content and image reconstruction losses") {
  Rng rng(34);
  auto a = random_tensor<float>({2, 4, 3, 3}, rng);
  CHECK(content_consistent_loss(a, a).scalar() == 0.0f);
  auto shifted = add_scalar(a, 1.0f);
  CHECK(content_consistent_loss(a, shifted).scalar() == doctest::Approx(1.0));
  CHECK(image_reconstruction_loss(a, a).scalar() == 0.0f);
  CHECK(image_reconstruction_loss(a, shifted).scalar() == doctest::Approx(1.0));

  auto ad = random_tensor<double>({2, 4, 3, 3}, rng);
  auto bd = random_tensor<double>({2, 4, 3, 3}, rng);
  double want = 0;
  for (size_t i = 0; i < ad.values().size(); ++i) want += std::abs(ad.values()[i] - bd.values()[i]);
  want /= static_cast<double>(ad.numel());
  CHECK(std::abs(content_consistent_loss(ad, bd).scalar() - want) <= 1e-7);
}

TEST_CASE("offset normalization hand case, homogeneity, empty list") {
  // one module, one position, one tap displaced by (0.9, 0), |R| = 9
  Vec<double> off(18, 0.0);
  off[0] = 0.9;
  auto offsets = Tensor<double>::from_values({1, 18, 1, 1}, std::move(off));
  auto loss = offset_norm_loss(std::vector<Tensor<double>>{offsets});
  CHECK(std::abs(loss.scalar() - 0.1) <= 1e-12);

  auto doubled = offset_norm_loss(std::vector<Tensor<double>>{mul_scalar(offsets, 2.0)});
  CHECK(doubled.scalar() == 2.0 * loss.scalar());  // exact for a power of two

  CHECK(offset_norm_loss(std::vector<Tensor<double>>{}).scalar() == 0.0);

  // two modules add up
  auto two = offset_norm_loss(std::vector<Tensor<double>>{offsets, offsets});
  CHECK(std::abs(two.scalar() - 0.2) <= 1e-12);
}

TEST_CASE("total generator loss weighting") {
  auto scalar = [](double v) { return Tensor<float>::from_values({1}, {static_cast<float>(v)}); };
  LossWeights w;
  CHECK(total_generator_loss(scalar(0), scalar(0), scalar(0), scalar(0), w).scalar() == 0.0f);
  CHECK(total_generator_loss(scalar(1), scalar(1), scalar(1), scalar(1), w).scalar() ==
        doctest::Approx(1.7));
  LossWeights zero{0.0, 0.0, 0.0};
  CHECK(total_generator_loss(scalar(0.3), scalar(9), scalar(9), scalar(9), zero).scalar() ==
        doctest::Approx(0.3));
}

TEST_CASE("loss gradients match finite differences") {
  Rng rng(35);
  auto real = random_tensor<double>({3}, rng);
  auto fake = random_tensor<double>({3}, rng);
  auto f_d = [](const std::vector<Tensor<double>>& in) { return adv_d_hinge(in[0], in[1]); };
  CHECK(grad_check(f_d, {real, fake}).worst <= 1e-4);

  auto f_g = [](const std::vector<Tensor<double>>& in) { return adv_g_hinge(in[0]); };
  CHECK(grad_check(f_g, {fake}).worst <= 1e-4);

  auto a = random_tensor<double>({1, 2, 3, 3}, rng);
  auto b = random_tensor<double>({1, 2, 3, 3}, rng);
  auto f_l1 = [](const std::vector<Tensor<double>>& in) {
    return content_consistent_loss(in[0], in[1]);
  };
  CHECK(grad_check(f_l1, {a, b}).worst <= 1e-4);

  auto off = random_tensor<double>({1, 18, 2, 2}, rng, 0.1, 0.9);
  auto f_off = [](const std::vector<Tensor<double>>& in) {
    return offset_norm_loss(std::vector<Tensor<double>>{in[0]});
  };
  CHECK(grad_check(f_off, {off}).worst <= 1e-4);
}

TEST_CASE("losses stay finite and correctly signed") {
  Rng rng(36);
  auto r = random_tensor<float>({8}, rng, -3, 3);
  auto fk = random_tensor<float>({8}, rng, -3, 3);
  CHECK(adv_d_hinge(r, fk).scalar() >= 0.0f);
  auto a = random_tensor<float>({1, 3, 4, 4}, rng);
  auto b = random_tensor<float>({1, 3, 4, 4}, rng);
  CHECK(content_consistent_loss(a, b).scalar() >= 0.0f);
  CHECK(image_reconstruction_loss(a, b).scalar() >= 0.0f);
  auto off = random_tensor<float>({1, 18, 2, 2}, rng, -2, 2);
  CHECK(offset_norm_loss(std::vector<Tensor<float>>{off}).scalar() >= 0.0f);
}
