#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "dgf/ops.hpp"

namespace dgf {

/// Coefficients of the weighted training objective; the adversarial term has
/// a fixed weight of 1.
struct LossWeights {
  double lambda_img = 0.1;
  double lambda_cnt = 0.1;
  double lambda_offset = 0.5;
};

/// Per-iteration scalar terms for logging and tests.
struct LossReport {
  double adv_d = 0, adv_g = 0, r1 = 0, cnt = 0, img = 0, offset = 0, total = 0;

  bool all_finite() const {
    for (double v : {adv_d, adv_g, r1, cnt, img, offset, total})
      if (!std::isfinite(v)) return false;
    return true;
  }
};

/// Hinge discriminator loss on the style-indexed logits:
/// mean(max(0, 1 - real)) + mean(max(0, 1 + fake)).
template <typename S>
Tensor<S> adv_d_hinge(const Tensor<S>& real_logit, const Tensor<S>& fake_logit) {
  if (real_logit.rank() != 1 || fake_logit.rank() != 1)
    throw DimensionError("adv_d_hinge expects [B] logit vectors");
  Tensor<S> one_r = Tensor<S>::full(real_logit.shape(), S(1));
  Tensor<S> one_f = Tensor<S>::full(fake_logit.shape(), S(1));
  return add(mean_all(relu(sub(one_r, real_logit))), mean_all(relu(add(one_f, fake_logit))));
}

/// Hinge generator loss: mean(-fake).
template <typename S>
Tensor<S> adv_g_hinge(const Tensor<S>& fake_logit) {
  if (fake_logit.rank() != 1) throw DimensionError("adv_g_hinge expects a [B] logit vector");
  return neg(mean_all(fake_logit));
}

/// R1 gradient penalty from already-computed logits:
/// (gamma/2) * mean_b ||d D_s(x_b) / d x_b||^2.
/// real_images must be a grad-requiring leaf; the penalty tensor is built
/// with a differentiable gradient graph, so a single ordinary backward pass
/// over the combined discriminator loss yields exact parameter gradients.
template <typename S>
Tensor<S> r1_penalty_from_logits(const Tensor<S>& logits, const Tensor<S>& real_images,
                                 const std::vector<int64_t>& style_indices, S gamma = S(10)) {
  if (!real_images.requires_grad())
    throw UsageError("r1 penalty requires real images marked as gradient inputs");
  auto idx = std::make_shared<const std::vector<int64_t>>(style_indices);
  Tensor<S> selected = take_per_row(logits, idx);
  Tensor<S> g = grad_of(sum_all(selected), {real_images}, /*create_graph=*/true)[0];
  const S scale = gamma / (S(2) * static_cast<S>(real_images.dim(0)));
  return mul_scalar(sum_all(mul(g, g)), scale);
}

/// Convenience form that runs the discriminator itself.
template <typename S>
Tensor<S> r1_penalty(const Tensor<S>& real_images, const std::vector<int64_t>& style_indices,
                     const std::function<Tensor<S>(const Tensor<S>&)>& discriminate_fn,
                     S gamma = S(10)) {
  return r1_penalty_from_logits(discriminate_fn(real_images), real_images, style_indices, gamma);
}

/// Mean absolute difference over all elements.
template <typename S>
Tensor<S> mean_abs_diff(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_same_shape(a, b, "mean_abs_diff");
  return mean_all(abs_val(sub(a, b)));
}

/// Content-consistency term between the content feature of the source image
/// and the content feature of the generated image.
template <typename S>
Tensor<S> content_consistent_loss(const Tensor<S>& z_c, const Tensor<S>& z_c_of_generated) {
  return mean_abs_diff(z_c, z_c_of_generated);
}

/// Self-reconstruction term between the content image and its own-style
/// regeneration.
template <typename S>
Tensor<S> image_reconstruction_loss(const Tensor<S>& content_image, const Tensor<S>& reconstructed) {
  return mean_abs_diff(content_image, reconstructed);
}

/// Displacement regularizer: for each module, the L1 norm of its offsets
/// averaged over batch and positions and divided by the tap count; summed
/// over modules. An empty list (no skip modules) contributes zero.
template <typename S>
Tensor<S> offset_norm_loss(const std::vector<Tensor<S>>& offsets) {
  Tensor<S> total;
  for (const auto& off : offsets) {
    detail::require_4d(off, "offset_norm_loss");
    if (off.dim(1) % 2 != 0) throw DimensionError("offset tensor must have 2K channels");
    // (1/K) * mean over (batch, positions) of the per-position L1 of all
    // 2K displacement components == 2 * mean over all elements.
    Tensor<S> term = mul_scalar(mean_all(abs_val(off)), S(2));
    total = total.defined() ? add(total, term) : term;
  }
  if (!total.defined()) return Tensor<S>::zeros({1});
  return total;
}

/// Weighted generator objective: adv + l_img*img + l_cnt*cnt + l_off*offset.
template <typename S>
Tensor<S> total_generator_loss(const Tensor<S>& adv_g, const Tensor<S>& img, const Tensor<S>& cnt,
                               const Tensor<S>& offset, const LossWeights& w) {
  Tensor<S> t = adv_g;
  t = add(t, mul_scalar(img, static_cast<S>(w.lambda_img)));
  t = add(t, mul_scalar(cnt, static_cast<S>(w.lambda_cnt)));
  t = add(t, mul_scalar(offset, static_cast<S>(w.lambda_offset)));
  return t;
}

}  // namespace dgf
