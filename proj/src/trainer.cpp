#include "dgf/trainer.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

namespace dgf {

std::string format_log_line(int64_t iter, const LossReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%lld, %.9g, %.9g, %.9g, %.9g, %.9g, %.9g, %.9g",
                static_cast<long long>(iter), r.adv_d, r.adv_g, r.r1, r.cnt, r.img, r.offset,
                r.total);
  return buf;
}

Trainer::Trainer(const TrainConfig& config) : cfg_(config), data_rng_(config.seed) {
  cfg_.validate();
  ThreadPool::set_default_workers(cfg_.workers);
  model_ = std::make_unique<ModelBundle<float>>(cfg_.net);
  init_parameters(*model_, cfg_.seed);
  optim_ = make_trainer_optimizers(*model_);
}

namespace {

void set_group_requires_grad(ModelBundle<float>& model, const std::string& prefix, bool value) {
  for (auto& e : model.params.entries)
    if (e.name.rfind(prefix, 0) == 0) e.tensor.set_requires_grad(value);
}

}  // namespace

LossReport Trainer::train_step(const GlyphDataset::Batch& batch) {
  const int64_t B = batch.content_images.dim(0);
  auto idx = std::make_shared<const std::vector<int64_t>>(batch.style_indices);

  // One taped generator pass serves both phases: the discriminator update
  // sees its output as a constant, the generator update backpropagates
  // through it after the discriminator has stepped.
  auto gen = model_->generate_detailed(batch.content_images, batch.style_images, /*training=*/true);

  LossReport report;

  // --- discriminator update ---
  {
    Tensor<float> real = Tensor<float>::param(batch.style_images.shape(), batch.style_images.values());
    Tensor<float> real_logits = model_->discriminator.forward(real);
    Tensor<float> fake_logits = model_->discriminator.forward(gen.image.detach());
    Tensor<float> d_adv =
        adv_d_hinge(take_per_row(real_logits, idx), take_per_row(fake_logits, idx));
    Tensor<float> penalty = r1_penalty_from_logits(real_logits, real, batch.style_indices,
                                                   static_cast<float>(cfg_.r1_gamma));
    Tensor<float> d_total = add(d_adv, penalty);
    report.adv_d = d_adv.scalar();
    report.r1 = penalty.scalar();
    optim_.disc.zero_grad();
    backward(d_total);
    optim_.disc.step();
  }

  // --- generator update (discriminator frozen, evaluated post-step) ---
  set_group_requires_grad(*model_, "discriminator.", false);
  {
    Tensor<float> fake_logits = model_->discriminator.forward(gen.image);
    Tensor<float> g_adv = adv_g_hinge(take_per_row(fake_logits, idx));
    auto enc_fake = model_->content_encoder.forward(gen.image);
    Tensor<float> cnt_target = cfg_.cnt_stop_grad ? gen.z_c.detach() : gen.z_c;
    Tensor<float> cnt = content_consistent_loss(cnt_target, enc_fake.z_c);
    // Reconstruction branch reuses the taped content encoding of the batch.
    Tensor<float> z_self = model_->style_encoder.forward(batch.content_images, /*training=*/true);
    auto rec = model_->mixer.forward(gen.z_c, z_self, gen.content.tap1, gen.content.tap2,
                                     gen.content.tap3);
    Tensor<float> img = image_reconstruction_loss(batch.content_images, rec.image);
    Tensor<float> off = offset_norm_loss(gen.mix.offsets);
    Tensor<float> g_total = total_generator_loss(g_adv, img, cnt, off, cfg_.weights);
    report.adv_g = g_adv.scalar();
    report.cnt = cnt.scalar();
    report.img = img.scalar();
    report.offset = off.scalar();
    report.total = g_total.scalar();
    optim_.style.zero_grad();
    optim_.gen.zero_grad();
    backward(g_total);
    optim_.style.step();
    optim_.gen.step();
  }
  set_group_requires_grad(*model_, "discriminator.", true);

  ++iter_;
  if (!report.all_finite()) {
    if (!snapshot_path_.empty()) save_checkpoint(*model_, &optim_, snapshot_path_);
    throw UsageError("non-finite loss at iteration " + std::to_string(iter_) +
                     (snapshot_path_.empty() ? "" : "; snapshot written to " + snapshot_path_));
  }

  // Parameters and optimizer state stay finite after every accepted step.
#ifndef NDEBUG
  for (const auto& e : model_->params.entries)
    if (!e.tensor.all_finite()) throw UsageError("non-finite parameter " + e.name);
#endif
  return report;
}

void Trainer::train(const GlyphDataset& dataset, std::ostream* log, const std::string& out_dir) {
  namespace fs = std::filesystem;
  if (!out_dir.empty()) fs::create_directories(out_dir);
  if (snapshot_path_.empty() && !out_dir.empty())
    snapshot_path_ = (fs::path(out_dir) / "abort_snapshot.dgf").string();
  for (int64_t i = 0; i < cfg_.iterations; ++i) {
    auto batch = dataset.next_batch(cfg_.batch_size, data_rng_);
    LossReport report = train_step(batch);
    if (log && cfg_.log_every > 0 && (iter_ % cfg_.log_every == 0 || i + 1 == cfg_.iterations))
      (*log) << format_log_line(iter_, report) << "\n" << std::flush;
    if (!out_dir.empty() && cfg_.checkpoint_every > 0 &&
        (iter_ % cfg_.checkpoint_every == 0 || i + 1 == cfg_.iterations)) {
      char name[64];
      std::snprintf(name, sizeof name, "checkpoint_%06lld.dgf", static_cast<long long>(iter_));
      save_checkpoint(*model_, &optim_, (fs::path(out_dir) / name).string());
      save_checkpoint(*model_, &optim_, (fs::path(out_dir) / "checkpoint_last.dgf").string());
    }
  }
}

}  // namespace dgf
