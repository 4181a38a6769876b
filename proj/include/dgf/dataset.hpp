#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dgf/rng.hpp"
#include "dgf/tensor.hpp"

namespace dgf {

/// Style-indexed glyph collection backed by a corpus directory. Every style
/// holds the same content-id set; train and test content ids are disjoint.
/// Images are loaded eagerly ([-1,1] scale, 3 channels) and shared tensors
/// are immutable, so concurrent readers are safe.
class GlyphDataset {
 public:
  static GlyphDataset load(const std::string& root);

  int64_t num_styles() const { return static_cast<int64_t>(style_dirs_.size()); }
  int64_t num_contents() const { return num_contents_; }
  int64_t image_size() const { return image_size_; }
  uint64_t corpus_seed() const { return seed_; }

  const std::vector<int64_t>& train_contents() const { return train_ids_; }
  const std::vector<int64_t>& test_contents() const { return test_ids_; }

  /// Ground-truth rendering of a content in a style.
  const Tensor<float>& image(int64_t style, int64_t content) const;
  const std::string& style_dir(int64_t style) const { return style_dirs_[static_cast<size_t>(style)]; }

  struct Batch {
    Tensor<float> content_images;  // [B,3,S,S]
    Tensor<float> style_images;    // [B,3,S,S]
    std::vector<int64_t> style_indices;
    std::vector<int64_t> content_ids;  // ids of the content images
  };

  /// Deterministic under a seeded rng: each slot draws a content image
  /// uniformly from all (style, train-content) renderings and an independent
  /// style image from a uniformly chosen style.
  Batch next_batch(int64_t batch_size, Rng& rng) const;

  /// Stacks images of one style (given content ids) into a [N,3,S,S] batch.
  Tensor<float> stack(int64_t style, const std::vector<int64_t>& contents) const;

 private:
  int64_t num_contents_ = 0;
  int64_t image_size_ = 0;
  uint64_t seed_ = 0;
  std::vector<std::string> style_dirs_;
  std::vector<int64_t> train_ids_, test_ids_;
  std::vector<std::vector<Tensor<float>>> images_;  // [style][content]
};

}  // namespace dgf
