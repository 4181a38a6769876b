#include "dgf/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dgf/image_io.hpp"

namespace dgf {

namespace fs = std::filesystem;

GlyphDataset GlyphDataset::load(const std::string& root) {
  GlyphDataset ds;
  const fs::path mpath = fs::path(root) / "manifest.txt";
  std::ifstream mf(mpath);
  if (!mf) throw IoError("missing manifest: " + mpath.string());
  std::string line;
  std::vector<std::pair<int64_t, std::string>> styles;
  std::vector<std::pair<int64_t, bool>> contents;
  while (std::getline(mf, line)) {
    if (line.empty()) continue;
    std::istringstream is(line);
    std::string key;
    is >> key;
    if (key == "seed") {
      std::string eq;
      is >> eq >> ds.seed_;
    } else if (key == "num_styles" || key == "num_contents" || key == "image_size") {
      std::string eq;
      int64_t v;
      is >> eq >> v;
      if (key == "num_contents") ds.num_contents_ = v;
      if (key == "image_size") ds.image_size_ = v;
    } else if (key == "style") {
      int64_t idx;
      std::string dir;
      is >> idx >> dir;
      styles.emplace_back(idx, dir);
    } else if (key == "content") {
      int64_t idx;
      std::string split;
      is >> idx >> split;
      if (split != "train" && split != "test")
        throw IoError("manifest: bad split token '" + split + "'");
      contents.emplace_back(idx, split == "test");
    } else {
      throw IoError("manifest: unknown record '" + key + "'");
    }
  }
  std::sort(styles.begin(), styles.end());
  for (size_t i = 0; i < styles.size(); ++i) {
    if (styles[i].first != static_cast<int64_t>(i))
      throw IoError("manifest: style indices must be dense from 0");
    ds.style_dirs_.push_back(styles[i].second);
  }
  std::sort(contents.begin(), contents.end());
  for (size_t i = 0; i < contents.size(); ++i) {
    if (contents[i].first != static_cast<int64_t>(i))
      throw IoError("manifest: content indices must be dense from 0");
    (contents[i].second ? ds.test_ids_ : ds.train_ids_).push_back(contents[i].first);
  }
  if (ds.num_contents_ != static_cast<int64_t>(contents.size()))
    throw IoError("manifest: content count mismatch");
  if (ds.style_dirs_.empty() || contents.empty()) throw IoError("manifest: empty corpus");

  ds.images_.resize(ds.style_dirs_.size());
  for (size_t s = 0; s < ds.style_dirs_.size(); ++s) {
    ds.images_[s].resize(static_cast<size_t>(ds.num_contents_));
    for (int64_t c = 0; c < ds.num_contents_; ++c) {
      char name[32];
      std::snprintf(name, sizeof name, "content_%03lld.pgm", static_cast<long long>(c));
      const fs::path p = fs::path(root) / ds.style_dirs_[s] / name;
      ds.images_[s][static_cast<size_t>(c)] = read_image(p.string());
      if (ds.image_size_ == 0) ds.image_size_ = ds.images_[s][static_cast<size_t>(c)].dim(1);
      if (ds.images_[s][static_cast<size_t>(c)].dim(1) != ds.image_size_ ||
          ds.images_[s][static_cast<size_t>(c)].dim(2) != ds.image_size_)
        throw IoError("image size mismatch in " + p.string());
    }
  }
  return ds;
}

const Tensor<float>& GlyphDataset::image(int64_t style, int64_t content) const {
  if (style < 0 || style >= num_styles() || content < 0 || content >= num_contents_)
    throw UsageError("image(style, content) out of range");
  return images_[static_cast<size_t>(style)][static_cast<size_t>(content)];
}

static void copy_image_into(const Tensor<float>& img, float* dst) {
  std::copy_n(img.data(), img.numel(), dst);
}

GlyphDataset::Batch GlyphDataset::next_batch(int64_t batch_size, Rng& rng) const {
  if (train_ids_.empty()) throw UsageError("next_batch on a dataset without train contents");
  const int64_t S = image_size_;
  const int64_t per_image = 3 * S * S;
  Vec<float> content(static_cast<size_t>(batch_size * per_image));
  Vec<float> style(static_cast<size_t>(batch_size * per_image));
  Batch out;
  for (int64_t b = 0; b < batch_size; ++b) {
    const int64_t cs = rng.index(num_styles());
    const int64_t cc = train_ids_[static_cast<size_t>(rng.index(static_cast<int64_t>(train_ids_.size())))];
    const int64_t ss = rng.index(num_styles());
    const int64_t sc = train_ids_[static_cast<size_t>(rng.index(static_cast<int64_t>(train_ids_.size())))];
    copy_image_into(image(cs, cc), content.data() + b * per_image);
    copy_image_into(image(ss, sc), style.data() + b * per_image);
    out.style_indices.push_back(ss);
    out.content_ids.push_back(cc);
  }
  out.content_images = Tensor<float>::from_values({batch_size, 3, S, S}, std::move(content));
  out.style_images = Tensor<float>::from_values({batch_size, 3, S, S}, std::move(style));
  return out;
}

Tensor<float> GlyphDataset::stack(int64_t style, const std::vector<int64_t>& contents) const {
  if (contents.empty()) throw UsageError("stack requires at least one content id");
  const int64_t S = image_size_;
  const int64_t per_image = 3 * S * S;
  Vec<float> data(contents.size() * static_cast<size_t>(per_image));
  for (size_t i = 0; i < contents.size(); ++i)
    copy_image_into(image(style, contents[i]), data.data() + static_cast<int64_t>(i) * per_image);
  return Tensor<float>::from_values({static_cast<int64_t>(contents.size()), 3, S, S}, std::move(data));
}

}  // namespace dgf
