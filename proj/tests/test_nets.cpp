#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "dgf/nets.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace dgf;
using testutil::random_tensor;

namespace {

NetworkConfig tiny_config() {
  NetworkConfig cfg;
  cfg.width_multiplier = 0.125;
  cfg.num_styles = 3;
  return cfg;
}

}  // namespace

TEST_CASE("reference-width audit reproduces the published shapes") {
  NetworkConfig cfg;
  cfg.width_multiplier = 1.0;
  cfg.num_styles = 400;
  ModelBundle<float> model(cfg);
  init_parameters(model, 1);

  // channel progressions, exact
  const int64_t style_widths[8] = {64, 128, 256, 256, 512, 512, 512, 512};
  for (int i = 0; i < 8; ++i)
    CHECK(model.style_encoder.stages[static_cast<size_t>(i)].conv.weight.dim(0) == style_widths[i]);
  CHECK(model.style_encoder.fc.weight.shape() == Shape{128, 512});

  CHECK(model.content_encoder.layers[0].dconv.weight.shape() == Shape{64, 3, 7, 7});
  CHECK(model.content_encoder.layers[1].dconv.weight.shape() == Shape{128, 64, 4, 4});
  CHECK(model.content_encoder.layers[2].dconv.weight.shape() == Shape{256, 128, 4, 4});

  CHECK(model.mixer.up1.weight.shape() == Shape{128, 256, 5, 5});
  CHECK(model.mixer.up2.weight.shape() == Shape{64, 256, 5, 5});  // doubled by the merge
  CHECK(model.mixer.to_image.weight.shape() == Shape{3, 128, 7, 7});

  const int64_t disc_widths[8] = {64, 128, 128, 256, 256, 512, 512, 1024};
  for (int i = 0; i < 8; ++i)
    CHECK(model.discriminator.blocks[static_cast<size_t>(i)].conv1.weight.dim(0) == disc_widths[i]);
  CHECK(model.discriminator.conv4.weight.shape() == Shape{1024, 1024, 4, 4});
  CHECK(model.discriminator.to_logits.weight.shape() == Shape{400, 1024, 1, 1});

  // probe forward shapes
  NoGradScope ng;
  auto probe = Tensor<float>::full({1, 3, 80, 80}, 0.2f);
  auto z_s = model.style_encoder.forward(probe, true);
  CHECK(z_s.shape() == Shape{1, 128});
  auto enc = model.content_encoder.forward(probe);
  CHECK(enc.z_c.shape() == Shape{1, 256, 20, 20});
  CHECK(enc.tap1.shape() == Shape{1, 64, 80, 80});
  CHECK(enc.tap2.shape() == Shape{1, 128, 40, 40});
  auto logits = model.discriminator.forward(probe);
  CHECK(logits.shape() == Shape{1, 400});
  CHECK(logits.all_finite());

  // architecture drift guard: the full-width parameter count is a constant
  CHECK(model.params.total_parameters() == 59580093);
}

TEST_CASE("style encoding is deterministic and width-independent in its output dim") {
  auto cfg = tiny_config();
  ModelBundle<float> model(cfg);
  init_parameters(model, 5);
  NoGradScope ng;
  Rng rng(41);
  auto img = random_tensor<float>({2, 3, 80, 80}, rng);
  auto a = model.style_encoder.forward(img, true);
  auto b = model.style_encoder.forward(img, true);
  CHECK(a.shape() == Shape{2, 128});
  CHECK(testutil::bitwise_equal(a, b));

  CHECK_THROWS_AS(model.style_encoder.forward(Tensor<float>::zeros({1, 3, 40, 40}), true),
                  DimensionError);
}

TEST_CASE("content encoder survives zero input and scales its taps") {
  auto cfg = tiny_config();  // width 1/8: 8, 16, 32 channels
  ModelBundle<float> model(cfg);
  init_parameters(model, 6);
  NoGradScope ng;
  auto out = model.content_encoder.forward(Tensor<float>::zeros({1, 3, 80, 80}));
  CHECK(out.z_c.shape() == Shape{1, 32, 20, 20});
  CHECK(out.tap1.shape() == Shape{1, 8, 80, 80});
  CHECK(out.tap2.shape() == Shape{1, 16, 40, 40});
  CHECK(out.z_c.all_finite());
}

TEST_CASE("zeroed skip predictor gives exactly zero offsets and half-mask conv") {
  ParamStore<float> ps;
  FdscModule<float> fdsc(ps, "fdsc_t", 4, 4, 3);
  // predictor weights start zeroed by construction; give the deform kernel
  // real values
  Rng rng(42);
  for (auto& e : ps.entries)
    if (e.name == "fdsc_t.weight")
      for (auto& v : e.tensor.mutable_values()) v = static_cast<float>(rng.uniform(-0.5, 0.5));
  auto k_c = random_tensor<float>({1, 4, 6, 6}, rng);
  auto k_s = random_tensor<float>({1, 4, 6, 6}, rng);
  auto out = fdsc.apply(k_c, k_s);

  for (float v : out.offsets.values()) CHECK(v == 0.0f);     // exact
  for (float v : out.masks.values()) CHECK(v == 0.5f);       // sigmoid(0)
  CHECK(out.merged.dim(1) == 8);                             // Cc + Cs
  CHECK(out.offsets.dim(2) == k_c.dim(2));
  CHECK(out.offsets.dim(3) == k_c.dim(3));

  // K'_c equals half the plain convolution of K_c with the module kernel
  auto ref = conv2d_raw(k_c, fdsc.weight, Conv2dAttrs::square(3, 1, 1));
  for (size_t i = 0; i < ref.values().size(); ++i)
    CHECK(std::abs(out.deformed.values()[i] - 0.5f * ref.values()[i]) <= 1e-6);
}

TEST_CASE("residual blocks become exact identities when their branch is zeroed") {
  ParamStore<float> ps;
  ResBlock<float> block(ps, "rb", 6, 6, BlockNorm::kInstance, false);
  for (auto& e : ps.entries)  // all-zero branch: convs, affine gains, shifts
    std::fill(e.tensor.mutable_values().begin(), e.tensor.mutable_values().end(), 0.0f);
  Rng rng(43);
  auto x = random_tensor<float>({2, 6, 5, 5}, rng);
  auto y = block.forward(x);
  for (size_t i = 0; i < x.values().size(); ++i) CHECK(y.values()[i] == x.values()[i]);  // exact
}

TEST_CASE("mixer output lies strictly inside (-1, 1) and honors merge widths") {
  for (int n : {0, 1, 2, 3}) {
    auto cfg = tiny_config();
    cfg.num_fdsc = n;
    ModelBundle<float> model(cfg);
    init_parameters(model, 7);
    NoGradScope ng;
    Rng rng(44);
    auto content = random_tensor<float>({2, 3, 80, 80}, rng);
    auto style = random_tensor<float>({2, 3, 80, 80}, rng);
    auto out = model.generate_detailed(content, style, true);
    CHECK(out.image.shape() == Shape{2, 3, 80, 80});
    for (float v : out.image.values()) {
      CHECK(v > -1.0f);
      CHECK(v < 1.0f);
    }
    CHECK(static_cast<int>(out.mix.offsets.size()) == n);
  }
}

TEST_CASE("generate is bitwise deterministic for fixed inputs") {
  auto cfg = tiny_config();
  ModelBundle<float> model(cfg);
  init_parameters(model, 8);
  Rng rng(45);
  auto content = random_tensor<float>({1, 3, 80, 80}, rng);
  auto style = random_tensor<float>({1, 3, 80, 80}, rng);
  NoGradScope ng;
  auto a = generate(content, style, model);
  auto b = generate(content, style, model);
  CHECK(testutil::bitwise_equal(a, b));
}

TEST_CASE("discriminator emits one logit per style") {
  auto cfg = tiny_config();
  cfg.num_styles = 7;
  ModelBundle<float> model(cfg);
  init_parameters(model, 9);
  NoGradScope ng;
  Rng rng(46);
  auto x = random_tensor<float>({3, 3, 80, 80}, rng);
  auto logits = discriminate(x, model);
  CHECK(logits.shape() == Shape{3, 7});
  CHECK(logits.all_finite());
}

TEST_CASE("average_style_code is the arithmetic mean of per-reference codes") {
  auto cfg = tiny_config();
  ModelBundle<float> model(cfg);
  init_parameters(model, 10);
  NoGradScope ng;
  Rng rng(47);
  auto one = random_tensor<float>({1, 3, 80, 80}, rng);
  auto single = average_style_code(one, model);
  auto direct = style_encode(one, model, false);
  CHECK(testutil::max_abs_diff(single, direct) <= 1e-6);

  // two identical references equal either's code
  Vec<float> dup(static_cast<size_t>(2 * one.numel()));
  std::copy_n(one.data(), one.numel(), dup.begin());
  std::copy_n(one.data(), one.numel(), dup.begin() + one.numel());
  auto two = average_style_code(Tensor<float>::from_values({2, 3, 80, 80}, std::move(dup)), model);
  CHECK(testutil::max_abs_diff(two, direct) <= 1e-5);

  // general mean
  auto other = random_tensor<float>({1, 3, 80, 80}, rng);
  Vec<float> pair(static_cast<size_t>(2 * one.numel()));
  std::copy_n(one.data(), one.numel(), pair.begin());
  std::copy_n(other.data(), other.numel(), pair.begin() + one.numel());
  auto mean2 = average_style_code(Tensor<float>::from_values({2, 3, 80, 80}, std::move(pair)), model);
  auto c1 = style_encode(one, model, false);
  auto c2 = style_encode(other, model, false);
  for (int64_t i = 0; i < 128; ++i)
    CHECK(mean2.values()[i] ==
          doctest::Approx((c1.values()[i] + c2.values()[i]) / 2.0f).epsilon(1e-5));

  CHECK_THROWS_AS(average_style_code(Tensor<float>::zeros({0, 3, 80, 80}), model), UsageError);
}

TEST_CASE("offsets are identically zero right after initialization") {
  auto cfg = tiny_config();
  ModelBundle<float> model(cfg);
  init_parameters(model, 11);
  NoGradScope ng;
  Rng rng(48);
  auto content = random_tensor<float>({1, 3, 80, 80}, rng);
  auto style = random_tensor<float>({1, 3, 80, 80}, rng);
  auto out = model.generate_detailed(content, style, true);
  for (const auto& off : out.mix.offsets)
    for (float v : off.values()) CHECK(v == 0.0f);  // exact
}

TEST_CASE("parameter names are unique and stable across construction") {
  auto cfg = tiny_config();
  ModelBundle<float> a(cfg);
  ModelBundle<float> b(cfg);
  std::set<std::string> names;
  for (const auto& e : a.params.entries) CHECK(names.insert(e.name).second);
  REQUIRE(a.params.entries.size() == b.params.entries.size());
  for (size_t i = 0; i < a.params.entries.size(); ++i)
    CHECK(a.params.entries[i].name == b.params.entries[i].name);
}

TEST_CASE("reference-width parameter manifest matches the published list") {
  std::ifstream doc("docs/parameter_manifest.txt");
  if (!doc.good()) doc.open("../docs/parameter_manifest.txt");
  if (!doc.good()) doc.open("../../docs/parameter_manifest.txt");
  REQUIRE_MESSAGE(doc.good(), "docs/parameter_manifest.txt not found from the working directory");
  NetworkConfig cfg;
  cfg.width_multiplier = 1.0;
  cfg.num_styles = 400;
  ModelBundle<float> model(cfg);  // names only; no init needed
  std::string line;
  size_t i = 0;
  while (std::getline(doc, line)) {
    if (line.empty()) continue;
    REQUIRE(i < model.params.entries.size());
    const auto& e = model.params.entries[i];
    std::istringstream is(line);
    std::string name, shape;
    is >> name >> shape;
    CHECK(name == e.name);
    CHECK(shape == shape_str(e.tensor.shape()));
    ++i;
  }
  CHECK(i == model.params.entries.size());
}

TEST_CASE("config validation rejects out-of-range settings") {
  NetworkConfig bad;
  bad.width_multiplier = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = NetworkConfig{};
  bad.num_fdsc = 4;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = NetworkConfig{};
  bad.image_size = 81;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}
