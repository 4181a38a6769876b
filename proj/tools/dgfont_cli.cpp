#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "dgf/checkpoint.hpp"
#include "dgf/config.hpp"
#include "dgf/dataset.hpp"
#include "dgf/image_io.hpp"
#include "dgf/metrics.hpp"
#include "dgf/synth.hpp"
#include "dgf/trainer.hpp"
#include "dgf/viz.hpp"

namespace fs = std::filesystem;
using namespace dgf;

namespace {

// Flag values gathered before config-file merging; flags override file keys.
struct Cli {
  std::string config, data_dir, out_dir, checkpoint, style_refs, content, out;
  std::optional<int64_t> seed, iters, batch, num_fdsc;
  std::optional<double> width, lambda_img, lambda_cnt, lambda_offset;
};

AppConfig resolve_config(const Cli& cli) {
  AppConfig cfg;
  if (!cli.config.empty()) apply_config(cfg, parse_config_file(cli.config));
  if (cli.seed) apply_config_value(cfg, "seed", std::to_string(*cli.seed));
  if (cli.iters) apply_config_value(cfg, "iters", std::to_string(*cli.iters));
  if (cli.batch) apply_config_value(cfg, "batch", std::to_string(*cli.batch));
  if (cli.num_fdsc) apply_config_value(cfg, "num_fdsc", std::to_string(*cli.num_fdsc));
  if (cli.width) apply_config_value(cfg, "width", std::to_string(*cli.width));
  if (cli.lambda_img) apply_config_value(cfg, "lambda_img", std::to_string(*cli.lambda_img));
  if (cli.lambda_cnt) apply_config_value(cfg, "lambda_cnt", std::to_string(*cli.lambda_cnt));
  if (cli.lambda_offset) apply_config_value(cfg, "lambda_offset", std::to_string(*cli.lambda_offset));
  return cfg;
}

Tensor<float> load_style_refs(const std::string& dir, const ModelBundle<float>& model) {
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const std::string ext = e.path().extension().string();
    if (ext == ".pgm" || ext == ".ppm") files.push_back(e.path().string());
  }
  if (files.empty()) throw ConfigError("no .pgm/.ppm reference images under " + dir);
  std::sort(files.begin(), files.end());
  const int64_t S = model.config.image_size;
  Vec<float> data(files.size() * static_cast<size_t>(3 * S * S));
  for (size_t i = 0; i < files.size(); ++i) {
    Tensor<float> img = read_image(files[i]);
    if (img.dim(1) != S || img.dim(2) != S)
      throw ConfigError("reference image " + files[i] + " is not " + std::to_string(S) + "x" +
                        std::to_string(S));
    std::copy_n(img.data(), img.numel(), data.begin() + static_cast<int64_t>(i) * 3 * S * S);
  }
  return Tensor<float>::from_values({static_cast<int64_t>(files.size()), 3, S, S}, std::move(data));
}

int cmd_synth_data(const Cli& cli) {
  AppConfig cfg = resolve_config(cli);
  if (cli.out_dir.empty()) throw UsageError("synth-data requires --out-dir");
  synth_corpus(cfg.synth, cli.out_dir);
  std::printf("wrote %lld styles x %lld contents (%lldpx) under %s\n",
              static_cast<long long>(cfg.synth.num_styles),
              static_cast<long long>(cfg.synth.num_contents),
              static_cast<long long>(cfg.synth.image_size), cli.out_dir.c_str());
  return 0;
}

int cmd_train(const Cli& cli) {
  AppConfig cfg = resolve_config(cli);
  if (cli.data_dir.empty()) throw UsageError("train requires --data-dir");
  if (cli.out_dir.empty()) throw UsageError("train requires --out-dir");
  GlyphDataset ds = GlyphDataset::load(cli.data_dir);
  cfg.train.net.num_styles = ds.num_styles();
  cfg.train.net.image_size = ds.image_size();
  Trainer trainer(cfg.train);
  fs::create_directories(cli.out_dir);
  std::ofstream log((fs::path(cli.out_dir) / "train_log.csv").string());
  log << "iter, adv_d, adv_g, r1, cnt, img, offset, total\n";
  trainer.train(ds, &log, cli.out_dir);
  std::printf("finished %lld iterations; checkpoints under %s\n",
              static_cast<long long>(trainer.iteration()), cli.out_dir.c_str());
  return 0;
}

int cmd_generate(const Cli& cli) {
  if (cli.checkpoint.empty() || cli.content.empty() || cli.style_refs.empty() || cli.out.empty())
    throw UsageError("generate requires --checkpoint, --content, --style-refs, --out");
  auto loaded = load_checkpoint(cli.checkpoint);
  const ModelBundle<float>& model = *loaded.model;
  NoGradScope ng;
  Tensor<float> content = read_image(cli.content);
  if (content.dim(1) != model.config.image_size || content.dim(2) != model.config.image_size)
    throw ConfigError("content image does not match the model's image size");
  Tensor<float> refs = load_style_refs(cli.style_refs, model);
  Tensor<float> code = average_style_code(refs, model);
  Vec<float> batch_data(content.values());
  Tensor<float> batch = Tensor<float>::from_values({1, 3, content.dim(1), content.dim(2)},
                                                   std::move(batch_data));
  Tensor<float> image = model.generate_with_code(batch, code).image;
  Vec<float> one(static_cast<size_t>(image.numel()));
  std::copy_n(image.data(), image.numel(), one.begin());
  Tensor<float> img3 = Tensor<float>::from_values({3, image.dim(2), image.dim(3)}, std::move(one));
  if (fs::path(cli.out).extension() == ".ppm")
    write_image(img3, cli.out);
  else
    write_image_gray(img3, cli.out);
  std::printf("wrote %s\n", cli.out.c_str());
  return 0;
}

int cmd_eval(const Cli& cli) {
  if (cli.checkpoint.empty() || cli.data_dir.empty())
    throw UsageError("eval requires --checkpoint and --data-dir");
  auto loaded = load_checkpoint(cli.checkpoint);
  GlyphDataset ds = GlyphDataset::load(cli.data_dir);
  MetricReport r = evaluate_model(*loaded.model, ds);
  std::printf("pairs, l1, rmse, ssim\n%lld, %.9g, %.9g, %.9g\n",
              static_cast<long long>(r.pairs()), r.l1, r.rmse, r.ssim);
  if (!cli.out.empty()) {
    std::ofstream f(cli.out);
    f << "pair, l1, rmse, ssim\n";
    for (int64_t i = 0; i < r.pairs(); ++i) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "%lld, %.9g, %.9g, %.9g\n", static_cast<long long>(i),
                    r.per_pair_l1[i], r.per_pair_rmse[i], r.per_pair_ssim[i]);
      f << buf;
    }
  }
  return 0;
}

struct GenInternals {
  Tensor<float> offsets;   // first skip module
  Tensor<float> deformed;  // matching K'_c
};

GenInternals run_with_internals(const Cli& cli, const ModelBundle<float>& model) {
  NoGradScope ng;
  Tensor<float> content = read_image(cli.content);
  Tensor<float> refs = load_style_refs(cli.style_refs, model);
  Tensor<float> code = average_style_code(refs, model);
  Vec<float> batch_data(content.values());
  Tensor<float> batch = Tensor<float>::from_values({1, 3, content.dim(1), content.dim(2)},
                                                   std::move(batch_data));
  auto out = model.generate_with_code(batch, code);
  if (out.mix.offsets.empty())
    throw ConfigError("model has no skip modules (num_fdsc = 0); nothing to visualize");
  return {out.mix.offsets[0], out.mix.deformed[0]};
}

int cmd_viz_offsets(const Cli& cli) {
  if (cli.checkpoint.empty() || cli.content.empty() || cli.style_refs.empty() || cli.out.empty())
    throw UsageError("viz-offsets requires --checkpoint, --content, --style-refs, --out");
  auto loaded = load_checkpoint(cli.checkpoint);
  auto internals = run_with_internals(cli, *loaded.model);
  write_image(offset_flow_image(internals.offsets, 0), cli.out);
  // per-position mean displacement as text, alongside the image
  std::vector<double> dy, dx;
  dgf::detail::mean_displacement(internals.offsets, 0, &dy, &dx);
  const int64_t H = internals.offsets.dim(2), W = internals.offsets.dim(3);
  std::ofstream txt(cli.out + ".txt");
  txt << "y, x, dy, dx\n";
  for (int64_t y = 0; y < H; ++y)
    for (int64_t x = 0; x < W; ++x) {
      char buf[96];
      std::snprintf(buf, sizeof buf, "%lld, %lld, %.6g, %.6g\n", static_cast<long long>(y),
                    static_cast<long long>(x), dy[static_cast<size_t>(y * W + x)],
                    dx[static_cast<size_t>(y * W + x)]);
      txt << buf;
    }
  std::printf("wrote %s and %s.txt\n", cli.out.c_str(), cli.out.c_str());
  return 0;
}

int cmd_viz_features(const Cli& cli) {
  if (cli.checkpoint.empty() || cli.content.empty() || cli.style_refs.empty() || cli.out.empty())
    throw UsageError("viz-features requires --checkpoint, --content, --style-refs, --out");
  auto loaded = load_checkpoint(cli.checkpoint);
  auto internals = run_with_internals(cli, *loaded.model);
  const Tensor<float>& f = internals.deformed;  // [1,C,H,W]
  Vec<float> chw(static_cast<size_t>(f.numel()));
  std::copy_n(f.data(), f.numel(), chw.begin());
  Tensor<float> fmap = Tensor<float>::from_values({f.dim(1), f.dim(2), f.dim(3)}, std::move(chw));
  const int64_t channels = std::min<int64_t>(8, fmap.dim(0));
  for (int64_t c = 0; c < channels; ++c) {
    char name[512];
    std::snprintf(name, sizeof name, "%s_c%03lld.pgm", cli.out.c_str(), static_cast<long long>(c));
    write_image(feature_map_image(fmap, c), name);
  }
  std::printf("wrote %lld channel images with prefix %s\n", static_cast<long long>(channels),
              cli.out.c_str());
  return 0;
}

int cmd_audit_arch(const Cli& cli) {
  AppConfig cfg = resolve_config(cli);
  NetworkConfig net = cfg.train.net;
  if (cli.width && *cli.width == 1.0) net.num_styles = 400;  // reference configuration
  ModelBundle<float> model(net);
  init_parameters(model, cfg.train.seed);
  NoGradScope ng;
  const int64_t S = net.image_size;
  Tensor<float> probe = Tensor<float>::full({1, 3, S, S}, 0.1f);
  Tensor<float> z_s = model.style_encoder.forward(probe, /*training=*/true);
  auto enc = model.content_encoder.forward(probe);
  auto mix = model.mixer.forward(enc.z_c, z_s, enc.tap1, enc.tap2, enc.tap3);
  Tensor<float> logits = model.discriminator.forward(probe);
  std::printf("width %.6g, num_fdsc %d, num_styles %lld\n", net.width_multiplier, net.num_fdsc,
              static_cast<long long>(net.num_styles));
  std::printf("style code          %s\n", shape_str(z_s.shape()).c_str());
  std::printf("content feature     %s\n", shape_str(enc.z_c.shape()).c_str());
  std::printf("content tap 1       %s\n", shape_str(enc.tap1.shape()).c_str());
  std::printf("content tap 2       %s\n", shape_str(enc.tap2.shape()).c_str());
  std::printf("mixer output        %s\n", shape_str(mix.image.shape()).c_str());
  std::printf("discriminator out   %s\n", shape_str(logits.shape()).c_str());
  std::printf("parameter count     %lld\n",
              static_cast<long long>(model.params.total_parameters()));
  for (const auto& e : model.params.entries)
    std::printf("  %-48s %s\n", e.name.c_str(), shape_str(e.tensor.shape()).c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unsupervised font generation: deformable skip connections over a "
               "style/content encoder-mixer network"};
  app.require_subcommand(1);
  Cli cli;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", cli.config, "Flat key = value config file");
    sub->add_option("--seed", cli.seed, "Random seed");
  };
  auto add_train_knobs = [&](CLI::App* sub) {
    sub->add_option("--iters", cli.iters, "Training iterations");
    sub->add_option("--batch", cli.batch, "Batch size");
    sub->add_option("--width", cli.width, "Channel width multiplier in (0,1]");
    sub->add_option("--num-fdsc", cli.num_fdsc, "Number of deformation skip modules (0-3)");
    sub->add_option("--lambda-img", cli.lambda_img, "Image reconstruction weight");
    sub->add_option("--lambda-cnt", cli.lambda_cnt, "Content consistency weight");
    sub->add_option("--lambda-offset", cli.lambda_offset, "Offset regularization weight");
  };

  CLI::App* synth = app.add_subcommand("synth-data", "Render the procedural glyph corpus");
  add_common(synth);
  synth->add_option("--out-dir", cli.out_dir, "Corpus output directory")->required();

  CLI::App* train = app.add_subcommand("train", "Train on a glyph corpus");
  add_common(train);
  add_train_knobs(train);
  train->add_option("--data-dir", cli.data_dir, "Corpus directory")->required();
  train->add_option("--out-dir", cli.out_dir, "Checkpoints and log directory")->required();

  CLI::App* gen = app.add_subcommand("generate", "Generate one glyph in a reference style");
  gen->add_option("--checkpoint", cli.checkpoint, "Model checkpoint")->required();
  gen->add_option("--content", cli.content, "Content glyph image (.pgm)")->required();
  gen->add_option("--style-refs", cli.style_refs, "Directory of style reference images")->required();
  gen->add_option("--out", cli.out, "Output image (.pgm or .ppm)")->required();

  CLI::App* eval = app.add_subcommand("eval", "Pixel metrics over the corpus test split");
  eval->add_option("--checkpoint", cli.checkpoint, "Model checkpoint")->required();
  eval->add_option("--data-dir", cli.data_dir, "Corpus directory")->required();
  eval->add_option("--out", cli.out, "Optional per-pair CSV output");

  CLI::App* vizo = app.add_subcommand("viz-offsets", "Hue-wheel image of learned offsets");
  vizo->add_option("--checkpoint", cli.checkpoint, "Model checkpoint")->required();
  vizo->add_option("--content", cli.content, "Content glyph image")->required();
  vizo->add_option("--style-refs", cli.style_refs, "Style reference directory")->required();
  vizo->add_option("--out", cli.out, "Output .ppm image")->required();

  CLI::App* vizf = app.add_subcommand("viz-features", "Grayscale images of deformed features");
  vizf->add_option("--checkpoint", cli.checkpoint, "Model checkpoint")->required();
  vizf->add_option("--content", cli.content, "Content glyph image")->required();
  vizf->add_option("--style-refs", cli.style_refs, "Style reference directory")->required();
  vizf->add_option("--out", cli.out, "Output path prefix")->required();

  CLI::App* audit = app.add_subcommand("audit-arch", "Print the architecture shape manifest");
  add_common(audit);
  audit->add_option("--width", cli.width, "Channel width multiplier (1.0 = reference)");
  audit->add_option("--num-fdsc", cli.num_fdsc, "Number of deformation skip modules");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (synth->parsed()) return cmd_synth_data(cli);
    if (train->parsed()) return cmd_train(cli);
    if (gen->parsed()) return cmd_generate(cli);
    if (eval->parsed()) return cmd_eval(cli);
    if (vizo->parsed()) return cmd_viz_offsets(cli);
    if (vizf->parsed()) return cmd_viz_features(cli);
    if (audit->parsed()) return cmd_audit_arch(cli);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
