#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <regex>
#include <set>
#include <string>

namespace fs = std::filesystem;

namespace {

std::string binary() {
  const char* p = std::getenv("DGFONT_BIN");
  REQUIRE_MESSAGE(p != nullptr, "DGFONT_BIN must point at the CLI binary");
  return p;
}

struct RunResult {
  int code;
  std::string output;
};

RunResult run(const std::string& args) {
  const std::string out_file =
      (fs::temp_directory_path() / ("dgf_cli_out_" + std::to_string(::getpid()))).string();
  const std::string cmd = binary() + " " + args + " > " + out_file + " 2>&1";
  const int raw = std::system(cmd.c_str());
  std::ifstream f(out_file);
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  fs::remove(out_file);
  return {WEXITSTATUS(raw), text};
}

std::string temp_dir(const std::string& tag) {
  auto p = fs::temp_directory_path() / ("dgf_cli_" + tag);
  fs::remove_all(p);
  return p.string();
}

std::string file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

std::set<std::string> flags_in_help(const std::string& help) {
  std::set<std::string> found;
  std::regex flag("--[a-z][a-z-]*");
  for (auto it = std::sregex_iterator(help.begin(), help.end(), flag);
       it != std::sregex_iterator(); ++it)
    found.insert(it->str());
  return found;
}

}  // namespace

TEST_CASE("help schemas expose exactly the documented flags") {
  const std::set<std::string> common{"--help"};
  auto expect = [&](const std::string& sub, std::set<std::string> flags) {
    flags.insert(common.begin(), common.end());
    auto r = run(sub + " --help");
    CHECK(r.code == 0);
    auto found = flags_in_help(r.output);
    CHECK(found == flags);
  };
  expect("synth-data", {"--config", "--seed", "--out-dir"});
  expect("train", {"--config", "--seed", "--iters", "--batch", "--width", "--num-fdsc",
                   "--lambda-img", "--lambda-cnt", "--lambda-offset", "--data-dir", "--out-dir"});
  expect("generate", {"--checkpoint", "--content", "--style-refs", "--out"});
  expect("eval", {"--checkpoint", "--data-dir", "--out"});
  expect("viz-offsets", {"--checkpoint", "--content", "--style-refs", "--out"});
  expect("viz-features", {"--checkpoint", "--content", "--style-refs", "--out"});
  expect("audit-arch", {"--config", "--seed", "--width", "--num-fdsc"});
}

TEST_CASE("usage errors exit with 2 and name the offense") {
  auto missing = run("train --config /nonexistent/missing.cfg --data-dir x --out-dir y");
  CHECK(missing.code == 2);
  CHECK(missing.output.find("/nonexistent/missing.cfg") != std::string::npos);

  auto unknown = run("train --no-such-flag");
  CHECK(unknown.code == 2);

  auto no_sub = run("");
  CHECK(no_sub.code == 2);
}

TEST_CASE("audit-arch prints the shape manifest deterministically") {
  auto r = run("audit-arch --width 0.25");
  CHECK(r.code == 0);
  CHECK(r.output.find("parameter count") != std::string::npos);
  CHECK(r.output.find("style code          [1,128]") != std::string::npos);
  auto r2 = run("audit-arch --width 0.25");
  CHECK(r.output == r2.output);
}

TEST_CASE("end-to-end: synth, train, generate, eval, viz are reproducible") {
  const std::string corpus = temp_dir("corpus");
  const std::string corpus2 = temp_dir("corpus2");
  const std::string cfg_path = temp_dir("cfgdir") + "/desk.cfg";
  fs::create_directories(fs::path(cfg_path).parent_path());
  {
    std::ofstream f(cfg_path);
    f << "contents = 20\nnum_styles = 2\ntest_fraction = 0.5\nwidth = 0.125\n"
      << "iters = 2\nbatch = 2\nlog_every = 1\ncheckpoint_every = 2\n";
  }

  auto s1 = run("synth-data --config " + cfg_path + " --out-dir " + corpus + " --seed 3");
  CHECK(s1.code == 0);
  auto s2 = run("synth-data --config " + cfg_path + " --out-dir " + corpus2 + " --seed 3");
  CHECK(s2.code == 0);
  CHECK(file_bytes(corpus + "/style_000/content_000.pgm") ==
        file_bytes(corpus2 + "/style_000/content_000.pgm"));

  const std::string run_dir = temp_dir("run");
  auto t = run("train --config " + cfg_path + " --data-dir " + corpus + " --out-dir " + run_dir);
  CHECK(t.code == 0);
  REQUIRE(fs::exists(run_dir + "/checkpoint_last.dgf"));

  // flags override the config file
  const std::string run_dir2 = temp_dir("run2");
  auto t2 = run("train --config " + cfg_path + " --iters 1 --data-dir " + corpus + " --out-dir " +
                run_dir2);
  CHECK(t2.code == 0);
  std::ifstream log(run_dir2 + "/train_log.csv");
  std::string header, line1, line2;
  std::getline(log, header);
  std::getline(log, line1);
  CHECK(!std::getline(log, line2));  // exactly one logged iteration

  const std::string out1 = temp_dir("gen") + "/a.pgm";
  fs::create_directories(fs::path(out1).parent_path());
  const std::string gen_args = "generate --checkpoint " + run_dir + "/checkpoint_last.dgf" +
                               " --content " + corpus + "/style_000/content_000.pgm" +
                               " --style-refs " + corpus + "/style_001 --out ";
  auto g1 = run(gen_args + out1);
  CHECK(g1.code == 0);
  const std::string out2 = fs::path(out1).parent_path().string() + "/b.pgm";
  auto g2 = run(gen_args + out2);
  CHECK(g2.code == 0);
  CHECK(file_bytes(out1) == file_bytes(out2));  // idempotent generation
  {
    std::ifstream img(out1, std::ios::binary);
    std::string magic, dims;
    std::getline(img, magic);
    std::getline(img, dims);
    CHECK(magic == "P5");
    CHECK(dims == "80 80");
  }

  auto ev = run("eval --checkpoint " + run_dir + "/checkpoint_last.dgf --data-dir " + corpus);
  CHECK(ev.code == 0);
  CHECK(ev.output.find("l1") != std::string::npos);

  const std::string flow = fs::path(out1).parent_path().string() + "/flow.ppm";
  auto vo = run("viz-offsets --checkpoint " + run_dir + "/checkpoint_last.dgf --content " +
                corpus + "/style_000/content_000.pgm --style-refs " + corpus + "/style_001 --out " +
                flow);
  CHECK(vo.code == 0);
  CHECK(fs::exists(flow));

  const std::string feat = fs::path(out1).parent_path().string() + "/feat";
  auto vf = run("viz-features --checkpoint " + run_dir + "/checkpoint_last.dgf --content " +
                corpus + "/style_000/content_000.pgm --style-refs " + corpus + "/style_001 --out " +
                feat);
  CHECK(vf.code == 0);
  CHECK(fs::exists(feat + "_c000.pgm"));

  // domain errors exit with 1
  auto bad = run("eval --checkpoint " + corpus + "/manifest.txt --data-dir " + corpus);
  CHECK(bad.code == 1);
}
