#include "dgf/config.hpp"

#include <fstream>

namespace dgf {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

int64_t to_int(const std::string& key, const std::string& v) {
  try {
    size_t used;
    const int64_t x = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' expects an integer, got '" + v + "'");
  }
}

double to_double(const std::string& key, const std::string& v) {
  try {
    size_t used;
    const double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' expects a number, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key '" + key + "' expects true/false, got '" + v + "'");
}

}  // namespace

std::vector<std::pair<std::string, std::string>> parse_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw UsageError("cannot open config file: " + path);
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty())
      throw ConfigError(path + ":" + std::to_string(lineno) + ": empty key or value");
    out.emplace_back(key, value);
  }
  return out;
}

void apply_config_value(AppConfig& c, const std::string& key, const std::string& v) {
  if (key == "iters") c.train.iterations = to_int(key, v);
  else if (key == "batch") c.train.batch_size = to_int(key, v);
  else if (key == "seed") {
    c.train.seed = static_cast<uint64_t>(to_int(key, v));
    c.synth.seed = c.train.seed;
  } else if (key == "lambda_img") c.train.weights.lambda_img = to_double(key, v);
  else if (key == "lambda_cnt") c.train.weights.lambda_cnt = to_double(key, v);
  else if (key == "lambda_offset") c.train.weights.lambda_offset = to_double(key, v);
  else if (key == "r1_gamma") c.train.r1_gamma = to_double(key, v);
  else if (key == "checkpoint_every") c.train.checkpoint_every = to_int(key, v);
  else if (key == "log_every") c.train.log_every = to_int(key, v);
  else if (key == "workers") c.train.workers = static_cast<int>(to_int(key, v));
  else if (key == "cnt_stop_grad") c.train.cnt_stop_grad = to_bool(key, v);
  else if (key == "width") c.train.net.width_multiplier = to_double(key, v);
  else if (key == "num_fdsc") c.train.net.num_fdsc = static_cast<int>(to_int(key, v));
  else if (key == "num_styles") {
    c.train.net.num_styles = to_int(key, v);
    c.synth.num_styles = c.train.net.num_styles;
  } else if (key == "image_size") {
    c.train.net.image_size = to_int(key, v);
    c.synth.image_size = c.train.net.image_size;
  } else if (key == "fdsc_kernel") c.train.net.fdsc_kernel = to_int(key, v);
  else if (key == "content_deform_layers") c.train.net.content_deform_layers = static_cast<int>(to_int(key, v));
  else if (key == "contents") c.synth.num_contents = to_int(key, v);
  else if (key == "test_fraction") c.synth.test_fraction = to_double(key, v);
  else throw ConfigError("unknown config key '" + key + "'");
}

void apply_config(AppConfig& config, const std::vector<std::pair<std::string, std::string>>& kv) {
  for (const auto& [k, v] : kv) apply_config_value(config, k, v);
}

}  // namespace dgf
