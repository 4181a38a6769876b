#include "dgf/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace dgf {

namespace {

constexpr char kMagic[4] = {'D', 'G', 'F', '1'};
constexpr uint16_t kVersion = 1;

struct Writer {
  std::ofstream f;
  explicit Writer(const std::string& path) : f(path, std::ios::binary) {
    if (!f) throw IoError("cannot open checkpoint for writing: " + path);
  }
  void bytes(const void* p, size_t n) { f.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  void u16(uint16_t v) { bytes(&v, 2); }
  void u32(uint32_t v) { bytes(&v, 4); }
  void u64(uint64_t v) { bytes(&v, 8); }
  void str(const std::string& s) {
    u32(static_cast<uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
};

struct ReaderCk {
  std::string data;
  size_t pos = 0;
  std::string path;
  explicit ReaderCk(const std::string& p) : path(p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint: " + p);
    data.assign(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
  }
  void need(size_t n, const char* what) {
    if (pos + n > data.size())
      throw IoError(path + ": truncated checkpoint while reading " + what,
                    static_cast<int64_t>(pos));
  }
  void bytes(void* p, size_t n, const char* what) {
    need(n, what);
    std::memcpy(p, data.data() + pos, n);
    pos += n;
  }
  uint16_t u16(const char* what) { uint16_t v; bytes(&v, 2, what); return v; }
  uint32_t u32(const char* what) { uint32_t v; bytes(&v, 4, what); return v; }
  uint64_t u64(const char* what) { uint64_t v; bytes(&v, 8, what); return v; }
  std::string str(const char* what) {
    const uint32_t n = u32(what);
    need(n, what);
    std::string s(data.data() + pos, n);
    pos += n;
    return s;
  }
};

std::string config_block(const NetworkConfig& c) {
  std::ostringstream os;
  os << "image_size = " << c.image_size << "\n";
  os << "style_dim = " << c.style_dim << "\n";
  os << "num_styles = " << c.num_styles << "\n";
  os << "width = " << c.width_multiplier << "\n";
  os << "num_fdsc = " << c.num_fdsc << "\n";
  os << "fdsc_kernel = " << c.fdsc_kernel << "\n";
  os << "content_deform_layers = " << c.content_deform_layers << "\n";
  return os.str();
}

NetworkConfig parse_config_block(const std::string& text, const std::string& path) {
  NetworkConfig c;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string key, eq, value;
    ls >> key >> eq >> value;
    if (eq != "=") throw IoError(path + ": malformed checkpoint config line '" + line + "'");
    if (key == "image_size") c.image_size = std::stoll(value);
    else if (key == "style_dim") c.style_dim = std::stoll(value);
    else if (key == "num_styles") c.num_styles = std::stoll(value);
    else if (key == "width") c.width_multiplier = std::stod(value);
    else if (key == "num_fdsc") c.num_fdsc = std::stoi(value);
    else if (key == "fdsc_kernel") c.fdsc_kernel = std::stoll(value);
    else if (key == "content_deform_layers") c.content_deform_layers = std::stoi(value);
    else throw IoError(path + ": unknown checkpoint config key '" + key + "'");
  }
  return c;
}

void write_entry(Writer& w, const std::string& name, const Shape& shape, const float* data,
                 int64_t count) {
  w.str(name);
  w.bytes("\0", 1);  // dtype tag 0 = f32
  const uint8_t rank = static_cast<uint8_t>(shape.size());
  w.bytes(&rank, 1);
  for (int64_t d : shape) w.u64(static_cast<uint64_t>(d));
  w.bytes(data, static_cast<size_t>(count) * 4);
}

struct Entry {
  Shape shape;
  std::vector<float> data;
};

std::map<std::string, Entry> read_entries(ReaderCk& r) {
  const uint32_t count = r.u32("entry count");
  std::map<std::string, Entry> out;
  for (uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str("entry name");
    uint8_t dtype, rank;
    r.bytes(&dtype, 1, "dtype");
    if (dtype != 0) throw IoError(r.path + ": unsupported dtype tag for " + name);
    r.bytes(&rank, 1, "rank");
    Entry e;
    int64_t n = 1;
    for (uint8_t d = 0; d < rank; ++d) {
      const uint64_t ext = r.u64("extent");
      e.shape.push_back(static_cast<int64_t>(ext));
      n *= static_cast<int64_t>(ext);
    }
    e.data.resize(static_cast<size_t>(n));
    r.bytes(e.data.data(), static_cast<size_t>(n) * 4, name.c_str());
    if (out.count(name)) throw IoError(r.path + ": duplicate checkpoint entry " + name);
    out.emplace(name, std::move(e));
  }
  return out;
}

template <typename Opt>
void collect_optim(std::vector<std::pair<std::string, std::vector<float>*>>& out,
                   const std::string& prefix, Opt& opt, bool second_moment) {
  for (auto& slot : opt.slots) {
    out.emplace_back(prefix + "." + slot.name + ".m1", &slot.m1);
    if (second_moment) out.emplace_back(prefix + "." + slot.name + ".m2", &slot.m2);
  }
}

}  // namespace

TrainerOptimizers make_trainer_optimizers(const ModelBundle<float>& model) {
  TrainerOptimizers o;
  o.style = Adam<float>("style", model.params.with_prefix("style_encoder."));
  std::vector<ParamStore<float>::Entry> gen_entries;
  for (const char* prefix : {"content_encoder.", "mixer.", "fdsc"})
    for (auto& e : model.params.with_prefix(prefix)) gen_entries.push_back(e);
  o.gen = RmsProp<float>("gen", gen_entries);
  o.disc = RmsProp<float>("disc", model.params.with_prefix("discriminator."));
  return o;
}

void save_checkpoint(const ModelBundle<float>& model, const TrainerOptimizers* optim,
                     const std::string& path) {
  Writer w(path);
  w.bytes(kMagic, 4);
  w.u16(kVersion);
  w.str(config_block(model.config));

  uint32_t count = static_cast<uint32_t>(model.params.entries.size());
  count += static_cast<uint32_t>(model.params.stats.size()) * 2;
  std::vector<std::pair<std::string, std::vector<float>*>> optim_entries;
  if (optim) {
    auto& o = *const_cast<TrainerOptimizers*>(optim);
    collect_optim(optim_entries, "optim.style", o.style, true);
    collect_optim(optim_entries, "optim.gen", o.gen, false);
    collect_optim(optim_entries, "optim.disc", o.disc, false);
    count += static_cast<uint32_t>(optim_entries.size()) + 3;
  }
  w.u32(count);

  for (const auto& e : model.params.entries)
    write_entry(w, e.name, e.tensor.shape(), e.tensor.data(), e.tensor.numel());
  for (const auto& [name, st] : model.params.stats) {
    write_entry(w, name + ".running_mean", {static_cast<int64_t>(st->mean.size())},
                st->mean.data(), static_cast<int64_t>(st->mean.size()));
    write_entry(w, name + ".running_var", {static_cast<int64_t>(st->var.size())}, st->var.data(),
                static_cast<int64_t>(st->var.size()));
  }
  if (optim) {
    for (const auto& [name, vec] : optim_entries)
      write_entry(w, name, {static_cast<int64_t>(vec->size())}, vec->data(),
                  static_cast<int64_t>(vec->size()));
    const float steps[3] = {static_cast<float>(optim->style.step_count),
                            static_cast<float>(optim->gen.step_count),
                            static_cast<float>(optim->disc.step_count)};
    write_entry(w, "optim.style.step", {1}, &steps[0], 1);
    write_entry(w, "optim.gen.step", {1}, &steps[1], 1);
    write_entry(w, "optim.disc.step", {1}, &steps[2], 1);
  }
  if (!w.f) throw IoError("write failed: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  ReaderCk r(path);
  char magic[4];
  r.bytes(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw IoError(path + ": bad checkpoint magic", 0);
  const uint16_t version = r.u16("version");
  if (version != kVersion)
    throw IoError(path + ": unsupported checkpoint version " + std::to_string(version), 4);
  const NetworkConfig cfg = parse_config_block(r.str("config block"), path);
  auto entries = read_entries(r);

  LoadedCheckpoint out;
  out.model = std::make_unique<ModelBundle<float>>(cfg);
  for (auto& e : out.model->params.entries) {
    auto it = entries.find(e.name);
    if (it == entries.end()) throw IoError(path + ": missing parameter " + e.name);
    if (it->second.shape != e.tensor.shape())
      throw IoError(path + ": shape mismatch for " + e.name);
    auto& dst = e.tensor.mutable_values();
    std::copy(it->second.data.begin(), it->second.data.end(), dst.begin());
    entries.erase(it);
  }
  for (auto& [name, st] : out.model->params.stats) {
    for (const char* suffix : {".running_mean", ".running_var"}) {
      auto it = entries.find(name + suffix);
      if (it == entries.end()) throw IoError(path + ": missing statistics " + name + suffix);
      auto& dst = std::strcmp(suffix, ".running_mean") == 0 ? st->mean : st->var;
      if (it->second.data.size() != dst.size())
        throw IoError(path + ": extent mismatch for " + name + suffix);
      std::copy(it->second.data.begin(), it->second.data.end(), dst.begin());
      entries.erase(it);
    }
  }
  if (!entries.empty() && entries.begin()->first.rfind("optim.", 0) != 0)
    throw IoError(path + ": unknown checkpoint entry " + entries.begin()->first);
  if (!entries.empty()) {
    out.optim = std::make_unique<TrainerOptimizers>(make_trainer_optimizers(*out.model));
    auto restore = [&](const std::string& prefix, auto& opt, bool second) {
      for (auto& slot : opt.slots) {
        for (int m = 0; m < (second ? 2 : 1); ++m) {
          const std::string name = prefix + "." + slot.name + (m ? ".m2" : ".m1");
          auto it = entries.find(name);
          if (it == entries.end()) throw IoError(path + ": missing optimizer entry " + name);
          auto& dst = m ? slot.m2 : slot.m1;
          if (it->second.data.size() != dst.size())
            throw IoError(path + ": extent mismatch for " + name);
          std::copy(it->second.data.begin(), it->second.data.end(), dst.begin());
          entries.erase(it);
        }
      }
      auto it = entries.find(prefix + ".step");
      if (it == entries.end()) throw IoError(path + ": missing optimizer step counter");
      opt.step_count = static_cast<int64_t>(it->second.data.at(0));
      entries.erase(it);
    };
    restore("optim.style", out.optim->style, true);
    restore("optim.gen", out.optim->gen, false);
    restore("optim.disc", out.optim->disc, false);
    if (!entries.empty())
      throw IoError(path + ": unexpected checkpoint entry " + entries.begin()->first);
  }
  return out;
}

}  // namespace dgf
