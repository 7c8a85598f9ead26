#include "ecmvae/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

namespace ecmvae {

using nlohmann::json;

static constexpr char kMagic[8] = {'E', 'C', 'M', 'V', 'C', 'K', 'P', '1'};

void write_f64_le(std::ostream& os, const double* p, size_t n) {
  static_assert(sizeof(double) == 8);
  // x86/arm little-endian hosts: raw dump is already LE
  os.write(reinterpret_cast<const char*>(p), std::streamsize(n * 8));
}

void read_f64_le(std::istream& is, double* p, size_t n) {
  is.read(reinterpret_cast<char*>(p), std::streamsize(n * 8));
  if (size_t(is.gcount()) != n * 8) throw IoError("truncated f64 array");
}

void save_checkpoint(const std::string& base_path, const ParamStore& store, const Adam* adam,
                     const std::string& config_json) {
  std::ofstream bin(base_path + ".bin", std::ios::binary);
  if (!bin) throw IoError("cannot open " + base_path + ".bin for writing");
  bin.write(kMagic, 8);

  json manifest;
  manifest["format"] = "ecmvae-checkpoint";
  manifest["version"] = 1;
  if (!config_json.empty()) manifest["config"] = json::parse(config_json);

  uint64_t offset = 8;
  json params = json::array();
  for (const auto& [name, e] : store.entries()) {
    json p;
    p["name"] = name;
    p["shape"] = e.value.shape;
    p["offset"] = offset;
    p["count"] = e.value.numel();
    params.push_back(p);
    write_f64_le(bin, e.value.data.data(), e.value.data.size());
    offset += uint64_t(e.value.numel()) * 8;
  }
  manifest["params"] = params;

  if (adam) {
    json opt;
    opt["type"] = "adam";
    opt["step"] = adam->step_count();
    opt["lr"] = adam->config().lr;
    opt["beta1"] = adam->config().beta1;
    opt["beta2"] = adam->config().beta2;
    opt["eps"] = adam->config().eps;
    json moments = json::array();
    Adam& a = const_cast<Adam&>(*adam);
    for (const auto& [name, e] : store.entries()) {
      if (!a.m().count(name)) continue;
      json mo;
      mo["name"] = name;
      mo["offset"] = offset;
      mo["count"] = e.value.numel();
      moments.push_back(mo);
      write_f64_le(bin, a.m().at(name).data.data(), a.m().at(name).data.size());
      offset += uint64_t(e.value.numel()) * 8;
      write_f64_le(bin, a.v().at(name).data.data(), a.v().at(name).data.size());
      offset += uint64_t(e.value.numel()) * 8;
    }
    opt["moments"] = moments;
    manifest["optimizer"] = opt;
  }
  bin.flush();
  if (!bin) throw IoError("write failure on " + base_path + ".bin");

  std::ofstream mf(base_path + ".json");
  if (!mf) throw IoError("cannot open " + base_path + ".json for writing");
  mf << manifest.dump(2) << "\n";
  if (!mf) throw IoError("write failure on " + base_path + ".json");
}

void load_checkpoint(const std::string& base_path, ParamStore& store, Adam* adam,
                     std::string* config_json) {
  std::ifstream mf(base_path + ".json");
  if (!mf) throw IoError("cannot open " + base_path + ".json");
  json manifest = json::parse(mf, nullptr, /*allow_exceptions=*/true);
  if (manifest.value("format", "") != "ecmvae-checkpoint" || manifest.value("version", 0) != 1)
    throw IoError("checkpoint version mismatch in " + base_path + ".json");

  std::ifstream bin(base_path + ".bin", std::ios::binary);
  if (!bin) throw IoError("cannot open " + base_path + ".bin");
  char magic[8];
  bin.read(magic, 8);
  if (bin.gcount() != 8 || std::memcmp(magic, kMagic, 8) != 0)
    throw IoError("checkpoint version mismatch: bad magic in " + base_path + ".bin");

  for (const auto& p : manifest.at("params")) {
    const std::string name = p.at("name");
    std::vector<int64_t> shape = p.at("shape").get<std::vector<int64_t>>();
    Tensor t(shape);
    bin.seekg(std::streamoff(p.at("offset").get<uint64_t>()));
    read_f64_le(bin, t.data.data(), t.data.size());
    if (store.has(name)) {
      if (store.value(name).shape != shape)
        throw IoError("checkpoint/param shape mismatch for '" + name + "'");
      store.value(name) = std::move(t);
    } else {
      store.add(name, std::move(t));
    }
  }

  if (adam && manifest.contains("optimizer")) {
    const auto& opt = manifest.at("optimizer");
    adam->config().lr = opt.at("lr");
    adam->config().beta1 = opt.at("beta1");
    adam->config().beta2 = opt.at("beta2");
    adam->config().eps = opt.at("eps");
    adam->set_step_count(opt.at("step"));
    for (const auto& mo : opt.at("moments")) {
      const std::string name = mo.at("name");
      const Tensor& ref = store.value(name);
      Tensor m(ref.shape), v(ref.shape);
      bin.seekg(std::streamoff(mo.at("offset").get<uint64_t>()));
      read_f64_le(bin, m.data.data(), m.data.size());
      read_f64_le(bin, v.data.data(), v.data.size());
      adam->m()[name] = std::move(m);
      adam->v()[name] = std::move(v);
    }
  }

  if (config_json) {
    *config_json = manifest.contains("config") ? manifest.at("config").dump() : std::string();
  }
}

}  // namespace ecmvae
