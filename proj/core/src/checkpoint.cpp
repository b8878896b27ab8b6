#include "simulstream/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace simulstream {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload is little-endian; big-endian hosts are unsupported");

using nlohmann::json;

std::string checkpoint_bin_path(const std::string& manifest_path) {
  if (manifest_path.size() > 5 &&
      manifest_path.compare(manifest_path.size() - 5, 5, ".json") == 0) {
    return manifest_path.substr(0, manifest_path.size() - 5) + ".bin";
  }
  return manifest_path + ".bin";
}

void save_checkpoint(const std::string& manifest_path, const std::vector<Parameter>& params,
                     const CheckpointExtra& extra) {
  json manifest;
  manifest["format"] = kCheckpointFormat;
  manifest["dtype"] = "float64";
  json plist = json::array();
  for (const auto& p : params) {
    json e;
    e["name"] = p.name;
    e["shape"] = p.tensor.shape();
    plist.push_back(e);
  }
  manifest["params"] = plist;
  manifest["step"] = extra.step;
  if (!extra.model_config_json.empty()) {
    manifest["model_config"] = json::parse(extra.model_config_json);
  }
  if (extra.has_optimizer) {
    if (extra.adam_m.size() != params.size() || extra.adam_v.size() != params.size()) {
      throw std::invalid_argument("checkpoint: optimizer moment count does not match parameters");
    }
    json opt;
    opt["type"] = "adam";
    opt["peak_lr"] = extra.adam.peak_lr;
    opt["warmup_steps"] = extra.adam.warmup_steps;
    opt["beta1"] = extra.adam.beta1;
    opt["beta2"] = extra.adam.beta2;
    opt["eps"] = extra.adam.eps;
    manifest["optimizer"] = opt;
  }

  std::ofstream mf(manifest_path, std::ios::binary);
  if (!mf) throw std::runtime_error("cannot write checkpoint manifest: " + manifest_path);
  mf << manifest.dump(2) << "\n";
  mf.close();
  if (!mf) throw std::runtime_error("failed writing checkpoint manifest: " + manifest_path);

  std::string bin_path = checkpoint_bin_path(manifest_path);
  std::ofstream bf(bin_path, std::ios::binary);
  if (!bf) throw std::runtime_error("cannot write checkpoint payload: " + bin_path);
  auto write_block = [&](std::span<const double> v) {
    bf.write(reinterpret_cast<const char*>(v.data()),
             static_cast<std::streamsize>(v.size() * sizeof(double)));
  };
  for (const auto& p : params) write_block(p.tensor.values());
  if (extra.has_optimizer) {
    for (const auto& m : extra.adam_m) write_block(m);
    for (const auto& v : extra.adam_v) write_block(v);
  }
  bf.close();
  if (!bf) throw std::runtime_error("failed writing checkpoint payload: " + bin_path);
}

LoadedCheckpoint load_checkpoint(const std::string& manifest_path) {
  std::ifstream mf(manifest_path, std::ios::binary);
  if (!mf) throw std::runtime_error("cannot open checkpoint manifest: " + manifest_path);
  json manifest;
  try {
    mf >> manifest;
  } catch (const json::parse_error& e) {
    throw std::runtime_error("checkpoint manifest is not valid JSON (" + manifest_path +
                             "): " + e.what());
  }
  if (!manifest.contains("format") || manifest["format"] != kCheckpointFormat) {
    throw std::runtime_error("checkpoint format tag mismatch in " + manifest_path +
                             ", expected " + std::string(kCheckpointFormat));
  }
  if (manifest.value("dtype", "") != "float64") {
    throw std::runtime_error("unsupported checkpoint dtype in " + manifest_path);
  }

  LoadedCheckpoint out;
  out.extra.step = manifest.value("step", int64_t{0});
  if (manifest.contains("model_config")) {
    out.extra.model_config_json = manifest["model_config"].dump();
  }

  std::string bin_path = checkpoint_bin_path(manifest_path);
  std::ifstream bf(bin_path, std::ios::binary);
  if (!bf) throw std::runtime_error("cannot open checkpoint payload: " + bin_path);

  auto read_block = [&](size_t n, const std::string& what) {
    std::vector<double> v(n);
    bf.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (static_cast<size_t>(bf.gcount()) != n * sizeof(double)) {
      throw std::runtime_error("checkpoint payload truncated while reading " + what + " from " +
                               bin_path);
    }
    return v;
  };

  for (const auto& e : manifest.at("params")) {
    std::string name = e.at("name").get<std::string>();
    std::vector<int64_t> shape = e.at("shape").get<std::vector<int64_t>>();
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    auto vals = read_block(static_cast<size_t>(n), "parameter " + name);
    out.params.push_back({std::move(name), Tensor::from(shape, std::move(vals), true)});
  }

  if (manifest.contains("optimizer")) {
    out.extra.has_optimizer = true;
    const auto& opt = manifest["optimizer"];
    out.extra.adam.peak_lr = opt.value("peak_lr", 1e-3);
    out.extra.adam.warmup_steps = opt.value("warmup_steps", 400);
    out.extra.adam.beta1 = opt.value("beta1", 0.9);
    out.extra.adam.beta2 = opt.value("beta2", 0.98);
    out.extra.adam.eps = opt.value("eps", 1e-9);
    for (const auto& p : out.params) {
      out.extra.adam_m.push_back(read_block(p.tensor.values().size(), "adam.m of " + p.name));
    }
    for (const auto& p : out.params) {
      out.extra.adam_v.push_back(read_block(p.tensor.values().size(), "adam.v of " + p.name));
    }
  }
  return out;
}

}  // namespace simulstream
