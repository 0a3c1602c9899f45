#include "posmed/nn/param_io.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <fstream>

#include "posmed/corpus.hpp"
#include "posmed/error.hpp"

namespace posmed::nn {
namespace {

static_assert(std::endian::native == std::endian::little, "parameter files assume a little-endian host");

std::filesystem::path with_suffix(const std::filesystem::path& prefix, const char* suffix) {
  return std::filesystem::path(prefix.string() + suffix);
}

}  // namespace

void save_tensors(const std::filesystem::path& prefix, const NamedTensors& tensors) {
  nlohmann::ordered_json manifest = {{"dtype", "float64-le"}, {"tensors", nlohmann::ordered_json::array()}};
  std::string blob;
  std::size_t offset = 0;
  for (const auto& [name, t] : tensors) {
    manifest["tensors"].push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    blob.append(reinterpret_cast<const char*>(t.data().data()), t.size() * sizeof(double));
    offset += t.size();
  }
  write_file_atomic(with_suffix(prefix, ".bin"), blob);
  write_file_atomic(with_suffix(prefix, ".json"), manifest.dump(2) + "\n");
}

NamedTensors load_tensors(const std::filesystem::path& prefix) {
  const std::string blob = read_file(with_suffix(prefix, ".bin"));
  NamedTensors out;
  try {
    const auto manifest = nlohmann::json::parse(read_file(with_suffix(prefix, ".json")));
    if (manifest.at("dtype") != "float64-le") throw DataError("unsupported dtype " + manifest.at("dtype").dump());
    for (const auto& entry : manifest.at("tensors")) {
      Shape shape = entry.at("shape").get<Shape>();
      const std::size_t offset = entry.at("offset").get<std::size_t>();
      const std::size_t n = shape_numel(shape);
      if ((offset + n) * sizeof(double) > blob.size()) {
        throw DataError("tensor '" + entry.at("name").get<std::string>() + "' runs past the end of the data file");
      }
      std::vector<double> data(n);
      std::memcpy(data.data(), blob.data() + offset * sizeof(double), n * sizeof(double));
      out.emplace_back(entry.at("name").get<std::string>(), Tensor(std::move(shape), std::move(data)));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed parameter manifest '" + with_suffix(prefix, ".json").string() + "': " + e.what());
  }
  return out;
}

NamedTensors collect(const FusionParams& fusion, const MaskHeadParams* head) {
  NamedTensors out;
  fusion.visit([&](const std::string& name, const Tensor& t) { out.emplace_back("fusion." + name, t); });
  if (head) head->visit([&](const std::string& name, const Tensor& t) { out.emplace_back("mask_head." + name, t); });
  return out;
}

void assign(const NamedTensors& tensors, FusionParams& fusion, MaskHeadParams* head) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : tensors) by_name[name] = &t;
  auto take = [&](const std::string& name, Tensor& dst) {
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw DataError("parameter file lacks tensor '" + name + "'");
    if (it->second->shape() != dst.shape()) {
      throw DataError("tensor '" + name + "' has shape " + shape_string(it->second->shape()) + ", expected " +
                      shape_string(dst.shape()));
    }
    dst = *it->second;
  };
  fusion.visit([&](const std::string& name, Tensor& t) { take("fusion." + name, t); });
  if (head) head->visit([&](const std::string& name, Tensor& t) { take("mask_head." + name, t); });
}

}  // namespace posmed::nn
