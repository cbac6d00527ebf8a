#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "foam/nn.hpp"

namespace foam::nn {

namespace {

std::string mangle(const std::string& name) {
  std::string out = name;
  for (char& c : out) {
    if (c == '.' || c == '/' || c == ' ') c = '_';
  }
  return out + ".tns";
}

}  // namespace

void save_param_dir_f32(const std::string& dir,
                        const std::vector<std::pair<std::string, Shape>>& shapes,
                        const std::vector<std::vector<float>>& payloads,
                        const std::map<std::string, std::string>& info) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["format"] = "foam-params-v1";
  manifest["info"] = info;
  auto& entries = manifest["params"] = nlohmann::json::array();
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    const auto& [name, shape] = shapes[i];
    const std::string file = mangle(name);
    save_tensor_f32(dir + "/" + file, shape, payloads[i]);
    nlohmann::json e;
    e["name"] = name;
    e["file"] = file;
    e["shape"] = shape;
    entries.push_back(std::move(e));
  }
  std::ofstream os(dir + "/manifest.json");
  if (!os) throw IoError("cannot write manifest in " + dir);
  os << manifest.dump(2) << "\n";
}

void load_param_dir_f32(const std::string& dir,
                        std::vector<std::pair<std::string, Shape>>& shapes,
                        std::vector<std::vector<float>>& payloads,
                        std::map<std::string, std::string>& info) {
  std::ifstream is(dir + "/manifest.json");
  if (!is) throw IoError("cannot read manifest in " + dir);
  nlohmann::json manifest;
  try {
    is >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed manifest in " + dir + ": " + e.what());
  }
  if (manifest.value("format", "") != "foam-params-v1") {
    throw IoError("unrecognized manifest format in " + dir);
  }
  info.clear();
  if (manifest.contains("info")) {
    for (auto& [k, v] : manifest["info"].items()) info[k] = v.get<std::string>();
  }
  shapes.clear();
  payloads.clear();
  for (const auto& e : manifest["params"]) {
    const std::string name = e.at("name").get<std::string>();
    const std::string file = e.at("file").get<std::string>();
    Shape shape;
    std::vector<float> payload;
    load_tensor_f32(dir + "/" + file, shape, payload);
    Shape declared = e.at("shape").get<Shape>();
    if (declared != shape) {
      throw IoError("manifest/tensor shape mismatch for " + name + " in " + dir);
    }
    shapes.emplace_back(name, std::move(shape));
    payloads.push_back(std::move(payload));
  }
}

}  // namespace foam::nn
