#include "cubecast/checkpoint.hpp"

#include <fstream>
#include <stdexcept>
#include <vector>

#include <json.hpp>

namespace cubecast {

namespace {

constexpr const char* kMagic = "STCK1";

std::runtime_error fail(const std::string& path, const std::string& msg) {
  return std::runtime_error("checkpoint " + path + ": " + msg);
}

}  // namespace

template <typename T>
void save_checkpoint(const Model<T>& m, const std::string& path) {
  nlohmann::json meta;
  meta["magic"] = kMagic;
  meta["version"] = 1;
  meta["config"] = nlohmann::json::parse(model_config_to_json(m.cfg));
  meta["config_hash"] = config_hash(m.cfg);
  meta["params"] = nlohmann::json::array();
  for (size_t i = 0; i < m.ps.size(); ++i) {
    const auto& [name, t] = m.ps.item(i);
    meta["params"].push_back({{"name", name}, {"shape", t.shape()}});
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw fail(path, "cannot open for writing");
  out << meta.dump() << '\n';
  std::vector<float> block;
  for (size_t i = 0; i < m.ps.size(); ++i) {
    const TensorT<T>& t = m.ps.item(i).second;
    block.resize(static_cast<size_t>(t.size()));
    for (int64_t k = 0; k < t.size(); ++k) block[k] = static_cast<float>(t.data()[k]);
    out.write(reinterpret_cast<const char*>(block.data()),
              static_cast<std::streamsize>(block.size() * sizeof(float)));
  }
  if (!out) throw fail(path, "write failed");
}

template <typename T>
Model<T> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw fail(path, "cannot open");
  std::string header;
  if (!std::getline(in, header)) throw fail(path, "missing metadata line");

  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(header);
  } catch (const std::exception& e) {
    throw fail(path, std::string("metadata parse error: ") + e.what());
  }
  if (meta.value("magic", std::string()) != kMagic) throw fail(path, "bad magic");
  if (meta.value("version", 0) != 1)
    throw fail(path, "unsupported version " + std::to_string(meta.value("version", 0)));

  Model<T> m = build_model<T>(model_config_from_json(meta.at("config").dump()));
  if (meta.contains("config_hash") && meta["config_hash"].get<uint64_t>() != config_hash(m.cfg))
    throw fail(path, "config hash mismatch");

  const auto& manifest = meta.at("params");
  if (manifest.size() != m.ps.size())
    throw fail(path, "manifest lists " + std::to_string(manifest.size()) + " parameters, model has " +
                         std::to_string(m.ps.size()));
  std::vector<float> block;
  for (size_t i = 0; i < m.ps.size(); ++i) {
    const std::string name = manifest[i].at("name").get<std::string>();
    const Shape shape = manifest[i].at("shape").get<Shape>();
    const auto& [want_name, stored] = m.ps.item(i);
    if (name != want_name)
      throw fail(path, "manifest entry " + std::to_string(i) + " is '" + name + "', expected '" +
                           want_name + "'");
    if (shape != stored.shape())
      throw fail(path, "parameter '" + name + "' has shape " + shape_str(shape) + ", expected " +
                           shape_str(stored.shape()));
    TensorT<T>& t = m.ps.at(name);
    block.resize(static_cast<size_t>(t.size()));
    in.read(reinterpret_cast<char*>(block.data()),
            static_cast<std::streamsize>(block.size() * sizeof(float)));
    if (in.gcount() != static_cast<std::streamsize>(block.size() * sizeof(float)))
      throw fail(path, "payload truncated at parameter '" + name + "'");
    for (int64_t k = 0; k < t.size(); ++k) t.data()[k] = static_cast<T>(block[k]);
  }
  if (in.peek() != std::char_traits<char>::eof()) throw fail(path, "trailing bytes after payload");
  return m;
}

template void save_checkpoint(const Model<float>&, const std::string&);
template void save_checkpoint(const Model<double>&, const std::string&);
template Model<float> load_checkpoint(const std::string&);
template Model<double> load_checkpoint(const std::string&);

}  // namespace cubecast
