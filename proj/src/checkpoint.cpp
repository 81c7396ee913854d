#include "apd/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

using json = nlohmann::json;

namespace apd {
namespace {
constexpr char kMagic[8] = {'A', 'P', 'D', 'C', 'K', 'P', 'T', '\x01'};
}

const Matrix* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, m] : arrays)
    if (n == name) return &m;
  return nullptr;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  json header;
  header["version"] = 1;
  header["config"] = ckpt.config;
  header["meta"] = ckpt.meta;
  json dir = json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, m] : ckpt.arrays) {
    dir.push_back({{"name", name},
                   {"rows", m.rows()},
                   {"cols", m.cols()},
                   {"offset", offset}});
    offset += static_cast<std::uint64_t>(m.size()) * sizeof(double);
  }
  header["arrays"] = dir;
  const std::string hs = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out.write(kMagic, sizeof(kMagic));
  const std::uint64_t hlen = hs.size();
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const auto& [name, m] : ckpt.arrays)
    out.write(reinterpret_cast<const char*>(m.data()),
              static_cast<std::streamsize>(m.size() * sizeof(double)));
  if (!out) throw std::runtime_error("short write for checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("not a checkpoint file: " + path);
  std::uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  std::string hs(hlen, '\0');
  in.read(hs.data(), static_cast<std::streamsize>(hlen));
  const json header = json::parse(hs);
  if (header.at("version").get<int>() != 1)
    throw std::runtime_error("unsupported checkpoint version in " + path);

  Checkpoint ckpt;
  ckpt.config = header.value("config", json::object());
  ckpt.meta = header.value("meta", json::object());
  for (const auto& e : header.at("arrays")) {
    Matrix m(e.at("rows").get<long>(), e.at("cols").get<long>());
    in.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(m.size() * sizeof(double)));
    if (!in)
      throw std::runtime_error("truncated checkpoint array " +
                               e.at("name").get<std::string>() + " in " + path);
    ckpt.arrays.emplace_back(e.at("name").get<std::string>(), std::move(m));
  }
  return ckpt;
}

}  // namespace apd
