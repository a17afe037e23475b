#include "daml/checkpoint.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace daml {

namespace {

constexpr std::array<char, 8> kMagic = {'D', 'A', 'M', 'L', 'C', 'K', 'P', '1'};

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
}

void write_u64(std::ostream& os, std::uint64_t v) {
  v = to_little(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw CheckpointError("truncated checkpoint header");
  return to_little(v);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ParameterSet<float>& params,
                     const nlohmann::json& manifest) {
  nlohmann::json m = manifest;
  m["tensors"] = nlohmann::json::array();
  for (std::size_t i = 0; i < params.size(); ++i) {
    m["tensors"].push_back({{"name", params.name(i)}, {"rows", params[i].rows()}, {"cols", params[i].cols()}});
  }
  const std::string text = m.dump();

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CheckpointError("cannot open " + path.string() + " for writing");
  os.write(kMagic.data(), kMagic.size());
  write_u64(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& v = params[i];
    for (Index k = 0; k < v.size(); ++k) {
      const auto bits = to_little(std::bit_cast<std::uint32_t>(v.data()[k]));
      os.write(reinterpret_cast<const char*>(&bits), sizeof bits);
    }
  }
  if (!os) throw CheckpointError("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open " + path.string());
  std::array<char, 8> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != kMagic) throw CheckpointError(path.string() + " is not a checkpoint file");
  const std::uint64_t len = read_u64(is);
  std::string text(len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(len));
  if (!is) throw CheckpointError("truncated checkpoint manifest");

  Checkpoint ck;
  try {
    ck.manifest = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("bad checkpoint manifest: ") + e.what());
  }
  for (const auto& t : ck.manifest.at("tensors")) {
    const Index rows = t.at("rows").get<Index>();
    const Index cols = t.at("cols").get<Index>();
    Matrix<float> v(rows, cols);
    for (Index k = 0; k < v.size(); ++k) {
      std::uint32_t bits = 0;
      is.read(reinterpret_cast<char*>(&bits), sizeof bits);
      if (!is) throw CheckpointError("truncated tensor data for " + t.at("name").get<std::string>());
      v.data()[k] = std::bit_cast<float>(to_little(bits));
    }
    ck.params.add(t.at("name").get<std::string>(), std::move(v));
  }
  return ck;
}

}  // namespace daml
