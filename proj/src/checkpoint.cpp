#include "pass/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace pass {

namespace {

constexpr char kMagic[8] = {'P', 'A', 'S', 'S', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

void put_u32(std::ostream& os, uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), 4);
}

uint32_t get_u32(std::istream& is) {
  uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  if (!is) throw ContractError("truncated checkpoint");
  return v;
}

}  // namespace

void save_params(const ParamStore& params, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ContractError("cannot write checkpoint: " + path);
  os.write(kMagic, 8);
  put_u32(os, kVersion);
  put_u32(os, (uint32_t)params.params.size());
  for (const auto& [name, t] : params.params) {
    put_u32(os, (uint32_t)name.size());
    os.write(name.data(), (std::streamsize)name.size());
    put_u32(os, (uint32_t)t.rank());
    for (int i = 0; i < t.rank(); ++i) put_u32(os, (uint32_t)t.dim(i));
    os.write(reinterpret_cast<const char*>(t.data().data()),
             (std::streamsize)(t.size() * sizeof(float)));
  }
  if (!os) throw ContractError("write failure on checkpoint: " + path);
}

ParamStore load_params(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ContractError("cannot open checkpoint: " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0)
    throw ContractError("not a checkpoint file: " + path);
  const uint32_t version = get_u32(is);
  if (version != kVersion)
    throw ContractError("unsupported checkpoint version " + std::to_string(version));
  const uint32_t count = get_u32(is);
  ParamStore ps;
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t name_len = get_u32(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const uint32_t rank = get_u32(is);
    Shape shape(rank);
    for (uint32_t d = 0; d < rank; ++d) shape[d] = (int)get_u32(is);
    std::vector<float> data((size_t)numel(shape));
    is.read(reinterpret_cast<char*>(data.data()),
            (std::streamsize)(data.size() * sizeof(float)));
    if (!is) throw ContractError("truncated checkpoint: " + path);
    ps.add(name, Tensor(std::move(shape), std::move(data), true));
  }
  return ps;
}

void load_params_into(ParamStore& params, const std::string& path) {
  ParamStore loaded = load_params(path);
  if (loaded.params.size() != params.params.size())
    throw ContractError("checkpoint parameter count mismatch: " + path);
  for (auto& [name, t] : params.params) {
    const Tensor& src = loaded.at(name);
    if (src.shape() != t.shape())
      throw ContractError("checkpoint shape mismatch for " + name + ": " +
                          shape_str(src.shape()) + " vs " + shape_str(t.shape()));
    t.data() = src.data();
    t.zero_grad();
  }
}

uint64_t file_hash(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ContractError("cannot open file for hashing: " + path);
  uint64_t h = 1469598103934665603ull;
  char buf[4096];
  while (is) {
    is.read(buf, sizeof buf);
    const std::streamsize n = is.gcount();
    for (std::streamsize i = 0; i < n; ++i) {
      h ^= (uint8_t)buf[i];
      h *= 1099511628211ull;
    }
  }
  return h;
}

}  // namespace pass
