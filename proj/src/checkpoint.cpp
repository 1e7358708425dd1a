#include "fit/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace fit {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::runtime_error(msg);
}

void put_u16(std::string& s, std::uint16_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>((v >> 8) & 0xff));
}
void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_f32(std::string& s, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(s, bits);
}

}  // namespace

void save_checkpoint(const std::string& path,
                     const std::map<std::string, Tensor>& sections) {
  std::string out;
  out += "FITC";
  put_u16(out, 1);
  put_u32(out, static_cast<std::uint32_t>(sections.size()));
  for (const auto& [name, t] : sections) {
    require(name.size() < 65536, "checkpoint: section name too long");
    put_u16(out, static_cast<std::uint16_t>(name.size()));
    out += name;
    out.push_back(static_cast<char>(t.rank()));
    for (int i = 0; i < t.rank(); ++i)
      put_u32(out, static_cast<std::uint32_t>(t.dim(i)));
    for (float v : t.values()) put_f32(out, v);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  require(f.good(), "cannot write " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  require(f.good(), "write failed for " + path);
}

std::map<std::string, Tensor> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t pos = 0;
  const auto u8 = [&]() -> std::uint32_t {
    require(pos < bytes.size(), path + ": truncated checkpoint");
    return static_cast<unsigned char>(bytes[pos++]);
  };
  const auto u16 = [&]() -> std::uint16_t {
    const std::uint32_t a = u8(), b = u8();
    return static_cast<std::uint16_t>(a | (b << 8));
  };
  const auto u32 = [&]() -> std::uint32_t {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= u8() << (8 * i);
    return v;
  };

  require(u8() == 'F' && u8() == 'I' && u8() == 'T' && u8() == 'C',
          path + ": bad magic (want FITC)");
  const std::uint16_t version = u16();
  require(version == 1, path + ": unsupported checkpoint version");
  const std::uint32_t count = u32();
  std::map<std::string, Tensor> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t name_len = u16();
    require(pos + name_len <= bytes.size(), path + ": truncated section name");
    std::string name = bytes.substr(pos, name_len);
    pos += name_len;
    const int rank = static_cast<int>(u8());
    require(rank >= 1 && rank <= 3, path + ": bad section rank");
    std::vector<int> shape;
    for (int r = 0; r < rank; ++r) shape.push_back(static_cast<int>(u32()));
    std::vector<float> values(static_cast<std::size_t>(shape_size(shape)));
    for (float& v : values) {
      const std::uint32_t bits = u32();
      std::memcpy(&v, &bits, 4);
    }
    require(out.emplace(std::move(name), Tensor::from_values(shape, std::move(values)))
                .second,
            path + ": duplicate section name");
  }
  require(pos == bytes.size(), path + ": trailing bytes");
  return out;
}

void copy_into(const std::map<std::string, Tensor>& loaded,
               std::map<std::string, Tensor> dst) {
  require(loaded.size() == dst.size(),
          "checkpoint: section count mismatch (have " + std::to_string(loaded.size()) +
              ", model wants " + std::to_string(dst.size()) + ")");
  for (auto& [name, t] : dst) {
    const auto it = loaded.find(name);
    require(it != loaded.end(), "checkpoint: missing section " + name);
    require(it->second.shape() == t.shape(), "checkpoint: shape mismatch in " + name);
    t.values() = it->second.values();
  }
}

}  // namespace fit
