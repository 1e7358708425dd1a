#include "fit/store.hpp"

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
void put_u64(std::string& s, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

void ItemStore::write(const std::string& path, const std::vector<ItemRecord>& records,
                      int hv, int p, int n_meta) {
  require(hv > 0 && p > 0 && n_meta >= 1, "item store: bad header sizes");
  const std::size_t width = static_cast<std::size_t>(hv) * static_cast<std::size_t>(p);
  std::string body;
  for (const ItemRecord& r : records) {
    require(r.z.size() == width, "item store: record width mismatch");
    require(static_cast<int>(r.s) < n_meta, "item store: query index out of range");
    put_u64(body, r.id);
    put_u16(body, r.s);
    for (float v : r.z) {
      std::uint32_t bits;
      std::memcpy(&bits, &v, 4);
      put_u32(body, bits);
    }
  }
  std::string out;
  out += "FITS";
  put_u16(out, 1);
  put_u32(out, static_cast<std::uint32_t>(records.size()));
  put_u16(out, static_cast<std::uint16_t>(hv));
  put_u32(out, static_cast<std::uint32_t>(p));
  put_u32(out, static_cast<std::uint32_t>(n_meta));
  put_u64(out, fnv1a(body));
  out += body;

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  require(f.good(), "cannot write " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  require(f.good(), "write failed for " + path);
}

ItemStore ItemStore::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t pos = 0;
  const auto u8 = [&]() -> std::uint64_t {
    require(pos < bytes.size(), path + ": truncated store");
    return static_cast<unsigned char>(bytes[pos++]);
  };
  const auto u16 = [&]() -> std::uint16_t {
    const std::uint64_t a = u8(), b = u8();
    return static_cast<std::uint16_t>(a | (b << 8));
  };
  const auto u32 = [&]() -> std::uint32_t {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
    return v;
  };
  const auto u64 = [&]() -> std::uint64_t {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= u8() << (8 * i);
    return v;
  };

  require(u8() == 'F' && u8() == 'I' && u8() == 'T' && u8() == 'S',
          path + ": bad magic (want FITS)");
  require(u16() == 1, path + ": unsupported store version");
  const std::uint32_t count = u32();
  ItemStore store;
  store.hv = u16();
  store.p = static_cast<int>(u32());
  store.n_meta = static_cast<int>(u32());
  const std::uint64_t checksum = u64();
  require(fnv1a(bytes.substr(pos)) == checksum, path + ": checksum mismatch");

  const std::size_t width =
      static_cast<std::size_t>(store.hv) * static_cast<std::size_t>(store.p);
  store.records.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    ItemRecord r;
    r.id = u64();
    r.s = u16();
    r.z.resize(width);
    for (float& v : r.z) {
      const std::uint32_t bits = u32();
      std::memcpy(&v, &bits, 4);
    }
    store.index_.emplace(r.id, store.records.size());
    store.records.push_back(std::move(r));
  }
  require(pos == bytes.size(), path + ": trailing bytes");
  return store;
}

const ItemRecord* ItemStore::find(std::uint64_t id) const {
  const auto it = index_.find(id);
  return it == index_.end() ? nullptr : &records[it->second];
}

}  // namespace fit
