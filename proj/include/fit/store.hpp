#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace fit {

struct ItemRecord {
  std::uint64_t id = 0;
  std::uint16_t s = 0;       // hard-query index
  std::vector<float> z;      // hv * p values, heads back to back
};

/// Flat binary item store ("FITS"): header (magic, version u16, item count
/// u32, hv u16, p u32, n_meta u32, checksum u64), then fixed-width records
/// of (id u64, s u16, z f32 * hv*p), all little-endian. The checksum is
/// FNV-1a over the record bytes and is verified on load.
class ItemStore {
 public:
  static void write(const std::string& path, const std::vector<ItemRecord>& records,
                    int hv, int p, int n_meta);
  static ItemStore load(const std::string& path);

  const ItemRecord* find(std::uint64_t id) const;
  std::size_t size() const { return records.size(); }

  int hv = 0;
  int p = 0;
  int n_meta = 0;
  std::vector<ItemRecord> records;

 private:
  std::unordered_map<std::uint64_t, std::size_t> index_;
};

}  // namespace fit
