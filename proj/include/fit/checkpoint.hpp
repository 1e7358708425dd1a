#pragma once

#include <map>
#include <string>

#include "fit/tensor.hpp"

namespace fit {

/// Checkpoint file: magic "FITC", version u16, section count u32, then per
/// section: name (u16 length + bytes), rank u8, dims u32 each, values f32
/// row-major. Everything little-endian.
void save_checkpoint(const std::string& path, const std::map<std::string, Tensor>& sections);

std::map<std::string, Tensor> load_checkpoint(const std::string& path);

/// Copies loaded sections into `dst` by name; the name sets and shapes must
/// match exactly.
void copy_into(const std::map<std::string, Tensor>& loaded,
               std::map<std::string, Tensor> dst);

}  // namespace fit
