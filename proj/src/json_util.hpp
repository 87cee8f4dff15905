#pragma once

#include "json.hpp"

namespace fedgs {

// Non-negative integer, whether nlohmann stored it signed or unsigned.
inline bool is_count(const nlohmann::json& v) {
  return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
}

}  // namespace fedgs
