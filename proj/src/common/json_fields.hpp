#pragma once

// Strict JSON-object reading shared by the config parsers.

#include <cstdint>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <type_traits>

#include "json.hpp"

namespace sranet::detail {

template <typename T>
T get_as(const nlohmann::json& value, const std::string& key) {
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (!value.is_boolean()) throw std::invalid_argument("expected a boolean");
    } else if constexpr (std::is_integral_v<T>) {
      if (!value.is_number_integer() || (!value.is_number_unsigned() && value.get<std::int64_t>() < 0)) {
        throw std::invalid_argument("expected a non-negative integer");
      }
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!value.is_string()) throw std::invalid_argument("expected a string");
    } else {
      if (!value.is_number()) throw std::invalid_argument("expected a number");
    }
    return value.get<T>();
  } catch (const std::exception& e) {
    throw std::invalid_argument("config key '" + key + "': " + e.what());
  }
}

using FieldSetters = std::map<std::string, std::function<void(const nlohmann::json&, const std::string&)>>;

// Binds `key` to `field` with get_as<T>.
template <typename T>
void bind_field(FieldSetters& setters, const std::string& key, T& field) {
  setters[key] = [&field](const nlohmann::json& v, const std::string& k) { field = get_as<T>(v, k); };
}

inline void apply_fields(const nlohmann::json& j, const FieldSetters& setters, const std::string& what) {
  if (!j.is_object()) throw std::invalid_argument(what + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    const auto it = setters.find(key);
    if (it == setters.end()) throw std::invalid_argument("unknown " + what + " key '" + key + "'");
    it->second(value, key);
  }
}

}  // namespace sranet::detail
