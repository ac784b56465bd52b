#pragma once

// Text/JSON codecs for config struct fields visited through for_each_field.
// Enumerations travel as their names so files stay human-editable.

#include <cerrno>
#include <charconv>
#include <cstdint>
#include <string>
#include <type_traits>

#include "json.hpp"
#include "semcsi/cqi.hpp"
#include "semcsi/error.hpp"
#include "semcsi/model.hpp"
#include "semcsi/train.hpp"

namespace semcsi::detail {

inline void parse_enum(const std::string& s, CqiMode& out) { out = cqi_mode_from_string(s); }
inline void parse_enum(const std::string& s, ModMode& out) { out = mod_mode_from_string(s); }
inline void parse_enum(const std::string& s, HardDecision& out) { out = hard_decision_from_string(s); }
inline void parse_enum(const std::string& s, Normalization& out) { out = normalization_from_string(s); }
inline void parse_enum(const std::string& s, SnrPolicy& out) { out = snr_policy_from_string(s); }
inline void parse_enum(const std::string& s, ModPass& out) { out = mod_pass_from_string(s); }

template <class T>
std::string field_to_text(const T& v) {
  if constexpr (std::is_enum_v<T>) {
    return to_string(v);
  } else if constexpr (std::is_same_v<T, bool>) {
    return v ? "true" : "false";
  } else if constexpr (std::is_same_v<T, std::string>) {
    return v;
  } else if constexpr (std::is_floating_point_v<T>) {
    // shortest text that reads back to the same double
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
  } else {
    return std::to_string(v);
  }
}

template <class T>
void field_from_text(const std::string& key, const std::string& text, T& out) {
  auto bad = [&](const char* what) {
    return ConfigError("key '" + key + "': " + what + " (got '" + text + "')");
  };
  if constexpr (std::is_enum_v<T>) {
    parse_enum(text, out);
  } else if constexpr (std::is_same_v<T, bool>) {
    if (text == "true" || text == "1")
      out = true;
    else if (text == "false" || text == "0")
      out = false;
    else
      throw bad("expected true or false");
  } else if constexpr (std::is_same_v<T, std::string>) {
    out = text;
  } else {
    T v{};
    const char* first = text.data();
    const char* last = text.data() + text.size();
    if constexpr (std::is_unsigned_v<T>)
      if (!text.empty() && text.front() == '-') throw bad("expected a non-negative integer");
    auto res = std::from_chars(first, last, v);
    if (res.ec != std::errc() || res.ptr != last) throw bad(std::is_integral_v<T> ? "expected an integer" : "expected a number");
    out = v;
  }
}

template <class T>
nlohmann::ordered_json field_to_json(const T& v) {
  if constexpr (std::is_enum_v<T>)
    return to_string(v);
  else
    return v;
}

template <class T>
void field_from_json(const std::string& key, const nlohmann::json& j, T& out) {
  try {
    if constexpr (std::is_enum_v<T>)
      parse_enum(j.get<std::string>(), out);
    else
      j.get_to(out);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("key '" + key + "': " + e.what());
  }
}

/// JSON object of every visited field.
template <class Cfg>
nlohmann::ordered_json struct_to_json(const Cfg& c) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  Cfg::for_each_field(c, [&](const char* key, const auto& field) { j[key] = field_to_json(field); });
  return j;
}

/// Fields present in `j` override the defaults of `c`.
template <class Cfg>
void struct_from_json(const nlohmann::json& j, Cfg& c) {
  Cfg::for_each_field(c, [&](const char* key, auto& field) {
    if (j.contains(key)) field_from_json(key, j.at(key), field);
  });
}

}  // namespace semcsi::detail
