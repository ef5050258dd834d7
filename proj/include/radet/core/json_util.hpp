#pragma once

#include <initializer_list>
#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "radet/core/errors.hpp"

namespace radet {

using Json = nlohmann::json;

/// Rejects keys of `j` outside `allowed`; `where` names the section in the message.
inline void require_known_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!ok.count(it.key())) throw ConfigError(where + ": unknown key '" + it.key() + "'");
}

template <class T>
void read_opt(const Json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

template <class T>
void read_req(const Json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) throw ConfigError(where + ": missing required key '" + std::string(key) + "'");
  read_opt(j, key, out, where);
}

}  // namespace radet
