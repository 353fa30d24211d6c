#pragma once

#include <string>

#include "json.hpp"
#include "multitab/numkit/error.hpp"

namespace multitab::data {

/// Typed access to a JSON object; failures raise ConfigError prefixed with the
/// JSON pointer of the offending field.
class JsonReader {
 public:
  JsonReader(const nlohmann::json& node, std::string pointer) : node_(&node), pointer_(std::move(pointer)) {
    if (!node.is_object()) throw ConfigError((pointer_.empty() ? "/" : pointer_) + ": expected an object");
  }

  bool has(const std::string& key) const { return node_->contains(key) && !node_->at(key).is_null(); }

  std::string pointer(const std::string& key) const { return pointer_ + "/" + key; }

  [[noreturn]] void fail(const std::string& key, const std::string& message) const {
    throw ConfigError(pointer(key) + ": " + message);
  }

  template <class T>
  T required(const std::string& key) const {
    if (!has(key)) fail(key, "required field is missing");
    return convert<T>(key);
  }

  template <class T>
  T optional(const std::string& key, T fallback) const {
    return has(key) ? convert<T>(key) : fallback;
  }

  JsonReader child(const std::string& key) const {
    if (!has(key)) fail(key, "required object is missing");
    return JsonReader(node_->at(key), pointer(key));
  }

  const nlohmann::json& at(const std::string& key) const {
    if (!has(key)) fail(key, "required field is missing");
    return node_->at(key);
  }

  const nlohmann::json& raw() const { return *node_; }
  const std::string& path() const { return pointer_; }

 private:
  template <class T>
  T convert(const std::string& key) const {
    try {
      return node_->at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      fail(key, std::string("wrong type (") + e.what() + ")");
    }
  }

  const nlohmann::json* node_;
  std::string pointer_;
};

}  // namespace multitab::data
