#pragma once

#include <json.hpp>

#include <string>
#include <utility>
#include <vector>

#include "safesign/tensor.hpp"

namespace safesign {

// Self-describing model container: a JSON header (architecture descriptor,
// class names, config fingerprint, frozen flag, ...) followed by named raw
// little-endian double blobs.
struct Checkpoint {
  nlohmann::ordered_json header;
  std::vector<std::pair<std::string, Tensor>> blobs;

  void add(const std::string& name, const Tensor& t) { blobs.emplace_back(name, t); }
  const Tensor& blob(const std::string& name) const;
  bool has(const std::string& name) const;

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);
};

}  // namespace safesign
