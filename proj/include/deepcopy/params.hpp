// Named parameter storage and the on-disk checkpoint container.
#pragma once

#include <cstddef>
#include <filesystem>
#include <random>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "deepcopy/ad.hpp"

namespace deepcopy {

using Rng = std::mt19937_64;

/// Ordered name -> leaf tensor map. Copies share the underlying tensors; use
/// clone() for an independent copy.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    ad::Tensor tensor;
  };

  /// Adds a parameter initialised uniformly in [-range, range].
  ad::Tensor add(const std::string& name, ad::Shape shape, Rng& rng, double range);
  ad::Tensor add_filled(const std::string& name, ad::Shape shape, double value);
  ad::Tensor add_tensor(const std::string& name, ad::Tensor tensor);

  bool has(const std::string& name) const { return index_.count(name) > 0; }
  const ad::Tensor& get(const std::string& name) const;
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t num_values() const;

  void zero_grad();
  ParamStore clone() const;
  /// Copies values of every parameter present in both stores.
  void copy_values_from(const ParamStore& other);

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Checkpoint container (little-endian):
//   bytes 0..7   magic "DCPKPT01"
//   bytes 8..15  u64 manifest length L
//   next L bytes UTF-8 JSON manifest:
//                {"format":1, "meta":{...}, "params":[{"name","shape","offset","count"}]}
//   remainder    f64 payload; "offset"/"count" are in f64 elements.
void save_checkpoint(const std::filesystem::path& path, const ParamStore& params,
                     const nlohmann::json& meta);
std::pair<ParamStore, nlohmann::json> load_checkpoint(const std::filesystem::path& path);

}  // namespace deepcopy
