#include "deepcopy/params.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "deepcopy/corpus.hpp"

namespace deepcopy {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {
constexpr char kMagic[8] = {'D', 'C', 'P', 'K', 'P', 'T', '0', '1'};
}

ad::Tensor ParamStore::add_tensor(const std::string& name, ad::Tensor tensor) {
  if (has(name)) throw std::invalid_argument("parameter '" + name + "' already exists");
  index_.emplace(name, entries_.size());
  entries_.push_back({name, tensor});
  return tensor;
}

ad::Tensor ParamStore::add(const std::string& name, ad::Shape shape, Rng& rng, double range) {
  ad::Tensor t = ad::Tensor::zeros(std::move(shape), true);
  std::uniform_real_distribution<double> dist(-range, range);
  for (double& v : t.mutable_data()) v = dist(rng);
  return add_tensor(name, t);
}

ad::Tensor ParamStore::add_filled(const std::string& name, ad::Shape shape, double value) {
  ad::Tensor t = ad::Tensor::zeros(std::move(shape), true);
  for (double& v : t.mutable_data()) v = value;
  return add_tensor(name, t);
}

const ad::Tensor& ParamStore::get(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return entries_[it->second].tensor;
}

std::size_t ParamStore::num_values() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

ParamStore ParamStore::clone() const {
  ParamStore out;
  for (const auto& e : entries_) out.add_tensor(e.name, e.tensor.clone(true));
  return out;
}

void ParamStore::copy_values_from(const ParamStore& other) {
  for (auto& e : entries_) {
    if (!other.has(e.name)) continue;
    const ad::Tensor& src = other.get(e.name);
    if (src.shape() != e.tensor.shape()) {
      throw ad::ShapeError("copy_values_from: '" + e.name + "' has shape " + ad::shape_str(src.shape()) +
                           ", expected " + ad::shape_str(e.tensor.shape()));
    }
    std::copy(src.data().begin(), src.data().end(), e.tensor.mutable_data().begin());
  }
}

void save_checkpoint(const std::filesystem::path& path, const ParamStore& params,
                     const nlohmann::json& meta) {
  nlohmann::json manifest = {{"format", 1}, {"meta", meta}, {"params", nlohmann::json::array()}};
  std::size_t offset = 0;
  for (const auto& e : params.entries()) {
    manifest["params"].push_back(
        {{"name", e.name}, {"shape", e.tensor.shape()}, {"offset", offset}, {"count", e.tensor.size()}});
    offset += e.tensor.size();
  }
  const std::string text = manifest.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw corpus::DataError("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof kMagic);
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& e : params.entries()) {
    out.write(reinterpret_cast<const char*>(e.tensor.data().data()),
              static_cast<std::streamsize>(e.tensor.size() * sizeof(double)));
  }
  if (!out) throw corpus::DataError("write failed for checkpoint " + path.string());
}

std::pair<ParamStore, nlohmann::json> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw corpus::DataError("cannot open checkpoint " + path.string());
  char magic[8];
  std::uint64_t len = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw corpus::DataError(path.string() + ": not a checkpoint file");
  }
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw corpus::DataError(path.string() + ": bad manifest: " + e.what());
  }
  std::vector<double> payload;
  {
    std::vector<char> rest((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (rest.size() % sizeof(double) != 0) throw corpus::DataError(path.string() + ": truncated payload");
    payload.resize(rest.size() / sizeof(double));
    std::memcpy(payload.data(), rest.data(), rest.size());
  }
  ParamStore store;
  for (const auto& p : manifest.at("params")) {
    const auto offset = p.at("offset").get<std::size_t>();
    const auto count = p.at("count").get<std::size_t>();
    const auto shape = p.at("shape").get<ad::Shape>();
    if (offset + count > payload.size() || ad::shape_size(shape) != count) {
      throw corpus::DataError(path.string() + ": parameter '" + p.at("name").get<std::string>() +
                              "' does not fit the payload");
    }
    std::vector<double> values(payload.begin() + static_cast<std::ptrdiff_t>(offset),
                               payload.begin() + static_cast<std::ptrdiff_t>(offset + count));
    store.add_tensor(p.at("name").get<std::string>(), ad::Tensor::from(shape, std::move(values), true));
  }
  return {std::move(store), manifest.at("meta")};
}

}  // namespace deepcopy
