#include "safesign/checkpoint.hpp"

#include <cstdint>
#include <fstream>
#include <stdexcept>

namespace safesign {

namespace {

constexpr char kMagic[8] = {'S', 'S', 'C', 'K', 'P', 'T', '1', '\n'};

template <typename T>
void write_pod(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

}  // namespace

const Tensor& Checkpoint::blob(const std::string& name) const {
  for (const auto& [n, t] : blobs)
    if (n == name) return t;
  throw std::runtime_error("checkpoint: missing blob " + name);
}

bool Checkpoint::has(const std::string& name) const {
  for (const auto& [n, t] : blobs)
    if (n == name) return true;
  return false;
}

void Checkpoint::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot write " + path);
  out.write(kMagic, sizeof(kMagic));
  const std::string h = header.dump();
  write_pod<uint64_t>(out, h.size());
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  write_pod<uint32_t>(out, static_cast<uint32_t>(blobs.size()));
  for (const auto& [name, t] : blobs) {
    write_pod<uint32_t>(out, static_cast<uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod<uint32_t>(out, static_cast<uint32_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) write_pod<int32_t>(out, t.dim(i));
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(t.size())));
  }
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::string(magic, 8) != std::string(kMagic, 8))
    throw std::runtime_error("checkpoint: bad magic in " + path);
  Checkpoint ck;
  const auto hlen = read_pod<uint64_t>(in);
  std::string h(hlen, '\0');
  in.read(h.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw std::runtime_error("checkpoint: truncated header in " + path);
  ck.header = nlohmann::ordered_json::parse(h);
  const auto count = read_pod<uint32_t>(in);
  for (uint32_t b = 0; b < count; ++b) {
    const auto nlen = read_pod<uint32_t>(in);
    std::string name(nlen, '\0');
    in.read(name.data(), static_cast<std::streamsize>(nlen));
    const auto rank = read_pod<uint32_t>(in);
    std::vector<int> shape;
    for (uint32_t i = 0; i < rank; ++i) shape.push_back(read_pod<int32_t>(in));
    Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(t.size())));
    if (!in) throw std::runtime_error("checkpoint: truncated blob " + name + " in " + path);
    ck.blobs.emplace_back(std::move(name), std::move(t));
  }
  return ck;
}

}  // namespace safesign
