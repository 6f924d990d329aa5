// Copyright 2026 The vtryon Authors
// SPDX-License-Identifier: Apache-2.0

#include "vtryon/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "vtryon/error.hpp"

namespace vtryon::ckpt {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[8] = {'V', 'T', 'R', 'Y', 'C', 'K', 'P', 'T'};
constexpr std::uint8_t kF64 = 1;

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T take(std::istream& is, const std::string& what) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  require(is.good(), ErrorKind::kFormat, "truncated checkpoint while reading " + what);
  return v;
}

}  // namespace

bool Checkpoint::has(const std::string& name) const {
  for (const auto& [n, t] : arrays)
    if (n == name) return true;
  return false;
}

const Tensor& Checkpoint::get(const std::string& name) const {
  for (const auto& [n, t] : arrays)
    if (n == name) return t;
  raise(ErrorKind::kFormat, "checkpoint has no array '" + name + "'");
}

void Checkpoint::put(const std::string& name, Tensor t) {
  for (auto& [n, v] : arrays)
    if (n == name) {
      v = std::move(t);
      return;
    }
  arrays.emplace_back(name, std::move(t));
}

void save(const Checkpoint& c, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    require(os.good(), ErrorKind::kIo, "cannot write " + tmp.string());
    os.write(kMagic, sizeof kMagic);
    put<std::uint32_t>(os, kFormatVersion);
    const std::string manifest = c.manifest.dump();
    put<std::uint64_t>(os, manifest.size());
    os.write(manifest.data(), static_cast<std::streamsize>(manifest.size()));
    put<std::uint64_t>(os, c.arrays.size());
    for (const auto& [name, t] : c.arrays) {
      put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
      os.write(name.data(), static_cast<std::streamsize>(name.size()));
      put<std::uint8_t>(os, kF64);
      put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
      for (int d : t.shape()) put<std::int32_t>(os, d);
      os.write(reinterpret_cast<const char*>(t.data()),
               static_cast<std::streamsize>(t.size() * sizeof(double)));
    }
    require(os.good(), ErrorKind::kIo, "write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

Checkpoint load(const fs::path& path) {
  require(fs::exists(path), ErrorKind::kMissingCheckpoint, "no checkpoint at " + path.string());
  std::ifstream is(path, std::ios::binary);
  require(is.good(), ErrorKind::kIo, "cannot read " + path.string());
  char magic[8];
  is.read(magic, sizeof magic);
  require(is.good() && std::memcmp(magic, kMagic, sizeof kMagic) == 0, ErrorKind::kFormat,
          path.string() + " is not a checkpoint");
  const auto version = take<std::uint32_t>(is, "version");
  require(version == kFormatVersion, ErrorKind::kFormat,
          "checkpoint format version " + std::to_string(version) + " unsupported (expected " +
              std::to_string(kFormatVersion) + ")");
  Checkpoint c;
  const auto msize = take<std::uint64_t>(is, "manifest size");
  require(msize < (1ULL << 30), ErrorKind::kFormat, "implausible manifest size");
  std::string manifest(msize, '\0');
  is.read(manifest.data(), static_cast<std::streamsize>(msize));
  require(is.good(), ErrorKind::kFormat, "truncated manifest");
  try {
    c.manifest = nlohmann::ordered_json::parse(manifest);
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorKind::kFormat, std::string("bad manifest: ") + e.what());
  }
  const auto count = take<std::uint64_t>(is, "array count");
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto nsize = take<std::uint32_t>(is, "name size");
    require(nsize < 4096, ErrorKind::kFormat, "implausible array name size");
    std::string name(nsize, '\0');
    is.read(name.data(), nsize);
    const auto type = take<std::uint8_t>(is, name + " type");
    require(type == kF64, ErrorKind::kFormat, "array " + name + " has unsupported element type");
    const auto rank = take<std::uint32_t>(is, name + " rank");
    require(rank <= 8, ErrorKind::kFormat, "array " + name + " has implausible rank");
    Shape shape(rank);
    for (auto& d : shape) {
      d = take<std::int32_t>(is, name + " dims");
      require(d >= 0, ErrorKind::kFormat, "array " + name + " has a negative dimension");
    }
    Tensor t(shape);
    is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    require(is.good(), ErrorKind::kFormat, "truncated data for array " + name);
    c.arrays.emplace_back(std::move(name), std::move(t));
  }
  return c;
}

void put_params(Checkpoint& c, const nn::ParamList& params) {
  for (const auto& p : params) c.put(p.name, p.var.value());
}

void load_params(const Checkpoint& c, const nn::ParamList& params) {
  for (const auto& p : params) {
    const Tensor& t = c.get(p.name);
    ag::Var v = p.var;
    require(t.shape() == v.shape(), ErrorKind::kShapeMismatch,
            "checkpoint array " + p.name + " has shape " + shape_str(t.shape()) + ", model expects " +
                shape_str(v.shape()));
    v.mutable_value() = t;
  }
}

}  // namespace vtryon::ckpt
