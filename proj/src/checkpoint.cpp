#include "stpred/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <map>
#include <memory>

#include "stpred/errors.hpp"

namespace stpred {

namespace {

constexpr char kMagic[4] = {'S', 'T', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

template <typename T>
void write_pod(std::FILE* f, const T& v) {
  if (std::fwrite(&v, sizeof v, 1, f) != 1)
    throw IoError("STCK: short write");
}

template <typename T>
T read_pod(std::FILE* f) {
  T v;
  if (std::fread(&v, sizeof v, 1, f) != 1)
    throw TruncatedError("STCK: truncated file");
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, std::uint64_t digest,
                     ModelParams<float>& params, int epoch) {
  File f(std::fopen(path.c_str(), "wb"));
  if (!f) throw IoError("STCK: cannot open for writing: " + path);
  if (std::fwrite(kMagic, 1, 4, f.get()) != 4)
    throw IoError("STCK: short write");
  write_pod(f.get(), kVersion);
  write_pod(f.get(), digest);
  write_pod(f.get(), std::uint32_t(epoch));

  const auto named = collect_params(params);
  write_pod(f.get(), std::uint32_t(named.size()));
  for (const auto& [name, arr] : named) {
    write_pod(f.get(), std::uint32_t(name.size()));
    if (std::fwrite(name.data(), 1, name.size(), f.get()) != name.size())
      throw IoError("STCK: short write");
    const auto& shape = arr->value.shape();
    write_pod(f.get(), std::uint32_t(shape.size()));
    for (std::size_t d : shape) write_pod(f.get(), std::uint32_t(d));
    if (std::fwrite(arr->value.data(), sizeof(float), arr->value.size(),
                    f.get()) != arr->value.size())
      throw IoError("STCK: short write");
  }
  if (std::fflush(f.get()) != 0) throw IoError("STCK: flush failed");
}

int load_checkpoint(const std::string& path, std::uint64_t digest,
                    ModelParams<float>& params) {
  File f(std::fopen(path.c_str(), "rb"));
  if (!f) throw IoError("STCK: cannot open for reading: " + path);
  char magic[4];
  if (std::fread(magic, 1, 4, f.get()) != 4)
    throw TruncatedError("STCK: file shorter than magic");
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw BadMagicError("STCK: bad magic bytes");
  const auto version = read_pod<std::uint32_t>(f.get());
  if (version != kVersion)
    throw BadVersionError("STCK: unsupported version " +
                          std::to_string(version));
  const auto stored_digest = read_pod<std::uint64_t>(f.get());
  if (stored_digest != digest)
    throw DigestMismatchError(
        "STCK: checkpoint was written under a different configuration");
  const int epoch = int(read_pod<std::uint32_t>(f.get()));

  std::map<std::string, DiffArray<float>*> by_name;
  for (auto& [name, arr] : collect_params(params)) by_name[name] = arr;

  const auto count = read_pod<std::uint32_t>(f.get());
  if (count != by_name.size())
    throw FormatError("STCK: tensor count does not match the model");
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = read_pod<std::uint32_t>(f.get());
    std::string name(name_len, '\0');
    if (std::fread(name.data(), 1, name_len, f.get()) != name_len)
      throw TruncatedError("STCK: truncated tensor name");
    const auto it = by_name.find(name);
    if (it == by_name.end())
      throw FormatError("STCK: unknown tensor '" + name + "'");
    const auto rank = read_pod<std::uint32_t>(f.get());
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = read_pod<std::uint32_t>(f.get());
    if (shape != it->second->value.shape())
      throw FormatError("STCK: shape mismatch for tensor '" + name + "'");
    if (std::fread(it->second->value.data(), sizeof(float),
                   it->second->value.size(),
                   f.get()) != it->second->value.size())
      throw TruncatedError("STCK: truncated tensor data");
    for (std::size_t j = 0; j < it->second->value.size(); ++j)
      if (!std::isfinite(it->second->value[j]))
        throw NonFiniteDataError("STCK: non-finite value in tensor '" + name +
                                 "'");
  }
  return epoch;
}

}  // namespace stpred
