#include "stpred/stds_io.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <memory>

#include "stpred/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "STDS i/o assumes a little-endian host");

namespace stpred {

namespace {

constexpr char kMagic[4] = {'S', 'T', 'D', 'S'};
constexpr std::uint32_t kVersion = 1;

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

void write_u32(std::FILE* f, std::uint32_t v) {
  if (std::fwrite(&v, sizeof v, 1, f) != 1)
    throw IoError("STDS: short write");
}

std::uint32_t read_u32(std::FILE* f) {
  std::uint32_t v;
  if (std::fread(&v, sizeof v, 1, f) != 1)
    throw TruncatedError("STDS: truncated header");
  return v;
}

}  // namespace

void write_sequences(const std::string& path,
                     const std::vector<FrameSequence>& sequences) {
  if (sequences.empty()) throw ConfigError("STDS: nothing to write");
  const auto& first = sequences.front().data;
  for (const auto& s : sequences)
    if (!s.data.same_shape(first))
      throw DimensionError("STDS: sequences must share (T, C, H, W)");

  File f(std::fopen(path.c_str(), "wb"));
  if (!f) throw IoError("STDS: cannot open for writing: " + path);
  if (std::fwrite(kMagic, 1, 4, f.get()) != 4)
    throw IoError("STDS: short write");
  write_u32(f.get(), kVersion);
  write_u32(f.get(), std::uint32_t(sequences.size()));
  for (int d = 0; d < 4; ++d)
    write_u32(f.get(), std::uint32_t(first.dim(std::size_t(d))));
  for (const auto& s : sequences) {
    if (std::fwrite(s.data.data(), sizeof(float), s.data.size(), f.get()) !=
        s.data.size())
      throw IoError("STDS: short write");
  }
  if (std::fflush(f.get()) != 0) throw IoError("STDS: flush failed");
}

std::vector<FrameSequence> read_sequences(const std::string& path) {
  File f(std::fopen(path.c_str(), "rb"));
  if (!f) throw IoError("STDS: cannot open for reading: " + path);

  char magic[4];
  if (std::fread(magic, 1, 4, f.get()) != 4)
    throw TruncatedError("STDS: file shorter than magic");
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw BadMagicError("STDS: bad magic bytes");
  const std::uint32_t version = read_u32(f.get());
  if (version != kVersion)
    throw BadVersionError("STDS: unsupported version " +
                          std::to_string(version));

  const std::uint32_t n = read_u32(f.get());
  const std::uint32_t t = read_u32(f.get());
  const std::uint32_t c = read_u32(f.get());
  const std::uint32_t h = read_u32(f.get());
  const std::uint32_t w = read_u32(f.get());

  std::vector<FrameSequence> out;
  out.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    FrameSequence seq(t, c, h, w);
    if (std::fread(seq.data.data(), sizeof(float), seq.data.size(), f.get()) !=
        seq.data.size())
      throw TruncatedError("STDS: truncated payload");
    for (std::size_t j = 0; j < seq.data.size(); ++j)
      if (!std::isfinite(seq.data[j]))
        throw NonFiniteDataError("STDS: non-finite value in payload");
    out.push_back(std::move(seq));
  }
  return out;
}

}  // namespace stpred
