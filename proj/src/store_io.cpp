#include "probembed/store_io.hpp"

#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

#include "probembed/binary_io.hpp"
#include "probembed/error.hpp"

namespace probembed {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorCode::IoError, "cannot open " + path.string());
  }
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path,
                std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw Error(ErrorCode::IoError, "cannot write " + path.string());
  }
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw Error(ErrorCode::IoError, "short write to " + path.string());
  }
}

std::vector<std::uint8_t> encode_store(const EmbeddingStore& store) {
  ByteWriter w;
  w.magic("PEMB");
  w.u32(kStoreFormatVersion);
  w.u32(static_cast<std::uint32_t>(store.dim()));
  w.u64(store.size());
  w.u8(static_cast<std::uint8_t>(store.sigma_mode()));
  w.zeros(7);
  for (const auto& rec : store.records()) {
    w.i64(rec.label);
    for (double x : rec.embedding.mu()) w.f32(static_cast<float>(x));
    for (double s : rec.embedding.sigma2()) w.f32(static_cast<float>(s));
  }
  return w.take();
}

EmbeddingStore decode_store(std::span<const std::uint8_t> bytes,
                            std::optional<std::size_t> expected_dim) {
  ByteReader r(bytes);
  if (!r.magic("PEMB")) {
    throw Error(ErrorCode::BadMagic, "not a .pemb file");
  }
  const std::uint32_t version = r.u32();
  if (version != kStoreFormatVersion) {
    throw Error(ErrorCode::VersionMismatch,
                "version " + std::to_string(version) + ", expected " +
                    std::to_string(kStoreFormatVersion));
  }
  const std::uint32_t dim = r.u32();
  const std::uint64_t count = r.u64();
  const std::uint8_t mode_byte = r.u8();
  r.skip(7);
  if (dim == 0 || (expected_dim && *expected_dim != dim)) {
    throw Error(ErrorCode::DimMismatch,
                "file dim " + std::to_string(dim) +
                    (expected_dim ? ", expected " + std::to_string(*expected_dim)
                                  : std::string()));
  }
  if (mode_byte > 1) {
    throw Error(ErrorCode::IoError,
                "invalid sigma mode byte " + std::to_string(mode_byte));
  }
  const auto mode = static_cast<SigmaMode>(mode_byte);
  const std::size_t n_sigma = mode == SigmaMode::Scalar ? 1 : dim;
  const std::uint64_t record_bytes = 8 + 4ull * (dim + n_sigma);
  if (count > r.remaining() / record_bytes) {
    throw Error(ErrorCode::TruncatedFile,
                std::to_string(count) + " records declared, " +
                    std::to_string(r.remaining()) + " payload bytes present");
  }

  EmbeddingStore store(dim, mode);
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::int64_t label = r.i64();
    std::vector<double> mu(dim);
    for (auto& x : mu) x = r.f32();
    std::vector<double> sigma2(n_sigma);
    for (auto& s : sigma2) {
      s = r.f32();
      if (!(s > 0.0) || !std::isfinite(s)) {
        throw Error(ErrorCode::NonPositiveSigma,
                    "record " + std::to_string(i) + " has variance " +
                        std::to_string(s));
      }
    }
    // Stored means are already unit-norm to f32 precision; renormalizing
    // here would break byte-identical re-saves.
    store.add(ProbEmbedding::from_raw(std::move(mu), std::move(sigma2), mode),
              label);
  }
  if (r.remaining() != 0) {
    throw Error(ErrorCode::IoError,
                std::to_string(r.remaining()) + " trailing bytes after records");
  }
  return store;
}

void save_store(const EmbeddingStore& store, const std::filesystem::path& path) {
  write_file(path, encode_store(store));
}

EmbeddingStore load_store(const std::filesystem::path& path,
                          std::optional<std::size_t> expected_dim) {
  return decode_store(read_file(path), expected_dim);
}

}  // namespace probembed
