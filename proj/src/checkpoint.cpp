#include <string>

#include "probembed/binary_io.hpp"
#include "probembed/error.hpp"
#include "probembed/trainer.hpp"

namespace probembed {

namespace {
constexpr std::uint32_t kHeadFormatVersion = 1;
}

std::vector<std::uint8_t> encode_head(const UncertaintyHead& head) {
  ByteWriter w;
  w.magic("PHED");
  w.u32(kHeadFormatVersion);
  w.u32(static_cast<std::uint32_t>(head.in));
  w.u32(static_cast<std::uint32_t>(head.hidden));
  for (double v : head.w1) w.f32(static_cast<float>(v));
  for (double v : head.b1) w.f32(static_cast<float>(v));
  for (double v : head.w2) w.f32(static_cast<float>(v));
  w.f32(static_cast<float>(head.b2));
  return w.take();
}

UncertaintyHead decode_head(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (!r.magic("PHED")) throw Error(ErrorCode::BadMagic, "not a head checkpoint");
  const std::uint32_t version = r.u32();
  if (version != kHeadFormatVersion) {
    throw Error(ErrorCode::VersionMismatch,
                "checkpoint version " + std::to_string(version));
  }
  UncertaintyHead h;
  h.in = r.u32();
  h.hidden = r.u32();
  if (h.in == 0 || h.hidden == 0) {
    throw Error(ErrorCode::DimMismatch, "checkpoint has a zero dimension");
  }
  const std::uint64_t floats = std::uint64_t{h.in} * h.hidden + 2ull * h.hidden + 1;
  if (floats > r.remaining() / 4) {
    throw Error(ErrorCode::TruncatedFile, "checkpoint payload is short");
  }
  auto read_vec = [&](std::size_t n) {
    std::vector<double> v(n);
    for (auto& x : v) x = r.f32();
    return v;
  };
  h.w1 = read_vec(h.in * h.hidden);
  h.b1 = read_vec(h.hidden);
  h.w2 = read_vec(h.hidden);
  h.b2 = r.f32();
  if (r.remaining() != 0) {
    throw Error(ErrorCode::IoError, "trailing bytes after checkpoint");
  }
  return h;
}

void save_head(const UncertaintyHead& head, const std::filesystem::path& path) {
  write_file(path, encode_head(head));
}

UncertaintyHead load_head(const std::filesystem::path& path) {
  return decode_head(read_file(path));
}

}  // namespace probembed
