#include "steerlab/io/binary.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <fmt/format.h>
#include <zlib.h>

#include "steerlab/error.hpp"

namespace steerlab::io {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

void ByteWriter::put_bytes(std::span<const std::uint8_t> bytes) {
  buf_.insert(buf_.end(), bytes.begin(), bytes.end());
}

void ByteWriter::put_magic(std::string_view magic) {
  buf_.insert(buf_.end(), magic.begin(), magic.end());
}

void ByteWriter::put_u8(std::uint8_t v) { buf_.push_back(v); }

void ByteWriter::put_u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::put_u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::put_f32(float v) { put_u32(std::bit_cast<std::uint32_t>(v)); }

void ByteWriter::put_f32s(std::span<const float> values) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(values.data());
  buf_.insert(buf_.end(), p, p + values.size_bytes());
}

void ByteReader::require(std::size_t n, std::string_view what) const {
  if (bytes_.size() - pos_ < n) {
    throw FormatError(fmt::format("truncated file: need {} bytes for {} at offset {}, have {}", n,
                                  what, pos_, bytes_.size() - pos_));
  }
}

void ByteReader::expect_magic(std::string_view magic) {
  if (bytes_.size() < magic.size() ||
      std::memcmp(bytes_.data(), magic.data(), magic.size()) != 0) {
    throw BadMagicError(fmt::format("bad magic: expected \"{}\"", magic));
  }
  pos_ = magic.size();
}

std::uint8_t ByteReader::get_u8(std::string_view what) {
  require(1, what);
  return bytes_[pos_++];
}

std::uint32_t ByteReader::get_u32(std::string_view what) {
  require(4, what);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * i);
  return v;
}

std::uint64_t ByteReader::get_u64(std::string_view what) {
  require(8, what);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_++]) << (8 * i);
  return v;
}

void ByteReader::get_f32s(std::span<float> out, std::string_view what) {
  require(out.size_bytes(), what);
  std::memcpy(out.data(), bytes_.data() + pos_, out.size_bytes());
  pos_ += out.size_bytes();
}

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  std::size_t off = 0;
  while (off < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - off, 1u << 30));
    crc = ::crc32(crc, bytes.data() + off, chunk);
    off += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(fmt::format("cannot open {} for reading", path.string()));
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(fmt::format("cannot open {} for writing", path.string()));
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError(fmt::format("write to {} failed", path.string()));
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  write_file(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

std::string read_text(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return {bytes.begin(), bytes.end()};
}

void check_header(std::string_view kind, std::string_view got_tag, std::string_view want_tag,
                  std::uint32_t got_version, std::uint32_t want_version) {
  if (got_tag != want_tag) {
    throw BadMagicError(fmt::format("bad magic: {} file has format \"{}\", expected \"{}\"", kind,
                                    got_tag, want_tag));
  }
  if (got_version != want_version) {
    throw VersionError(fmt::format("unsupported {} file version {} (expected {})", kind, got_version,
                                   want_version));
  }
}

}  // namespace steerlab::io
