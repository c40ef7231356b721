// SPDX-License-Identifier: Apache-2.0
#include "cutie/weights_io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <zlib.h>

#include "cutie/errors.hpp"

namespace cutie {

static_assert(std::endian::native == std::endian::little, "weight I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'C', 'U', 'T', 'W'};
constexpr std::uint8_t kDtypeF32 = 0;

template <typename T>
void put(std::vector<std::uint8_t> &out, T value) {
  const auto *p = reinterpret_cast<const std::uint8_t *>(&value);
  out.insert(out.end(), p, p + sizeof(T));
}

class Reader {
public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    T value;
    std::memcpy(&value, take(sizeof(T)), sizeof(T));
    return value;
  }
  const std::uint8_t *take(std::size_t n) {
    if (n > bytes_.size() - pos_) {
      throw FormatError("weight file truncated at byte " + std::to_string(pos_));
    }
    const std::uint8_t *p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::uint32_t crc_of(const std::uint8_t *data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed large buffers in chunks
  while (n > 0) {
    const uInt chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

} // namespace

std::vector<std::uint8_t> serialize_weights(const ParamRegistry &registry) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put<std::uint32_t>(out, kWeightFormatVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(registry.size()));
  for (const auto &[name, value] : registry.entries()) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put<std::uint8_t>(out, kDtypeF32);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(value.rank()));
    for (std::size_t d : value.shape()) {
      put<std::uint64_t>(out, d);
    }
    const auto *p = reinterpret_cast<const std::uint8_t *>(value.ptr());
    out.insert(out.end(), p, p + value.numel() * sizeof(float));
  }
  put<std::uint32_t>(out, crc_of(out.data(), out.size()));
  return out;
}

ParamRegistry deserialize_weights(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("not a weight file (bad magic)");
  }
  std::uint32_t stored_crc;
  std::memcpy(&stored_crc, bytes.data() + bytes.size() - 4, 4);
  if (crc_of(bytes.data(), bytes.size() - 4) != stored_crc) {
    throw FormatError("weight file CRC mismatch");
  }
  Reader in(bytes.first(bytes.size() - 4));
  in.take(4);
  const auto version = in.get<std::uint32_t>();
  if (version != kWeightFormatVersion) {
    throw FormatError("unsupported weight format version " + std::to_string(version));
  }
  const auto count = in.get<std::uint32_t>();
  ParamRegistry registry;
  std::string previous;
  for (std::uint32_t e = 0; e < count; ++e) {
    const auto name_len = in.get<std::uint32_t>();
    const auto *name_ptr = reinterpret_cast<const char *>(in.take(name_len));
    std::string name(name_ptr, name_len);
    if (e > 0 && !(previous < name)) {
      throw FormatError("weight names not unique and sorted at '" + name + "'");
    }
    const auto dtype = in.get<std::uint8_t>();
    if (dtype != kDtypeF32) {
      throw FormatError("unsupported dtype " + std::to_string(dtype) + " for '" + name + "'");
    }
    const auto rank = in.get<std::uint32_t>();
    Shape shape(rank);
    for (auto &d : shape) {
      d = static_cast<std::size_t>(in.get<std::uint64_t>());
    }
    // a zero extent anywhere makes the entry empty, so check after all dims are read
    const std::size_t budget = in.remaining() / sizeof(float);
    std::size_t numel = std::find(shape.begin(), shape.end(), 0) != shape.end() ? 0 : 1;
    for (std::size_t d : shape) {
      if (numel != 0 && d > budget / numel) {
        throw FormatError("weight entry '" + name + "' larger than file");
      }
      numel *= d;
    }
    if (numel > budget) {
      throw FormatError("weight entry '" + name + "' larger than file");
    }
    std::vector<float> values(numel);
    std::memcpy(values.data(), in.take(numel * sizeof(float)), numel * sizeof(float));
    previous = name;
    registry.add(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  if (in.remaining() != 0) {
    throw FormatError("trailing bytes after the last weight entry");
  }
  registry.freeze();
  return registry;
}

void save_weights(const ParamRegistry &registry, const std::filesystem::path &path) {
  if (!registry.frozen()) {
    throw StateError("refusing to save a registry that is not frozen");
  }
  write_file(path, serialize_weights(registry));
}

ParamRegistry load_weights(const std::filesystem::path &path) { return deserialize_weights(read_file(path)); }

std::vector<std::uint8_t> read_file(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw InputError("cannot open " + path.string());
  }
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path &path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw InputError("cannot write " + path.string());
  }
  out.write(reinterpret_cast<const char *>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw InputError("write failed for " + path.string());
  }
}

} // namespace cutie
