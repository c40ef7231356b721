// SPDX-License-Identifier: Apache-2.0
#include "cutie/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <csetjmp>
#include <cstring>
#include <memory>
#include <sstream>
#include <string>

#include <png.h>

#include "cutie/errors.hpp"
#include "cutie/weights_io.hpp"

namespace cutie {

const Palette &mask_palette() {
  static const Palette palette = [] {
    Palette p{};
    for (int i = 0; i < 256; ++i) {
      int c = i, r = 0, g = 0, b = 0;
      for (int j = 0; j < 8; ++j) {
        r |= ((c >> 0) & 1) << (7 - j);
        g |= ((c >> 1) & 1) << (7 - j);
        b |= ((c >> 2) & 1) << (7 - j);
        c >>= 3;
      }
      p[i] = {static_cast<std::uint8_t>(r), static_cast<std::uint8_t>(g), static_cast<std::uint8_t>(b)};
    }
    return p;
  }();
  return palette;
}

namespace {

// libpng reports errors through longjmp. Everything that must survive the jump
// lives behind this heap pointer, which itself is never reassigned.
struct DecodeState {
  std::span<const std::uint8_t> input;
  std::size_t pos = 0;
  std::uint32_t width = 0, height = 0;
  int color_type = 0, bit_depth = 0;
  std::size_t channels = 0;
  std::vector<std::uint8_t> pixels;
  std::vector<png_bytep> rows;
  std::string error;
};

struct ReadHandles {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~ReadHandles() { png_destroy_read_struct(&png, info ? &info : nullptr, nullptr); }
};

void read_callback(png_structp png, png_bytep out, png_size_t n) {
  auto *state = static_cast<DecodeState *>(png_get_io_ptr(png));
  if (n > state->input.size() - state->pos) {
    png_error(png, "unexpected end of PNG data");
  }
  std::memcpy(out, state->input.data() + state->pos, n);
  state->pos += n;
}

void error_callback(png_structp png, png_const_charp msg) {
  auto *state = static_cast<DecodeState *>(png_get_error_ptr(png));
  state->error = msg;
  png_longjmp(png, 1);
}

void warning_callback(png_structp, png_const_charp) {}

enum class DecodeMode { Rgb, Labels };

std::unique_ptr<DecodeState> decode_png(std::span<const std::uint8_t> bytes, DecodeMode mode) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) {
    throw FormatError("not a PNG file");
  }
  auto state = std::make_unique<DecodeState>();
  state->input = bytes;
  DecodeState *s = state.get();
  ReadHandles h;
  h.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, s, error_callback, warning_callback);
  if (!h.png) {
    throw FormatError("libpng initialization failed");
  }
  h.info = png_create_info_struct(h.png);
  if (!h.info) {
    throw FormatError("libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(h.png))) {
    throw FormatError("corrupt PNG: " + s->error);
  }
  png_set_read_fn(h.png, s, read_callback);
  png_read_info(h.png, h.info);
  s->width = png_get_image_width(h.png, h.info);
  s->height = png_get_image_height(h.png, h.info);
  s->color_type = png_get_color_type(h.png, h.info);
  s->bit_depth = png_get_bit_depth(h.png, h.info);
  if (mode == DecodeMode::Labels) {
    if (s->color_type != PNG_COLOR_TYPE_PALETTE && s->color_type != PNG_COLOR_TYPE_GRAY) {
      return state; // caller rejects
    }
    if (s->bit_depth > 8) {
      return state;
    }
    if (s->bit_depth < 8) {
      png_set_packing(h.png); // one byte per index, values unscaled
    }
  } else {
    png_set_expand(h.png);
    png_set_strip_16(h.png);
    png_set_strip_alpha(h.png);
    png_set_gray_to_rgb(h.png);
  }
  png_read_update_info(h.png, h.info);
  s->channels = png_get_channels(h.png, h.info);
  const std::size_t rowbytes = png_get_rowbytes(h.png, h.info);
  s->pixels.resize(rowbytes * s->height);
  s->rows.resize(s->height);
  for (std::uint32_t y = 0; y < s->height; ++y) {
    s->rows[y] = s->pixels.data() + y * rowbytes;
  }
  png_read_image(h.png, s->rows.data());
  png_read_end(h.png, nullptr);
  return state;
}

struct WriteHandles {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~WriteHandles() { png_destroy_write_struct(&png, info ? &info : nullptr); }
};

struct EncodeState {
  std::vector<std::uint8_t> out;
  std::vector<png_bytep> rows;
  std::string error;
};

void write_callback(png_structp png, png_bytep data, png_size_t n) {
  auto *state = static_cast<EncodeState *>(png_get_io_ptr(png));
  state->out.insert(state->out.end(), data, data + n);
}

void flush_callback(png_structp) {}

void encode_error_callback(png_structp png, png_const_charp msg) {
  auto *state = static_cast<EncodeState *>(png_get_error_ptr(png));
  state->error = msg;
  png_longjmp(png, 1);
}

std::vector<std::uint8_t> encode_png(const std::uint8_t *pixels, std::size_t height, std::size_t width,
                                     bool palette) {
  if (height == 0 || width == 0) {
    throw InputError("cannot encode an empty image");
  }
  auto state = std::make_unique<EncodeState>();
  EncodeState *s = state.get();
  const std::size_t channels = palette ? 1 : 3;
  s->rows.resize(height);
  for (std::size_t y = 0; y < height; ++y) {
    s->rows[y] = const_cast<png_bytep>(pixels + y * width * channels);
  }
  WriteHandles h;
  h.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, s, encode_error_callback, warning_callback);
  if (!h.png) {
    throw FormatError("libpng initialization failed");
  }
  h.info = png_create_info_struct(h.png);
  if (!h.info) {
    throw FormatError("libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(h.png))) {
    throw FormatError("PNG encoding failed: " + s->error);
  }
  png_set_write_fn(h.png, s, write_callback, flush_callback);
  png_set_compression_level(h.png, 6);
  png_set_IHDR(h.png, h.info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
               palette ? PNG_COLOR_TYPE_PALETTE : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  if (palette) {
    std::array<png_color, 256> colors{};
    const Palette &p = mask_palette();
    for (std::size_t i = 0; i < 256; ++i) {
      colors[i] = {p[i][0], p[i][1], p[i][2]};
    }
    png_set_PLTE(h.png, h.info, colors.data(), 256);
  }
  png_write_info(h.png, h.info);
  png_write_image(h.png, s->rows.data());
  png_write_end(h.png, nullptr);
  return std::move(s->out);
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

} // namespace

Image decode_png_image(std::span<const std::uint8_t> bytes) {
  const auto s = decode_png(bytes, DecodeMode::Rgb);
  if (s->channels != 3) {
    throw FormatError("PNG did not decode to RGB");
  }
  Image image;
  image.height = s->height;
  image.width = s->width;
  image.rgb = std::move(s->pixels);
  return image;
}

std::vector<std::uint8_t> encode_png_image(const Image &image) {
  if (image.rgb.size() != image.height * image.width * 3) {
    throw InputError("image buffer does not match its dimensions");
  }
  return encode_png(image.rgb.data(), image.height, image.width, false);
}

Image read_image(const std::filesystem::path &path) { return decode_png_image(read_file(path)); }

void write_image(const Image &image, const std::filesystem::path &path) { write_file(path, encode_png_image(image)); }

LabelMap decode_mask_png(std::span<const std::uint8_t> bytes) {
  const auto s = decode_png(bytes, DecodeMode::Labels);
  if (s->color_type != PNG_COLOR_TYPE_PALETTE && s->color_type != PNG_COLOR_TYPE_GRAY) {
    throw FormatError("mask PNG must be indexed or 8-bit grayscale, not truecolor or alpha");
  }
  if (s->bit_depth > 8) {
    throw FormatError("mask PNG must use at most 8 bits per pixel");
  }
  LabelMap mask;
  mask.height = s->height;
  mask.width = s->width;
  mask.labels = std::move(s->pixels);
  return mask;
}

std::vector<std::uint8_t> encode_mask_png(const LabelMap &mask) {
  if (mask.labels.size() != mask.height * mask.width) {
    throw InputError("mask buffer does not match its dimensions");
  }
  return encode_png(mask.labels.data(), mask.height, mask.width, true);
}

LabelMap decode_mask_pgm(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  // header tokens, skipping whitespace and # comments
  auto next_token = [&]() {
    std::string tok;
    while (pos < bytes.size()) {
      const char c = static_cast<char>(bytes[pos]);
      if (c == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') {
          ++pos;
        }
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos;
      } else {
        break;
      }
    }
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos])) && bytes[pos] != '#') {
      tok.push_back(static_cast<char>(bytes[pos++]));
    }
    return tok;
  };
  auto next_number = [&](const char *what) {
    const std::string tok = next_token();
    if (tok.empty() || !std::all_of(tok.begin(), tok.end(), [](unsigned char c) { return std::isdigit(c); }) ||
        tok.size() > 9) {
      throw FormatError(std::string("PGM: bad ") + what + " '" + tok + "'");
    }
    return static_cast<std::size_t>(std::stoul(tok));
  };

  const std::string magic = next_token();
  if (magic != "P2" && magic != "P5") {
    throw FormatError("not a PGM file");
  }
  const std::size_t width = next_number("width");
  const std::size_t height = next_number("height");
  const std::size_t maxval = next_number("maxval");
  if (width == 0 || height == 0) {
    throw FormatError("PGM: empty image");
  }
  if (maxval == 0 || maxval > 255) {
    throw FormatError("PGM: maxval must be in 1..255 for label masks");
  }
  LabelMap mask(height, width);
  if (magic == "P5") {
    ++pos; // single whitespace after maxval
    if (bytes.size() - std::min(pos, bytes.size()) < height * width) {
      throw FormatError("PGM: truncated pixel data");
    }
    std::memcpy(mask.labels.data(), bytes.data() + pos, height * width);
  } else {
    for (std::size_t i = 0; i < height * width; ++i) {
      mask.labels[i] = static_cast<std::uint8_t>(next_number("label"));
    }
  }
  for (std::uint8_t v : mask.labels) {
    if (v > maxval) {
      throw FormatError("PGM: label " + std::to_string(v) + " exceeds maxval");
    }
  }
  return mask;
}

std::vector<std::uint8_t> encode_mask_pgm(const LabelMap &mask) {
  if (mask.labels.size() != mask.height * mask.width) {
    throw InputError("mask buffer does not match its dimensions");
  }
  std::ostringstream out;
  out << "P2\n" << mask.width << ' ' << mask.height << "\n255\n";
  for (std::size_t y = 0; y < mask.height; ++y) {
    for (std::size_t x = 0; x < mask.width; ++x) {
      out << (x ? " " : "") << static_cast<int>(mask.at(y, x));
    }
    out << '\n';
  }
  const std::string s = out.str();
  return std::vector<std::uint8_t>(s.begin(), s.end());
}

LabelMap decode_mask(std::span<const std::uint8_t> bytes) {
  if (bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == '2' || bytes[1] == '5')) {
    return decode_mask_pgm(bytes);
  }
  if (bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == '3' || bytes[1] == '6')) {
    throw FormatError("truecolor PPM is not a valid mask");
  }
  return decode_mask_png(bytes);
}

LabelMap read_mask(const std::filesystem::path &path) { return decode_mask(read_file(path)); }

void write_mask(const LabelMap &mask, const std::filesystem::path &path) {
  if (lower(path.extension().string()) == ".pgm") {
    write_file(path, encode_mask_pgm(mask));
  } else {
    write_file(path, encode_mask_png(mask));
  }
}

std::vector<std::filesystem::path> list_files(const std::filesystem::path &dir, std::string_view extension) {
  if (!std::filesystem::is_directory(dir)) {
    throw InputError("not a directory: " + dir.string());
  }
  const std::string want = lower(std::string(extension));
  std::vector<std::filesystem::path> out;
  for (const auto &entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && lower(entry.path().extension().string()) == want) {
      out.push_back(entry.path());
    }
  }
  std::sort(out.begin(), out.end(),
            [](const auto &a, const auto &b) { return a.filename().string() < b.filename().string(); });
  return out;
}

} // namespace cutie
