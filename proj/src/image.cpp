#include "dittryon/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

#include "dittryon/params.hpp"

namespace dittryon {

ImageGrid ImageGrid::clamped() const {
  ImageGrid out = *this;
  for (auto& v : out.values) v = std::clamp(v, 0.0, 1.0);
  return out;
}

bool operator==(const ImageGrid& a, const ImageGrid& b) { return a.same_shape(b) && a.values == b.values; }

namespace {

unsigned char to_byte(double v) { return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

}  // namespace

std::vector<unsigned char> encode_pnm(const ImageGrid& img) {
  if (img.channels != 1 && img.channels != 3) throw IoError("PNM supports 1 or 3 channels");
  const std::string header = std::string(img.channels == 3 ? "P6" : "P5") + "\n" + std::to_string(img.width) + " " +
                             std::to_string(img.height) + "\n255\n";
  std::vector<unsigned char> out(header.begin(), header.end());
  out.reserve(out.size() + img.values.size());
  for (double v : img.values) out.push_back(to_byte(v));
  return out;
}

ImageGrid decode_pnm(const std::vector<unsigned char>& bytes) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&] {
    skip_space();
    std::size_t v = 0;
    bool any = false;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos++] - '0');
      any = true;
    }
    if (!any) throw IoError("malformed PNM header");
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '6' && bytes[1] != '5')) {
    throw IoError("not a binary PPM/PGM file");
  }
  const std::size_t channels = bytes[1] == '6' ? 3 : 1;
  pos = 2;
  const std::size_t w = read_int();
  const std::size_t h = read_int();
  const std::size_t maxval = read_int();
  if (maxval != 255) throw IoError("only 8-bit PNM (maxval 255) is supported");
  ++pos;  // single whitespace before raster
  ImageGrid img(channels, h, w);
  if (bytes.size() - pos < img.values.size()) throw IoError("PNM raster truncated");
  for (std::size_t i = 0; i < img.values.size(); ++i) img.values[i] = bytes[pos + i] / 255.0;
  return img;
}

void write_pnm(const std::filesystem::path& path, const ImageGrid& img) {
  const auto bytes = encode_pnm(img);
  atomic_write(path, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

ImageGrid read_pnm(const std::filesystem::path& path) {
  const std::string raw = read_file(path);
  return decode_pnm(std::vector<unsigned char>(raw.begin(), raw.end()));
}

ImageGrid quantize8(const ImageGrid& img) {
  ImageGrid out = img;
  for (auto& v : out.values) v = to_byte(v) / 255.0;
  return out;
}

}  // namespace dittryon
