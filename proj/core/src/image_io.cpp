#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mve/error.hpp"
#include "mve/image.hpp"

namespace mve {

namespace {

std::string join(const std::vector<std::string>& parts) {
  std::string s;
  for (std::size_t i = 0; i < parts.size(); ++i) s += (i ? "," : "") + parts[i];
  return s;
}

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(item);
  return out;
}

void put_f32(std::ostream& os, float f) {
  std::uint32_t bits = std::bit_cast<std::uint32_t>(f);
  unsigned char b[4] = {static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
                        static_cast<unsigned char>(bits >> 16), static_cast<unsigned char>(bits >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

float get_f32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw DataError("truncated float image payload");
  const std::uint32_t bits = b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  return std::bit_cast<float>(bits);
}

std::string expect_line(std::istream& is, const std::string& key) {
  std::string line;
  if (!std::getline(is, line)) throw DataError("truncated float image header");
  if (line.rfind(key + " ", 0) != 0) throw DataError("float image header: expected '" + key + "', got '" + line + "'");
  return line.substr(key.size() + 1);
}

}  // namespace

void write_float_image(const Image& img, const std::vector<std::string>& layout, const std::filesystem::path& path) {
  if (static_cast<int>(layout.size()) != img.channels) throw std::invalid_argument("layout does not match channel count");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "MVEIMG\nversion 1\nwidth " << img.width << "\nheight " << img.height << "\nchannels " << img.channels
      << "\nlayout " << join(layout) << "\nencoding float32-le\nend\n";
  for (double v : img.data) put_f32(out, static_cast<float>(v));
}

Image read_float_image(const std::filesystem::path& path, std::vector<std::string>* layout) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::string magic;
  std::getline(in, magic);
  if (magic != "MVEIMG") throw DataError(path.string() + " is not a float image container");
  if (expect_line(in, "version") != "1") throw DataError("unsupported float image version in " + path.string());
  Image img;
  img.width = std::stoi(expect_line(in, "width"));
  img.height = std::stoi(expect_line(in, "height"));
  img.channels = std::stoi(expect_line(in, "channels"));
  const auto names = split(expect_line(in, "layout"));
  if (static_cast<int>(names.size()) != img.channels) throw DataError("layout/channel mismatch in " + path.string());
  if (expect_line(in, "encoding") != "float32-le") throw DataError("unsupported encoding in " + path.string());
  std::string end;
  std::getline(in, end);
  if (end != "end") throw DataError("missing header terminator in " + path.string());
  if (img.width <= 0 || img.height <= 0 || img.channels <= 0) throw DataError("bad dimensions in " + path.string());
  img.data.resize(static_cast<std::size_t>(img.width) * img.height * img.channels);
  for (auto& v : img.data) v = get_f32(in);
  if (layout) *layout = names;
  return img;
}

void write_rgb(const RenderedImage& img, const std::filesystem::path& path) { write_float_image(img, {"r", "g", "b"}, path); }

void write_cmap(const CMap& cmap, const std::filesystem::path& path) {
  Image packed(cmap.width(), cmap.height(), 4);
  for (std::size_t p = 0; p < cmap.coords.pixel_count(); ++p) {
    for (int c = 0; c < 3; ++c) packed.data[p * 4 + c] = cmap.coords.data[p * 3 + c];
    packed.data[p * 4 + 3] = cmap.validity.data[p];
  }
  write_float_image(packed, {"x", "y", "z", "validity"}, path);
}

CMap read_cmap(const std::filesystem::path& path) {
  std::vector<std::string> layout;
  const Image packed = read_float_image(path, &layout);
  if (layout != std::vector<std::string>{"x", "y", "z", "validity"}) throw DataError(path.string() + " is not a C-map");
  CMap cmap{Image(packed.width, packed.height, 3), Image(packed.width, packed.height, 1)};
  for (std::size_t p = 0; p < packed.pixel_count(); ++p) {
    for (int c = 0; c < 3; ++c) cmap.coords.data[p * 3 + c] = packed.data[p * 4 + c];
    cmap.validity.data[p] = packed.data[p * 4 + 3];
  }
  return cmap;
}

void write_ppm(const RenderedImage& img, const std::filesystem::path& path) {
  if (img.channels != 3) throw std::invalid_argument("write_ppm expects 3 channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  for (double v : img.data) {
    const auto b = static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
    out.put(static_cast<char>(b));
  }
}

}  // namespace mve
