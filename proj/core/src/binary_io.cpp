#include "binary_io.hpp"

#include <fstream>
#include <iterator>

namespace mve::detail {

std::string read_file(const std::string& path, const std::string& what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + what + " file " + path);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, const std::string& bytes, const std::string& what) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + what + " file " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("short write on " + what + " file " + path);
}

}  // namespace mve::detail
