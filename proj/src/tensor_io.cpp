#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "foam/tensor.hpp"

namespace foam {

namespace {

constexpr char kMagic[8] = {'F', 'O', 'A', 'M', 'T', 'N', 'S', 'R'};

static_assert(std::endian::native == std::endian::little,
              "tensor files are little-endian; big-endian hosts are unsupported");

void write_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint32_t read_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

}  // namespace

void save_tensor_f32(const std::string& path, const Shape& shape,
                     const std::vector<float>& data) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  os.write(kMagic, sizeof(kMagic));
  write_u32(os, static_cast<std::uint32_t>(shape.size()));
  for (std::size_t e : shape) write_u32(os, static_cast<std::uint32_t>(e));
  os.write(reinterpret_cast<const char*>(data.data()),
           static_cast<std::streamsize>(data.size() * sizeof(float)));
  if (!os) throw IoError("short write: " + path);
}

void load_tensor_f32(const std::string& path, Shape& shape, std::vector<float>& data) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open for reading: " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw IoError("bad magic in tensor file: " + path);
  }
  const std::uint32_t rank = read_u32(is);
  if (rank > 8) throw IoError("implausible rank " + std::to_string(rank) + " in " + path);
  shape.clear();
  for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(read_u32(is));
  data.assign(numel(shape), 0.0f);
  is.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(data.size() * sizeof(float)));
  if (!is) throw IoError("truncated tensor file: " + path);
}

}  // namespace foam
