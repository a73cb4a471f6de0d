#include "xmodal/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace xmodal {

static_assert(std::endian::native == std::endian::little,
              "checkpoints are written in host order");

namespace {

constexpr char kMagic[4] = {'M', 'T', 'M', 'F'};

template <typename T>
void put(std::ostream& os, T value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T value{};
  is.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!is) throw std::runtime_error("checkpoint truncated");
  return value;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path,
                     std::span<const NamedParameter> params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os.write(kMagic, 4);
  put<std::uint32_t>(os, kCheckpointVersion);
  put<std::uint64_t>(os, params.size());
  for (const auto& p : params) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    const Shape& shape = p.tensor.shape();
    put<std::uint32_t>(os, static_cast<std::uint32_t>(shape.size()));
    for (std::size_t e : shape) put<std::uint64_t>(os, e);
    auto data = p.tensor.data();
    os.write(reinterpret_cast<const char*>(data.data()),
             static_cast<std::streamsize>(data.size() * sizeof(double)));
  }
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

std::vector<CheckpointRecord> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) {
    throw std::runtime_error(path.string() + " is not a checkpoint");
  }
  const auto version = get<std::uint32_t>(is);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = get<std::uint64_t>(is);
  std::vector<CheckpointRecord> records(count);
  for (auto& r : records) {
    r.name.resize(get<std::uint32_t>(is));
    is.read(r.name.data(), static_cast<std::streamsize>(r.name.size()));
    const auto rank = get<std::uint32_t>(is);
    for (std::uint32_t i = 0; i < rank; ++i) r.shape.push_back(get<std::uint64_t>(is));
    r.data.resize(shape_numel(r.shape));
    is.read(reinterpret_cast<char*>(r.data.data()),
            static_cast<std::streamsize>(r.data.size() * sizeof(double)));
    if (!is) throw std::runtime_error("checkpoint truncated");
  }
  return records;
}

void apply_checkpoint(const std::vector<CheckpointRecord>& records,
                      NetworkParams& params) {
  auto named = params.named();
  if (named.size() != records.size()) {
    throw std::runtime_error("checkpoint holds " + std::to_string(records.size()) +
                             " tensors, network expects " +
                             std::to_string(named.size()));
  }
  for (std::size_t i = 0; i < named.size(); ++i) {
    const auto& r = records[i];
    if (r.name != named[i].name || r.shape != named[i].tensor.shape()) {
      throw std::runtime_error("checkpoint record '" + r.name + "' " +
                               shape_str(r.shape) + " does not match parameter '" +
                               named[i].name + "' " +
                               shape_str(named[i].tensor.shape()));
    }
  }
  for (std::size_t i = 0; i < named.size(); ++i) {
    auto dst = named[i].tensor.mutable_data();
    std::copy(records[i].data.begin(), records[i].data.end(), dst.begin());
  }
}

}  // namespace xmodal
