#ifndef XMODAL_CHECKPOINT_HPP_
#define XMODAL_CHECKPOINT_HPP_

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "xmodal/network.hpp"
#include "xmodal/optim.hpp"

namespace xmodal {

// Container layout (little-endian):
//   "MTMF" | u32 version | u64 record count |
//   per record: u32 name length | name bytes (UTF-8) | u32 rank |
//               rank x u64 extents | f64 data
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointRecord {
  std::string name;
  Shape shape;
  std::vector<double> data;
};

void save_checkpoint(const std::filesystem::path& path,
                     std::span<const NamedParameter> params);
std::vector<CheckpointRecord> load_checkpoint(const std::filesystem::path& path);

/// Copies records into matching parameters; names and shapes must agree
/// exactly with params.named().
void apply_checkpoint(const std::vector<CheckpointRecord>& records,
                      NetworkParams& params);

}  // namespace xmodal

#endif  // XMODAL_CHECKPOINT_HPP_
