#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "qotr/tensor.hpp"

namespace qotr {

inline constexpr char kCheckpointMagic[4] = {'Q', 'O', 'T', 'R'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor<float> value;
};

// Raw named-tensor table plus the config text it was trained with.
struct Checkpoint {
  std::vector<NamedTensor> tensors;
  std::string config_text;

  const Tensor<float>* find(const std::string& name) const;
};

void write_checkpoint(const Checkpoint& ckpt, std::ostream& out);
std::string checkpoint_bytes(const Checkpoint& ckpt);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);

// Throws CheckpointError on bad magic, unsupported version or dtype, or a
// truncated stream.
Checkpoint read_checkpoint(std::istream& in);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace qotr
