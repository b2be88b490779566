#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "tfm/model.hpp"
#include "tfm/optim.hpp"

namespace tfm {

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<float> values;
  bool operator==(const CheckpointEntry&) const = default;
};

/// Binary layout (little-endian): magic "TFMCKPT1", u32 version, u64 config
/// hash, u32 config-text length + text, u32 entry count, then per entry
/// u32 name length + name, u32 rank, u64 extents, f32 values.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;
  std::uint32_t version = kVersion;
  std::uint64_t config_hash = 0;
  std::string config_text;
  std::vector<CheckpointEntry> entries;

  const CheckpointEntry* find(const std::string& name) const;
  bool operator==(const Checkpoint&) const = default;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

/// Parameters and buffers of the model, optionally optimizer moments and
/// the training step.
Checkpoint snapshot(Matcher<float>& model, const Adam<float>* adam, std::uint64_t step);

/// Loads parameters and buffers (and optimizer state when given). A config
/// hash differing from the model's prints a warning on `warn`; missing or
/// mis-shaped entries are format errors. Returns the stored step.
std::uint64_t restore(Matcher<float>& model, const Checkpoint& ckpt, Adam<float>* adam, std::ostream& warn);

}  // namespace tfm
