#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "vtfuse/fusion.hpp"

namespace vtfuse {

// Contents of an XMF1 file: a kind tag, integer config entries and named
// float32 parameter tensors.
//
// Layout (little-endian): "XMF1", u32 version, str kind, u32 n_config,
// n_config x (str key, i64 value), u32 n_tensors, n_tensors x (str name,
// u32 rank, rank x u32 dim, numel x f32). Strings are u32 length + bytes.
struct Checkpoint {
  std::string kind;
  std::vector<std::pair<std::string, std::int64_t>> config;
  std::vector<NamedTensor> tensors;

  std::int64_t get(std::string_view key) const;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::string& path);

// Rounds every value to the nearest float32 in place, so a saved model
// evaluates identically after loading.
void round_to_float(const std::vector<NamedTensor>& params);

// Copies stored values into `params` by name; every name must be present
// with a matching shape.
void assign_parameters(const std::vector<NamedTensor>& params, const Checkpoint& ckpt);

void save_model(const std::string& path, const FusionModel& model);
FusionModel load_model(const std::string& path);

}  // namespace vtfuse
