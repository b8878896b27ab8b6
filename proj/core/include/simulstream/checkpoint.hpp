#pragma once

#include <optional>
#include <string>
#include <vector>

#include "simulstream/optim.hpp"

namespace simulstream {

inline constexpr const char* kCheckpointFormat = "simulstream-ckpt-v1";

// On disk a checkpoint is a pair of files: `<path>` is a JSON manifest listing
// parameter names, shapes and dtype plus free-form metadata, and
// `<path minus .json>.bin` is the flat little-endian float64 payload with
// values concatenated in manifest order. Optimizer moments, when present,
// follow the parameters in the same binary (first moments, then second,
// again in manifest order).

struct CheckpointExtra {
  std::string model_config_json;  // embedded verbatim; empty -> omitted
  int64_t step = 0;
  bool has_optimizer = false;
  std::vector<std::vector<double>> adam_m, adam_v;
  AdamConfig adam;
};

void save_checkpoint(const std::string& manifest_path, const std::vector<Parameter>& params,
                     const CheckpointExtra& extra);

struct LoadedCheckpoint {
  std::vector<Parameter> params;
  CheckpointExtra extra;
};

LoadedCheckpoint load_checkpoint(const std::string& manifest_path);

std::string checkpoint_bin_path(const std::string& manifest_path);

}  // namespace simulstream
