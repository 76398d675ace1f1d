#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "segprobe/train.hpp"

namespace segprobe {

/// Reads a flat `key = value` config (the scalar subset of TOML: quoted
/// strings, numbers, booleans, `#` comments, an optional [train] table).
/// Keys of the [train] table are returned unqualified.
std::map<std::string, std::string> read_config_file(const std::filesystem::path& path);

/// Applies recognised TrainConfig keys; unknown keys or unparsable values
/// throw std::invalid_argument.
void apply_config(TrainConfig& config, const std::map<std::string, std::string>& values);

}  // namespace segprobe
