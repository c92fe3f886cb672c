#pragma once

#include <map>
#include <string>

#include "mua/autodiff.hpp"

namespace mua {

// Checkpoint directory layout: meta.txt carries `key = value` lines followed
// by one `tensor <name> <rank> <dims...>` line per parameter; each parameter
// lives in <name>.bin as raw native-endian doubles.
void save_checkpoint(const std::string& dir,
                     const std::vector<std::pair<std::string, nn::Value>>& params,
                     const std::map<std::string, std::string>& meta);

std::map<std::string, std::string> read_checkpoint_meta(const std::string& dir);

// Fills an already-constructed parameter list by name; shape mismatches and
// absent blobs are errors.
void load_checkpoint_params(const std::string& dir,
                            const std::vector<std::pair<std::string, nn::Value>>& params);

}  // namespace mua
