#pragma once

#include <string>
#include <vector>

#include "miavlm/tensor.hpp"

namespace miavlm {

struct NamedParam {
    std::string name;
    Tensor tensor;
};

/// Binary parameter container ("MVCP0001"): a name -> (shape, float64 values)
/// map, little-endian throughout. See the README for the exact layout. The
/// format round-trips values bit-exactly.
void save_checkpoint(const std::string& path, const std::vector<NamedParam>& params);

std::vector<NamedParam> load_checkpoint(const std::string& path);

/// Copies values from a checkpoint file into an existing parameter set.
/// Names or shapes that do not line up are an error (no silent skips).
void load_checkpoint_into(const std::string& path, std::vector<NamedParam>& params);

}  // namespace miavlm
