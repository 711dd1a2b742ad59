#pragma once

#include <string>

#include "blockattn/model.hpp"

namespace blockattn {

// Model checkpoint file: magic "BKVM", version u32, config block, then every
// parameter tensor as little-endian 64-bit doubles. Round-trips bit-exactly.
void save_model(const Model& model, const std::string& path);
Model load_model(const std::string& path);

}  // namespace blockattn
