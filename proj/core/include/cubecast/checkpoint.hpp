#pragma once
#include <string>

#include "cubecast/model.hpp"

namespace cubecast {

// One file per model: a JSON metadata line (format tag, resolved config and
// its hash, parameter manifest with names and shapes) followed by each
// parameter's raw little-endian float32 values in manifest order. Loading
// rebuilds the model from the embedded config and verifies the manifest and
// payload length strictly.
template <typename T>
void save_checkpoint(const Model<T>& m, const std::string& path);

template <typename T>
Model<T> load_checkpoint(const std::string& path);

}  // namespace cubecast
