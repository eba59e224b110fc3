#pragma once

// Versioned binary checkpoint; the byte layout is described in
// docs/checkpoint_format.md.

#include <string>

#include "fbd/model.hpp"

namespace fbd {

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void save_checkpoint(const std::string& path, const CascadeModel<T>& model);

// Builds a model from the stored config and fills in every parameter and w.
// Throws FormatError on a bad magic, unknown version, or mismatched blobs.
template <typename T>
CascadeModel<T> load_checkpoint(const std::string& path);

}  // namespace fbd
