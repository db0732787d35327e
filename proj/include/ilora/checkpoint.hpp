#pragma once

#include <string>
#include <utility>
#include <vector>

#include "ilora/matrix.hpp"

namespace ilora {

// Versioned container of named tensor records. Layout:
//   "ILORA-CKPT" magic, u64 version, u64 tensor count, then per tensor:
//   u64 name length, name bytes (UTF-8), u64 rows, u64 cols,
//   rows*cols doubles. All integers and floats little-endian.
// Round-trips are bit-exact.

inline constexpr std::uint64_t kCheckpointVersion = 1;

using NamedTensors = std::vector<std::pair<std::string, Matrix>>;

void save_checkpoint(const std::string& path, const NamedTensors& tensors);
NamedTensors load_checkpoint(const std::string& path);

// Lookup helper; throws when the name is missing.
const Matrix& checkpoint_get(const NamedTensors& t, const std::string& name);

}  // namespace ilora
