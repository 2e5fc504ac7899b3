#ifndef CMUNEXT_SERIALIZE_HPP
#define CMUNEXT_SERIALIZE_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "cmunext/model.hpp"

namespace cmx {

// Weight container: a UTF-8 text header, one line per entry
//   <name> f32 <d0>x<d1>... <byte offset> <byte length>
// terminated by a blank line, followed by the concatenated little-endian
// float payloads. Every trainable parameter and every batchnorm running
// statistic appears exactly once; offsets are ascending and non-overlapping.
struct WeightEntry {
    std::string name;
    std::vector<std::int64_t> shape;
    std::uint64_t offset = 0;
    std::uint64_t length = 0;  // bytes
};

void save_weights(Model& model, const std::string& path);

// Names and shapes must match the model exactly; the first mismatch is
// reported with both sides. Throws IoError / ValidationError.
void load_weights(Model& model, const std::string& path);

// Header inspection without touching the payload.
std::vector<WeightEntry> read_container_index(const std::string& path);

}  // namespace cmx

#endif
