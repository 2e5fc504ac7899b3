#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "cmunext/serialize.hpp"

namespace cmx {

namespace {

constexpr const char* kMagic = "CMUNEXT-WEIGHTS-V1";

static_assert(std::endian::native == std::endian::little,
              "weight container payload is little-endian");

struct NamedSlot {
    std::string name;
    std::vector<std::int64_t> shape;
    std::int64_t size = 0;
    float* value = nullptr;
};

std::vector<NamedSlot> model_slots(Model& model) {
    std::vector<NamedSlot> slots;
    for (const Parameter& p : model.parameters()) {
        slots.push_back(NamedSlot{p.name, p.shape, p.size, p.value});
    }
    for (const StatBuffer& b : model.stat_buffers()) {
        slots.push_back(NamedSlot{b.name, b.shape, b.size, b.value});
    }
    return slots;
}

std::string shape_str(const std::vector<std::int64_t>& shape) {
    std::string out;
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i > 0) out += "x";
        out += std::to_string(shape[i]);
    }
    return out;
}

std::vector<std::int64_t> parse_shape(const std::string& text) {
    std::vector<std::int64_t> shape;
    std::string part;
    std::istringstream is(text);
    while (std::getline(is, part, 'x')) {
        shape.push_back(std::stoll(part));
    }
    return shape;
}

std::vector<WeightEntry> parse_header(std::istream& is, const std::string& path) {
    std::string line;
    if (!std::getline(is, line) || line != kMagic) {
        throw IoError("not a weight container (bad magic line): " + path);
    }
    std::vector<WeightEntry> entries;
    std::uint64_t expect_offset = 0;
    while (std::getline(is, line)) {
        if (line.empty()) {
            return entries;
        }
        std::istringstream ls(line);
        WeightEntry e;
        std::string dtype, shape;
        if (!(ls >> e.name >> dtype >> shape >> e.offset >> e.length)) {
            throw IoError("malformed container entry '" + line + "': " + path);
        }
        if (dtype != "f32") {
            throw IoError("unsupported dtype '" + dtype + "' for entry '" + e.name + "'");
        }
        if (e.offset != expect_offset) {
            throw IoError("container offsets must be ascending and contiguous at entry '" +
                          e.name + "'");
        }
        expect_offset = e.offset + e.length;
        e.shape = parse_shape(shape);
        entries.push_back(std::move(e));
    }
    throw IoError("container header not terminated by a blank line: " + path);
}

}  // namespace

void save_weights(Model& model, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) {
        throw IoError("cannot write weights file: " + path);
    }
    const std::vector<NamedSlot> slots = model_slots(model);

    os << kMagic << "\n";
    std::uint64_t offset = 0;
    for (const NamedSlot& s : slots) {
        const std::uint64_t length = static_cast<std::uint64_t>(s.size) * sizeof(float);
        os << s.name << " f32 " << shape_str(s.shape) << " " << offset << " " << length << "\n";
        offset += length;
    }
    os << "\n";
    for (const NamedSlot& s : slots) {
        os.write(reinterpret_cast<const char*>(s.value),
                 static_cast<std::streamsize>(s.size * sizeof(float)));
    }
    if (!os) {
        throw IoError("short write to weights file: " + path);
    }
}

std::vector<WeightEntry> read_container_index(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw IoError("cannot read weights file: " + path);
    }
    return parse_header(is, path);
}

void load_weights(Model& model, const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw IoError("cannot read weights file: " + path);
    }
    const std::vector<WeightEntry> entries = parse_header(is, path);
    const std::vector<NamedSlot> slots = model_slots(model);

    // Model traversal order defines the container order; report the first
    // disagreement precisely.
    const std::size_t n = std::min(entries.size(), slots.size());
    for (std::size_t i = 0; i < n; ++i) {
        if (entries[i].name != slots[i].name) {
            throw ValidationError("weights mismatch at entry " + std::to_string(i) +
                                  ": container has '" + entries[i].name + "', model expects '" +
                                  slots[i].name + "'");
        }
        if (entries[i].shape != slots[i].shape) {
            throw ValidationError("weights shape mismatch for '" + entries[i].name +
                                  "': container " + shape_str(entries[i].shape) + ", model " +
                                  shape_str(slots[i].shape));
        }
    }
    if (entries.size() < slots.size()) {
        throw ValidationError("container is missing model entry '" + slots[entries.size()].name +
                              "'");
    }
    if (entries.size() > slots.size()) {
        throw ValidationError("container has extra entry '" + entries[slots.size()].name + "'");
    }

    const std::istream::pos_type body = is.tellg();
    for (std::size_t i = 0; i < slots.size(); ++i) {
        is.seekg(body + static_cast<std::istream::off_type>(entries[i].offset));
        is.read(reinterpret_cast<char*>(slots[i].value),
                static_cast<std::streamsize>(entries[i].length));
        if (!is) {
            throw IoError("short read for entry '" + entries[i].name + "': " + path);
        }
    }
}

}  // namespace cmx
