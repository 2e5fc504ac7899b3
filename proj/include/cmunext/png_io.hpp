#ifndef CMUNEXT_PNG_IO_HPP
#define CMUNEXT_PNG_IO_HPP

#include <string>
#include <vector>

namespace cmx {

// Interleaved 8-bit pixels; channels is 1 (gray) or 3 (RGB). Palette, alpha
// and 16-bit inputs are normalized on read.
struct ImageU8 {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<unsigned char> pixels;
};

ImageU8 read_png(const std::string& path);
void write_png(const std::string& path, const ImageU8& image);

}  // namespace cmx

#endif
