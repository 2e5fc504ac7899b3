#ifndef CMUNEXT_DATA_HPP
#define CMUNEXT_DATA_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "cmunext/tensor.hpp"

namespace cmx {

struct SegmentationSample {
    std::string id;
    Tensor image;  // 1 x in_ch x H x W, values in [0,1]
    Tensor mask;   // 1 x 1 x H x W, values in {0,1}
};

// Loads image/mask pairs matched by file stem from two directories of 8-bit
// PNGs. Images are scaled to [0,1] and bilinear-resized to target_size;
// masks are nearest-neighbor-resized and thresholded at 0.5.
// prefix_filter, when non-empty, keeps only stems starting with one of the
// listed prefixes.
std::vector<SegmentationSample> load_corpus(const std::string& image_dir,
                                            const std::string& mask_dir, int target_size,
                                            int in_channels = 3,
                                            const std::vector<std::string>& prefix_filter = {});

// Ultrasound-like phantoms: 1-3 random ellipses as the mask, image built from
// a smoothed mask with multiplicative speckle and a background gradient.
// Every mask has foreground fraction in [0.01, 0.5] (resampled until it does).
std::vector<SegmentationSample> generate_synthetic(int n, int size, std::uint64_t seed,
                                                   int in_channels = 3);

// Writes a corpus as images/ and masks/ PNG trees under out_dir.
void write_corpus(const std::vector<SegmentationSample>& corpus, const std::string& out_dir);

struct SplitSpec {
    double train_fraction = 0.7;
    std::vector<std::uint64_t> seeds{0, 1, 2};
};

struct SplitAssignment {
    std::uint64_t seed = 0;
    std::vector<std::string> train_ids;
    std::vector<std::string> val_ids;
};

// Seeded shuffle; the first ceil(train_fraction * n) ids go to train.
std::vector<SplitAssignment> split(const std::vector<SegmentationSample>& corpus,
                                   const SplitSpec& spec);

// Persistence so reruns reuse identical assignments.
void save_split(const SplitAssignment& a, const std::string& path);
SplitAssignment load_split(const std::string& path);

std::vector<SegmentationSample> select_by_ids(const std::vector<SegmentationSample>& corpus,
                                              const std::vector<std::string>& ids);

}  // namespace cmx

#endif
