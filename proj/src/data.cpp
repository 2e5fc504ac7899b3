#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "cmunext/data.hpp"
#include "cmunext/png_io.hpp"
#include "cmunext/rng.hpp"

namespace fs = std::filesystem;

namespace cmx {

namespace {

// Half-pixel-center bilinear resize of one plane, edges clamped.
void resize_bilinear(const float* src, int sh, int sw, float* dst, int dh, int dw) {
    const float sy = static_cast<float>(sh) / static_cast<float>(dh);
    const float sx = static_cast<float>(sw) / static_cast<float>(dw);
    for (int y = 0; y < dh; ++y) {
        float fy = (static_cast<float>(y) + 0.5f) * sy - 0.5f;
        fy = std::clamp(fy, 0.0f, static_cast<float>(sh - 1));
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, sh - 1);
        const float ty = fy - static_cast<float>(y0);
        for (int x = 0; x < dw; ++x) {
            float fx = (static_cast<float>(x) + 0.5f) * sx - 0.5f;
            fx = std::clamp(fx, 0.0f, static_cast<float>(sw - 1));
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, sw - 1);
            const float tx = fx - static_cast<float>(x0);
            const float a = src[y0 * sw + x0] + tx * (src[y0 * sw + x1] - src[y0 * sw + x0]);
            const float b = src[y1 * sw + x0] + tx * (src[y1 * sw + x1] - src[y1 * sw + x0]);
            dst[y * dw + x] = a + ty * (b - a);
        }
    }
}

void resize_nearest(const float* src, int sh, int sw, float* dst, int dh, int dw) {
    for (int y = 0; y < dh; ++y) {
        const int sy = std::min(sh - 1, static_cast<int>((static_cast<float>(y) + 0.5f) *
                                                         static_cast<float>(sh) / dh));
        for (int x = 0; x < dw; ++x) {
            const int sx = std::min(sw - 1, static_cast<int>((static_cast<float>(x) + 0.5f) *
                                                             static_cast<float>(sw) / dw));
            dst[y * dw + x] = src[sy * sw + sx];
        }
    }
}

// Two passes of a running-sum box blur with clamped edges.
void box_blur(std::vector<float>& plane, int h, int w, int radius) {
    std::vector<float> tmp(plane.size());
    auto pass_h = [&](const std::vector<float>& in, std::vector<float>& out) {
        for (int y = 0; y < h; ++y) {
            const float* row = in.data() + y * w;
            float* dst = out.data() + y * w;
            for (int x = 0; x < w; ++x) {
                float acc = 0.0f;
                for (int dx = -radius; dx <= radius; ++dx) {
                    acc += row[std::clamp(x + dx, 0, w - 1)];
                }
                dst[x] = acc / static_cast<float>(2 * radius + 1);
            }
        }
    };
    auto pass_v = [&](const std::vector<float>& in, std::vector<float>& out) {
        for (int y = 0; y < h; ++y) {
            float* dst = out.data() + y * w;
            for (int x = 0; x < w; ++x) {
                float acc = 0.0f;
                for (int dy = -radius; dy <= radius; ++dy) {
                    acc += in[std::clamp(y + dy, 0, h - 1) * w + x];
                }
                dst[x] = acc / static_cast<float>(2 * radius + 1);
            }
        }
    };
    pass_h(plane, tmp);
    pass_v(tmp, plane);
    pass_h(plane, tmp);
    pass_v(tmp, plane);
}

}  // namespace

std::vector<SegmentationSample> generate_synthetic(int n, int size, std::uint64_t seed,
                                                   int in_channels) {
    if (n <= 0 || size <= 0 || size % 16 != 0) {
        throw ConfigError("generate_synthetic: n must be positive and size divisible by 16");
    }
    Rng rng(seed ^ 0x53594e5448ull);
    std::vector<SegmentationSample> corpus;
    corpus.reserve(static_cast<std::size_t>(n));

    const int hw = size * size;
    for (int i = 0; i < n; ++i) {
        std::vector<float> mask(static_cast<std::size_t>(hw));
        while (true) {
            std::fill(mask.begin(), mask.end(), 0.0f);
            const int ellipses = 1 + rng.uniform_int(3);
            for (int e = 0; e < ellipses; ++e) {
                const float cx = rng.uniform(0.2f, 0.8f) * static_cast<float>(size);
                const float cy = rng.uniform(0.2f, 0.8f) * static_cast<float>(size);
                const float a = rng.uniform(0.08f, 0.30f) * static_cast<float>(size);
                const float b = rng.uniform(0.08f, 0.30f) * static_cast<float>(size);
                const float theta = rng.uniform(0.0f, 3.14159265f);
                const float ct = std::cos(theta), st = std::sin(theta);
                for (int y = 0; y < size; ++y) {
                    for (int x = 0; x < size; ++x) {
                        const float dx = static_cast<float>(x) - cx;
                        const float dy = static_cast<float>(y) - cy;
                        const float u = (dx * ct + dy * st) / a;
                        const float v = (-dx * st + dy * ct) / b;
                        if (u * u + v * v <= 1.0f) {
                            mask[static_cast<std::size_t>(y * size + x)] = 1.0f;
                        }
                    }
                }
            }
            float fg = 0.0f;
            for (float v : mask) fg += v;
            fg /= static_cast<float>(hw);
            if (fg >= 0.01f && fg <= 0.5f) break;
        }

        std::vector<float> intensity = mask;
        box_blur(intensity, size, size, std::max(1, size / 16));
        const float gx = rng.uniform(-1.0f, 1.0f);
        const float gy = rng.uniform(-1.0f, 1.0f);
        std::vector<float> gray(static_cast<std::size_t>(hw));
        for (int y = 0; y < size; ++y) {
            for (int x = 0; x < size; ++x) {
                const std::size_t idx = static_cast<std::size_t>(y * size + x);
                const float base = 0.25f + 0.5f * intensity[idx];
                const float speckle = 1.0f + 0.25f * rng.normal();
                const float grad = 0.08f * (gx * (static_cast<float>(x) / size - 0.5f) +
                                            gy * (static_cast<float>(y) / size - 0.5f));
                gray[idx] = std::clamp(base * speckle + grad, 0.0f, 1.0f);
            }
        }

        SegmentationSample s;
        char id[32];
        std::snprintf(id, sizeof(id), "synth_%04d", i);
        s.id = id;
        s.image = Tensor(Shape4{1, in_channels, size, size});
        for (int c = 0; c < in_channels; ++c) {
            std::copy(gray.begin(), gray.end(), s.image.plane(0, c));
        }
        s.mask = Tensor(Shape4{1, 1, size, size}, std::move(mask));
        corpus.push_back(std::move(s));
    }
    return corpus;
}

std::vector<SegmentationSample> load_corpus(const std::string& image_dir,
                                            const std::string& mask_dir, int target_size,
                                            int in_channels,
                                            const std::vector<std::string>& prefix_filter) {
    if (!fs::is_directory(image_dir)) {
        throw ConfigError("image directory not found: " + image_dir);
    }
    if (!fs::is_directory(mask_dir)) {
        throw ConfigError("mask directory not found: " + mask_dir);
    }
    if (target_size <= 0 || target_size % 16 != 0) {
        throw ConfigError("load_corpus: target_size must be positive and divisible by 16");
    }

    std::vector<std::string> stems;
    for (const auto& entry : fs::directory_iterator(image_dir)) {
        if (entry.path().extension() == ".png") {
            stems.push_back(entry.path().stem().string());
        }
    }
    std::sort(stems.begin(), stems.end());

    if (!prefix_filter.empty()) {
        std::erase_if(stems, [&](const std::string& stem) {
            for (const auto& p : prefix_filter) {
                if (stem.rfind(p, 0) == 0) return false;
            }
            return true;
        });
    }

    std::string missing;
    for (const auto& stem : stems) {
        if (!fs::exists(fs::path(mask_dir) / (stem + ".png"))) {
            missing += missing.empty() ? stem : ", " + stem;
        }
    }
    if (!missing.empty()) {
        throw ConfigError("mask file missing for: " + missing);
    }

    std::vector<SegmentationSample> corpus;
    corpus.reserve(stems.size());
    for (const auto& stem : stems) {
        const ImageU8 img = read_png((fs::path(image_dir) / (stem + ".png")).string());
        const ImageU8 msk = read_png((fs::path(mask_dir) / (stem + ".png")).string());

        // per-channel float planes in [0,1]
        auto channel_plane = [](const ImageU8& im, int c) {
            std::vector<float> out(static_cast<std::size_t>(im.width) * im.height);
            for (std::size_t i = 0; i < out.size(); ++i) {
                out[i] = static_cast<float>(im.pixels[i * static_cast<std::size_t>(im.channels) +
                                                      static_cast<std::size_t>(c)]) /
                         255.0f;
            }
            return out;
        };

        SegmentationSample s;
        s.id = stem;
        s.image = Tensor(Shape4{1, in_channels, target_size, target_size});
        for (int c = 0; c < in_channels; ++c) {
            const int src_c = img.channels == 1 ? 0 : std::min(c, img.channels - 1);
            const std::vector<float> plane = channel_plane(img, src_c);
            resize_bilinear(plane.data(), img.height, img.width, s.image.plane(0, c), target_size,
                            target_size);
        }

        std::vector<float> mplane = channel_plane(msk, 0);
        s.mask = Tensor(Shape4{1, 1, target_size, target_size});
        resize_nearest(mplane.data(), msk.height, msk.width, s.mask.plane(0, 0), target_size,
                       target_size);
        for (float& v : s.mask.vec()) {
            v = v > 0.5f ? 1.0f : 0.0f;
        }
        corpus.push_back(std::move(s));
    }
    return corpus;
}

void write_corpus(const std::vector<SegmentationSample>& corpus, const std::string& out_dir) {
    const fs::path images = fs::path(out_dir) / "images";
    const fs::path masks = fs::path(out_dir) / "masks";
    fs::create_directories(images);
    fs::create_directories(masks);

    for (const SegmentationSample& s : corpus) {
        const Shape4 is = s.image.shape();
        ImageU8 img;
        img.width = is.w;
        img.height = is.h;
        img.channels = is.c >= 3 ? 3 : 1;
        img.pixels.resize(static_cast<std::size_t>(is.h) * is.w * img.channels);
        for (int c = 0; c < img.channels; ++c) {
            const float* plane = s.image.plane(0, c);
            for (std::int64_t i = 0; i < static_cast<std::int64_t>(is.h) * is.w; ++i) {
                const float v = std::clamp(plane[i], 0.0f, 1.0f);
                img.pixels[static_cast<std::size_t>(i) * img.channels + c] =
                    static_cast<unsigned char>(std::lround(v * 255.0f));
            }
        }
        write_png((images / (s.id + ".png")).string(), img);

        const Shape4 ms = s.mask.shape();
        ImageU8 m;
        m.width = ms.w;
        m.height = ms.h;
        m.channels = 1;
        m.pixels.resize(static_cast<std::size_t>(ms.h) * ms.w);
        const float* plane = s.mask.plane(0, 0);
        for (std::int64_t i = 0; i < static_cast<std::int64_t>(ms.h) * ms.w; ++i) {
            m.pixels[static_cast<std::size_t>(i)] = plane[i] > 0.5f ? 255 : 0;
        }
        write_png((masks / (s.id + ".png")).string(), m);
    }
}

std::vector<SplitAssignment> split(const std::vector<SegmentationSample>& corpus,
                                   const SplitSpec& spec) {
    if (corpus.empty()) {
        throw ValidationError("split: empty corpus");
    }
    if (spec.train_fraction <= 0.0 || spec.train_fraction > 1.0) {
        throw ConfigError("split: train_fraction must be in (0, 1]");
    }
    std::vector<SplitAssignment> out;
    for (std::uint64_t seed : spec.seeds) {
        std::vector<std::string> ids;
        ids.reserve(corpus.size());
        for (const auto& s : corpus) ids.push_back(s.id);
        Rng rng(seed ^ 0x53504c4954ull);
        rng.shuffle(ids);
        const std::size_t n_train = static_cast<std::size_t>(
            std::ceil(spec.train_fraction * static_cast<double>(ids.size())));
        SplitAssignment a;
        a.seed = seed;
        a.train_ids.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
        a.val_ids.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train), ids.end());
        out.push_back(std::move(a));
    }
    return out;
}

void save_split(const SplitAssignment& a, const std::string& path) {
    std::ofstream os(path);
    if (!os) {
        throw IoError("cannot write split file: " + path);
    }
    os << "seed " << a.seed << "\n";
    for (const auto& id : a.train_ids) os << "train " << id << "\n";
    for (const auto& id : a.val_ids) os << "val " << id << "\n";
}

SplitAssignment load_split(const std::string& path) {
    std::ifstream is(path);
    if (!is) {
        throw IoError("cannot read split file: " + path);
    }
    SplitAssignment a;
    std::string tag, value;
    while (is >> tag >> value) {
        if (tag == "seed") {
            a.seed = std::stoull(value);
        } else if (tag == "train") {
            a.train_ids.push_back(value);
        } else if (tag == "val") {
            a.val_ids.push_back(value);
        } else {
            throw IoError("split file has unknown tag '" + tag + "': " + path);
        }
    }
    return a;
}

std::vector<SegmentationSample> select_by_ids(const std::vector<SegmentationSample>& corpus,
                                              const std::vector<std::string>& ids) {
    std::vector<SegmentationSample> out;
    out.reserve(ids.size());
    for (const auto& id : ids) {
        const auto it = std::find_if(corpus.begin(), corpus.end(),
                                     [&](const SegmentationSample& s) { return s.id == id; });
        if (it == corpus.end()) {
            throw ValidationError("split id '" + id + "' not present in corpus");
        }
        out.push_back(*it);
    }
    return out;
}

}  // namespace cmx
