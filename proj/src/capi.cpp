#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "cmunext.h"
#include "cmunext/complexity.hpp"
#include "cmunext/data.hpp"
#include "cmunext/metrics.hpp"
#include "cmunext/model.hpp"
#include "cmunext/png_io.hpp"
#include "cmunext/serialize.hpp"
#include "cmunext/train.hpp"

namespace fs = std::filesystem;

struct cmx_model {
    cmx::Model impl;
};

namespace {

thread_local std::string g_last_error;

void set_error(const std::string& msg) { g_last_error = msg; }

template <typename F>
cmx_status wrap(F&& fn) {
    try {
        fn();
        return CMX_OK;
    } catch (const cmx::ConfigError& e) {
        set_error(e.what());
        return CMX_ERROR_CONFIG;
    } catch (const cmx::DimensionError& e) {
        set_error(e.what());
        return CMX_ERROR_DIMENSION;
    } catch (const cmx::StateError& e) {
        set_error(e.what());
        return CMX_ERROR_STATE;
    } catch (const cmx::IoError& e) {
        set_error(e.what());
        return CMX_ERROR_IO;
    } catch (const cmx::ValidationError& e) {
        set_error(e.what());
        return CMX_ERROR_VALIDATION;
    } catch (const std::exception& e) {
        set_error(e.what());
        return CMX_ERROR_RUNTIME;
    }
}

cmx_status require(bool ok, const char* msg) {
    if (!ok) {
        set_error(msg);
        return CMX_ERROR_CONFIG;
    }
    return CMX_OK;
}

// Totals reported for the upstream CMUNeXt release, used to annotate the
// model card with the residual accounting gap.
struct ReferenceTotals {
    const char* name;
    double params_m;
    double gflops;
};
constexpr ReferenceTotals kReference[] = {
    {"cmunext-s", 0.41, 1.09},
    {"cmunext", 3.14, 7.41},
    {"cmunext-l", 8.28, 17.18},
};

std::vector<cmx::SegmentationSample> assemble_corpus(const char* data_dir, int synthetic_count,
                                                     int synthetic_size, uint64_t synthetic_seed,
                                                     int image_size, int in_channels) {
    if (data_dir != nullptr) {
        const fs::path root(data_dir);
        return cmx::load_corpus((root / "images").string(), (root / "masks").string(), image_size,
                                in_channels);
    }
    if (synthetic_count <= 0) {
        throw cmx::ConfigError("no data source: set data_dir or a positive synthetic_count");
    }
    return cmx::generate_synthetic(synthetic_count, synthetic_size, synthetic_seed, in_channels);
}

void split_corpus(const std::vector<cmx::SegmentationSample>& corpus, double train_fraction,
                  uint64_t split_seed, const char* persist_dir,
                  std::vector<cmx::SegmentationSample>& train_set,
                  std::vector<cmx::SegmentationSample>& val_set) {
    if (train_fraction >= 1.0) {
        train_set = corpus;
        val_set.clear();
        return;
    }
    cmx::SplitAssignment assignment;
    fs::path split_file;
    if (persist_dir != nullptr) {
        split_file = fs::path(persist_dir) / ("split_seed" + std::to_string(split_seed) + ".txt");
    }
    if (!split_file.empty() && fs::exists(split_file)) {
        assignment = cmx::load_split(split_file.string());
    } else {
        cmx::SplitSpec spec;
        spec.train_fraction = train_fraction;
        spec.seeds = {split_seed};
        assignment = cmx::split(corpus, spec)[0];
        if (!split_file.empty()) {
            fs::create_directories(split_file.parent_path());
            cmx::save_split(assignment, split_file.string());
        }
    }
    train_set = cmx::select_by_ids(corpus, assignment.train_ids);
    val_set = cmx::select_by_ids(corpus, assignment.val_ids);
}

char* dup_string(const std::string& s) {
    char* out = new char[s.size() + 1];
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

std::string model_card_text(const cmx_model* model) {
    std::ostringstream os;
    os << model->impl.card().render();

    const cmx::ComplexityReport report = cmx::count_macs(
        model->impl, cmx::Shape4{1, model->impl.desc().config.in_channels, 256, 256});
    char line[160];
    std::snprintf(line, sizeof(line),
                  "complexity at 256x256: %.3f M params, %.3f GFLOPs (%.3f G conv MACs)\n",
                  report.params_m(), report.gflops(), static_cast<double>(report.conv_macs) / 1e9);
    os << line;

    for (const ReferenceTotals& ref : kReference) {
        if (model->impl.desc().config.name == ref.name &&
            model->impl.desc().encoder == cmx::EncoderStyle::CMUNeXt &&
            model->impl.desc().fusion == cmx::FusionStyle::SkipFusion) {
            std::snprintf(line, sizeof(line),
                          "upstream release reports %.2f M params, %.2f GFLOPs; the gap stems "
                          "from wiring details the release notes do not pin down\n",
                          ref.params_m, ref.gflops);
            os << line;
        }
    }
    return os.str();
}

}  // namespace

extern "C" {

const char* cmx_last_error(void) { return g_last_error.c_str(); }

const char* cmx_status_name(cmx_status status) {
    switch (status) {
        case CMX_OK: return "ok";
        case CMX_ERROR_RUNTIME: return "runtime error";
        case CMX_ERROR_CONFIG: return "configuration error";
        case CMX_ERROR_DIMENSION: return "dimension error";
        case CMX_ERROR_STATE: return "state error";
        case CMX_ERROR_IO: return "io error";
        case CMX_ERROR_VALIDATION: return "validation error";
    }
    return "unknown";
}

void cmx_string_free(char* text) { delete[] text; }

cmx_status cmx_model_create(const char* variant, int in_channels, uint64_t seed, cmx_model** out) {
    if (cmx_status s = require(variant && out, "variant and out must be non-null")) return s;
    return wrap([&] {
        cmx::VariantConfig cfg = cmx::VariantConfig::preset(variant);
        cfg.in_channels = in_channels;
        *out = new cmx_model{cmx::build_cmunext(cfg, seed)};
    });
}

cmx_status cmx_model_create_custom(const int channels[5], const int depths[5],
                                   const int kernels[5], int in_channels, uint64_t seed,
                                   cmx_model** out) {
    if (cmx_status s = require(channels && depths && kernels && out, "null argument")) return s;
    return wrap([&] {
        cmx::VariantConfig cfg;
        for (int i = 0; i < 5; ++i) {
            cfg.channels[static_cast<std::size_t>(i)] = channels[i];
            cfg.depths[static_cast<std::size_t>(i)] = depths[i];
            cfg.kernels[static_cast<std::size_t>(i)] = kernels[i];
        }
        cfg.in_channels = in_channels;
        *out = new cmx_model{cmx::build_cmunext(cfg, seed)};
    });
}

cmx_status cmx_model_create_unet(const int channels[5], int in_channels, uint64_t seed,
                                 cmx_model** out) {
    if (cmx_status s = require(channels && out, "null argument")) return s;
    return wrap([&] {
        std::array<int, 5> ch;
        for (int i = 0; i < 5; ++i) ch[static_cast<std::size_t>(i)] = channels[i];
        *out = new cmx_model{cmx::build_unet_baseline(ch, seed, in_channels)};
    });
}

cmx_status cmx_model_substitute(const cmx_model* base, const char* site, int enable,
                                cmx_model** out) {
    if (cmx_status s = require(base && site && out, "null argument")) return s;
    return wrap([&] { *out = new cmx_model{cmx::substitute_block(base->impl, site, enable != 0)}; });
}

void cmx_model_free(cmx_model* model) { delete model; }

cmx_status cmx_model_param_count(const cmx_model* model, uint64_t* trainable,
                                 uint64_t* running_stats) {
    if (cmx_status s = require(model && trainable && running_stats, "null argument")) return s;
    return wrap([&] {
        const cmx::ComplexityReport report = cmx::count_params(model->impl);
        *trainable = report.total_params;
        *running_stats = report.total_state;
    });
}

cmx_status cmx_model_card_text(const cmx_model* model, char** out_text) {
    if (cmx_status s = require(model && out_text, "null argument")) return s;
    return wrap([&] { *out_text = dup_string(model_card_text(model)); });
}

cmx_status cmx_model_forward(cmx_model* model, const float* image, int n, int c, int h, int w,
                             float* logits) {
    if (cmx_status s = require(model && image && logits, "null argument")) return s;
    return wrap([&] {
        cmx::Tensor input(cmx::Shape4{n, c, h, w});
        std::copy_n(image, input.numel(), input.data());
        const cmx::Tensor out = model->impl.forward(input, /*train=*/false);
        std::copy_n(out.data(), out.numel(), logits);
    });
}

cmx_status cmx_model_save_weights(cmx_model* model, const char* path) {
    if (cmx_status s = require(model && path, "null argument")) return s;
    return wrap([&] { cmx::save_weights(model->impl, path); });
}

cmx_status cmx_model_load_weights(cmx_model* model, const char* path) {
    if (cmx_status s = require(model && path, "null argument")) return s;
    return wrap([&] { cmx::load_weights(model->impl, path); });
}

cmx_status cmx_complexity_totals(const cmx_model* model, int height, int width, int flops_per_mac,
                                 uint64_t* total_params, uint64_t* total_ops,
                                 uint64_t* conv_macs) {
    if (cmx_status s = require(model && total_params && total_ops && conv_macs, "null argument")) {
        return s;
    }
    return wrap([&] {
        const cmx::ComplexityReport report =
            cmx::count_macs(model->impl, cmx::Shape4{1, model->impl.desc().config.in_channels,
                                                     height, width},
                            flops_per_mac);
        *total_params = report.total_params;
        *total_ops = report.total_macs * static_cast<uint64_t>(report.flops_per_mac);
        *conv_macs = report.conv_macs;
    });
}

cmx_status cmx_complexity_table(const cmx_model* model, int height, int width, int flops_per_mac,
                                char** out_text) {
    if (cmx_status s = require(model && out_text, "null argument")) return s;
    return wrap([&] {
        const cmx::ComplexityReport report =
            cmx::count_macs(model->impl, cmx::Shape4{1, model->impl.desc().config.in_channels,
                                                     height, width},
                            flops_per_mac);
        *out_text = dup_string(report.table());
    });
}

cmx_status cmx_complexity_csv(const cmx_model* model, int height, int width, int flops_per_mac,
                              const char* path) {
    if (cmx_status s = require(model && path, "null argument")) return s;
    return wrap([&] {
        const cmx::ComplexityReport report =
            cmx::count_macs(model->impl, cmx::Shape4{1, model->impl.desc().config.in_channels,
                                                     height, width},
                            flops_per_mac);
        std::ofstream os(path);
        if (!os) throw cmx::IoError(std::string("cannot write complexity file: ") + path);
        os << report.machine_lines();
    });
}

cmx_status cmx_generate_synthetic(int count, int size, uint64_t seed, const char* out_dir) {
    if (cmx_status s = require(out_dir, "out_dir must be non-null")) return s;
    return wrap([&] {
        const std::vector<cmx::SegmentationSample> corpus =
            cmx::generate_synthetic(count, size, seed);
        cmx::write_corpus(corpus, out_dir);
    });
}

void cmx_train_options_init(cmx_train_options* opts) {
    if (opts == nullptr) return;
    *opts = cmx_train_options{};
    opts->synthetic_size = 64;
    opts->synthetic_seed = 0;
    opts->image_size = 256;
    opts->train_fraction = 0.7;
    opts->epochs = 300;
    opts->batch_size = 8;
    opts->lr = 0.01f;
    opts->momentum = 0.9f;
    opts->weight_decay = 1e-4f;
    opts->poly_power = 0.9f;
    opts->augment = 1;
}

cmx_status cmx_train(cmx_model* model, const cmx_train_options* opts, double* final_train_loss,
                     double* final_val_iou) {
    if (cmx_status s = require(model && opts, "null argument")) return s;
    return wrap([&] {
        const int in_c = model->impl.desc().config.in_channels;
        const std::vector<cmx::SegmentationSample> corpus =
            assemble_corpus(opts->data_dir, opts->synthetic_count, opts->synthetic_size,
                            opts->synthetic_seed, opts->image_size, in_c);
        std::vector<cmx::SegmentationSample> train_set, val_set;
        split_corpus(corpus, opts->train_fraction, opts->split_seed, opts->out_dir, train_set,
                     val_set);

        cmx::TrainOptions topts;
        topts.epochs = opts->epochs;
        topts.batch_size = opts->batch_size;
        topts.base_lr = opts->lr;
        topts.poly_power = opts->poly_power;
        topts.momentum = opts->momentum;
        topts.weight_decay = opts->weight_decay;
        topts.augment = opts->augment != 0;
        topts.seed = opts->seed;

        const cmx::TrainRunRecord record = cmx::train(model->impl, train_set, val_set, topts);

        if (opts->out_dir != nullptr) {
            fs::create_directories(opts->out_dir);
            cmx::save_weights(model->impl, (fs::path(opts->out_dir) / "weights.bin").string());
            std::ofstream log((fs::path(opts->out_dir) / "train_log.csv").string());
            if (!log) throw cmx::IoError("cannot write train_log.csv");
            record.write_csv(log);
            std::ofstream card((fs::path(opts->out_dir) / "model_card.txt").string());
            if (!card) throw cmx::IoError("cannot write model_card.txt");
            card << model_card_text(model);
        }

        if (!record.epochs.empty()) {
            if (final_train_loss) *final_train_loss = record.epochs.back().train_loss;
            if (final_val_iou) *final_val_iou = record.epochs.back().val_iou;
        }
    });
}

void cmx_eval_options_init(cmx_eval_options* opts) {
    if (opts == nullptr) return;
    *opts = cmx_eval_options{};
    opts->synthetic_size = 64;
    opts->image_size = 256;
    opts->train_fraction = 0.7;
    opts->use_val_split = 1;
    opts->threshold = 0.5f;
}

cmx_status cmx_evaluate(cmx_model* model, const cmx_eval_options* opts, cmx_eval_result* out) {
    if (cmx_status s = require(model && opts && out, "null argument")) return s;
    return wrap([&] {
        const int in_c = model->impl.desc().config.in_channels;
        const std::vector<cmx::SegmentationSample> corpus =
            assemble_corpus(opts->data_dir, opts->synthetic_count, opts->synthetic_size,
                            opts->synthetic_seed, opts->image_size, in_c);
        std::vector<cmx::SegmentationSample> train_set, val_set;
        split_corpus(corpus, opts->train_fraction, opts->split_seed, nullptr, train_set, val_set);
        const std::vector<cmx::SegmentationSample>& samples =
            (opts->use_val_split != 0 && !val_set.empty()) ? val_set : train_set;

        cmx::MetricTotals totals;
        double loss_sum = 0.0;
        for (const cmx::SegmentationSample& s : samples) {
            const cmx::Tensor logits = model->impl.forward(s.image, /*train=*/false);
            loss_sum += cmx::bce_dice_loss(logits, s.mask).total;
            const cmx::Tensor prob = cmx::sigmoid(logits);
            totals.add(prob, s.mask, opts->threshold);

            if (opts->dump_dir != nullptr) {
                fs::create_directories(opts->dump_dir);
                const cmx::Shape4 ps = prob.shape();
                cmx::ImageU8 png;
                png.width = ps.w;
                png.height = ps.h;
                png.channels = 1;
                png.pixels.resize(static_cast<std::size_t>(ps.h) * ps.w);
                const float* p = prob.plane(0, 0);
                for (std::int64_t i = 0; i < static_cast<std::int64_t>(ps.h) * ps.w; ++i) {
                    png.pixels[static_cast<std::size_t>(i)] =
                        p[i] > opts->threshold ? 255 : 0;
                }
                cmx::write_png((fs::path(opts->dump_dir) / (s.id + ".png")).string(), png);
            }
        }
        out->loss = loss_sum / static_cast<double>(samples.size());
        out->iou = totals.iou();
        out->f1 = totals.f1();
        out->sample_count = static_cast<int>(samples.size());
    });
}

cmx_status cmx_bench(cmx_model* model, int height, int width, int warmup, int iters, double* fps) {
    if (cmx_status s = require(model && fps, "null argument")) return s;
    return wrap([&] {
        *fps = cmx::bench_fps(model->impl,
                              cmx::Shape4{1, model->impl.desc().config.in_channels, height, width},
                              warmup, iters);
    });
}

cmx_status cmx_hardware_descriptor(char** out_text) {
    if (cmx_status s = require(out_text, "null argument")) return s;
    return wrap([&] { *out_text = dup_string(cmx::hardware_descriptor()); });
}

}  // extern "C"
