/* C API for the CMUNeXt segmentation library.
 *
 * All functions return cmx_status; every failure leaves a human-readable
 * message retrievable with cmx_last_error() (thread-local). Objects are
 * opaque handles owned by the library and released with their _free call.
 */
#ifndef CMUNEXT_H
#define CMUNEXT_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define CMX_API __declspec(dllexport)
#else
#define CMX_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum cmx_status {
    CMX_OK = 0,
    CMX_ERROR_RUNTIME = 1,
    CMX_ERROR_CONFIG = 2,
    CMX_ERROR_DIMENSION = 3,
    CMX_ERROR_STATE = 4,
    CMX_ERROR_IO = 5,
    CMX_ERROR_VALIDATION = 6
} cmx_status;

typedef struct cmx_model cmx_model;

CMX_API const char* cmx_last_error(void);
CMX_API const char* cmx_status_name(cmx_status status);
CMX_API void cmx_string_free(char* text);

/* ------------------------------------------------------------------ */
/* model lifecycle                                                     */
/* ------------------------------------------------------------------ */

/* variant: "cmunext-s" | "cmunext" | "cmunext-l" */
CMX_API cmx_status cmx_model_create(const char* variant, int in_channels, uint64_t seed,
                                    cmx_model** out);
CMX_API cmx_status cmx_model_create_custom(const int channels[5], const int depths[5],
                                           const int kernels[5], int in_channels, uint64_t seed,
                                           cmx_model** out);
/* Plain U-shaped baseline with double-conv blocks. */
CMX_API cmx_status cmx_model_create_unet(const int channels[5], int in_channels, uint64_t seed,
                                         cmx_model** out);
/* Ablation switch; site is "encoder-blocks" or "skip-fusion". The result is
 * a freshly seeded model with the block style toggled. */
CMX_API cmx_status cmx_model_substitute(const cmx_model* base, const char* site, int enable,
                                        cmx_model** out);
CMX_API void cmx_model_free(cmx_model* model);

CMX_API cmx_status cmx_model_param_count(const cmx_model* model, uint64_t* trainable,
                                         uint64_t* running_stats);
CMX_API cmx_status cmx_model_card_text(const cmx_model* model, char** out_text);

/* Eval-mode forward. image is n*c*h*w floats (NCHW); logits receives n*1*h*w
 * floats. h and w must be >= 16 and divisible by 16. */
CMX_API cmx_status cmx_model_forward(cmx_model* model, const float* image, int n, int c, int h,
                                     int w, float* logits);

/* ------------------------------------------------------------------ */
/* weights container                                                   */
/* ------------------------------------------------------------------ */

CMX_API cmx_status cmx_model_save_weights(cmx_model* model, const char* path);
CMX_API cmx_status cmx_model_load_weights(cmx_model* model, const char* path);

/* ------------------------------------------------------------------ */
/* complexity accounting                                               */
/* ------------------------------------------------------------------ */

CMX_API cmx_status cmx_complexity_totals(const cmx_model* model, int height, int width,
                                         int flops_per_mac, uint64_t* total_params,
                                         uint64_t* total_ops, uint64_t* conv_macs);
CMX_API cmx_status cmx_complexity_table(const cmx_model* model, int height, int width,
                                        int flops_per_mac, char** out_text);
/* One "layer-name,params,ops" line per layer plus a total line. */
CMX_API cmx_status cmx_complexity_csv(const cmx_model* model, int height, int width,
                                      int flops_per_mac, const char* path);

/* ------------------------------------------------------------------ */
/* data                                                                */
/* ------------------------------------------------------------------ */

/* Writes images/ and masks/ PNG trees under out_dir. */
CMX_API cmx_status cmx_generate_synthetic(int count, int size, uint64_t seed, const char* out_dir);

/* ------------------------------------------------------------------ */
/* training                                                            */
/* ------------------------------------------------------------------ */

typedef struct cmx_train_options {
    /* data source: data_dir with images/ and masks/, or synthetic when NULL */
    const char* data_dir;
    int synthetic_count;
    int synthetic_size;
    uint64_t synthetic_seed;
    int image_size; /* resize target for data_dir corpora */

    /* split: train_fraction 1.0 trains on everything and validates on it */
    double train_fraction;
    uint64_t split_seed;

    int epochs;
    int batch_size;
    float lr;
    float momentum;
    float weight_decay;
    float poly_power;
    int augment;
    uint64_t seed;

    /* artifacts written here: weights.bin, train_log.csv, model_card.txt */
    const char* out_dir;
} cmx_train_options;

CMX_API void cmx_train_options_init(cmx_train_options* opts);
CMX_API cmx_status cmx_train(cmx_model* model, const cmx_train_options* opts,
                             double* final_train_loss, double* final_val_iou);

/* ------------------------------------------------------------------ */
/* evaluation / benchmarking                                           */
/* ------------------------------------------------------------------ */

typedef struct cmx_eval_options {
    const char* data_dir; /* NULL => synthetic */
    int synthetic_count;
    int synthetic_size;
    uint64_t synthetic_seed;
    int image_size;

    double train_fraction; /* 1.0 evaluates on the whole corpus */
    uint64_t split_seed;
    int use_val_split; /* nonzero: evaluate the val side, else the train side */

    float threshold;
    const char* dump_dir; /* when set, predicted masks are written as PNGs */
} cmx_eval_options;

typedef struct cmx_eval_result {
    double loss;
    double iou;
    double f1;
    int sample_count;
} cmx_eval_result;

CMX_API void cmx_eval_options_init(cmx_eval_options* opts);
CMX_API cmx_status cmx_evaluate(cmx_model* model, const cmx_eval_options* opts,
                                cmx_eval_result* out);

CMX_API cmx_status cmx_bench(cmx_model* model, int height, int width, int warmup, int iters,
                             double* fps);
CMX_API cmx_status cmx_hardware_descriptor(char** out_text);

#ifdef __cplusplus
}
#endif

#endif /* CMUNEXT_H */
