#ifndef CMUNEXT_TRAIN_HPP
#define CMUNEXT_TRAIN_HPP

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "cmunext/data.hpp"
#include "cmunext/model.hpp"
#include "cmunext/rng.hpp"

namespace cmx {

// 0.5 * BCE(logits, y) + Dice(sigmoid(logits), y). BCE is the overflow-safe
// from-logits form averaged over all pixels; Dice uses smooth = 1 with sums
// over the whole batch. Target must be strictly binary.
struct LossResult {
    double total = 0.0;
    double bce = 0.0;
    double dice = 0.0;
    Tensor grad_logits;
};
LossResult bce_dice_loss(const Tensor& logits, const Tensor& target);

// Classic momentum SGD with L2 folded into the gradient:
//   v <- momentum * v + (grad + weight_decay * w);  w <- w - lr * v
struct SgdOptions {
    float momentum = 0.9f;
    float weight_decay = 1e-4f;
};
void sgd_step(std::vector<Parameter>& params, float lr, const SgdOptions& opts);

// lr = base_lr * (1 - current_iter / max_iters) ^ power
struct PolySchedule {
    float base_lr = 0.01f;
    std::int64_t max_iters = 1;
    float power = 0.9f;
    std::int64_t current_iter = 0;

    float lr() const;
    void step();
};

// Pixel permutations shared by image and mask.
Tensor rotate90(const Tensor& t, int quarter_turns);  // clockwise, turns mod 4
Tensor flip_h(const Tensor& t);
Tensor flip_v(const Tensor& t);

// Right-angle rotation (each quarter-turn with probability 1/4) plus
// independent horizontal and vertical flips at probability 1/2. Image and
// mask receive the same transform; the mask stays binary.
SegmentationSample augment(const SegmentationSample& sample, Rng& rng);

struct TrainOptions {
    int epochs = 300;
    int batch_size = 8;
    float base_lr = 0.01f;
    float poly_power = 0.9f;
    float momentum = 0.9f;
    float weight_decay = 1e-4f;
    bool augment = true;
    std::uint64_t seed = 0;
};

struct EpochRecord {
    int epoch = 0;  // 1-based
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_iou = 0.0;
    double val_f1 = 0.0;
    double lr = 0.0;
};

struct TrainRunRecord {
    std::vector<EpochRecord> epochs;
    double wall_seconds = 0.0;
    std::uint64_t seed = 0;

    void write_csv(std::ostream& os) const;  // epoch,train_loss,val_loss,val_iou,val_f1,lr
};

// Per-iteration: augment -> forward (train mode) -> loss -> backward -> poly
// LR -> SGD step; one eval-mode validation pass per epoch. A non-finite loss
// aborts with an Error naming the first layer that produced it.
TrainRunRecord train(Model& model, const std::vector<SegmentationSample>& train_set,
                     const std::vector<SegmentationSample>& val_set, const TrainOptions& opts);

// Eval-mode pass over a sample set; returns (loss, iou, f1).
struct EvalStats {
    double loss = 0.0;
    double iou = 0.0;
    double f1 = 0.0;
};
EvalStats evaluate(Model& model, const std::vector<SegmentationSample>& samples);

}  // namespace cmx

#endif
