#include <chrono>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "cmunext/metrics.hpp"
#include "cmunext/train.hpp"

namespace cmx {

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

LossResult bce_dice_loss(const Tensor& logits, const Tensor& target) {
    check_same_shape(logits.shape(), target.shape(), "loss target");
    const std::int64_t m = logits.numel();
    if (m == 0) {
        throw ValidationError("bce_dice_loss: empty tensors");
    }
    const float* z = logits.data();
    const float* y = target.data();
    for (std::int64_t i = 0; i < m; ++i) {
        if (y[i] != 0.0f && y[i] != 1.0f) {
            throw ValidationError("bce_dice_loss: target must be binary, found " +
                                  std::to_string(y[i]));
        }
    }

    Tensor prob = sigmoid(logits);
    const float* p = prob.data();

    double bce = 0.0;
    double sum_p = 0.0, sum_y = 0.0, sum_py = 0.0;
    for (std::int64_t i = 0; i < m; ++i) {
        const double zi = z[i];
        bce += std::max(zi, 0.0) - zi * y[i] + std::log1p(std::exp(-std::abs(zi)));
        sum_p += p[i];
        sum_y += y[i];
        sum_py += static_cast<double>(p[i]) * y[i];
    }
    bce /= static_cast<double>(m);

    const double smooth = 1.0;
    const double a = 2.0 * sum_py + smooth;
    const double b = sum_p + sum_y + smooth;
    const double dice = 1.0 - a / b;

    LossResult res;
    res.bce = bce;
    res.dice = dice;
    res.total = 0.5 * bce + dice;

    res.grad_logits = Tensor(logits.shape());
    float* g = res.grad_logits.data();
    const float inv_m = 1.0f / static_cast<float>(m);
    const double inv_b2 = 1.0 / (b * b);
    for (std::int64_t i = 0; i < m; ++i) {
        const double dd_dp = (a - 2.0 * y[i] * b) * inv_b2;
        const float ds_dz = p[i] * (1.0f - p[i]);
        g[i] = 0.5f * (p[i] - y[i]) * inv_m + static_cast<float>(dd_dp) * ds_dz;
    }
    return res;
}

// ---------------------------------------------------------------------------
// Optimizer / schedule
// ---------------------------------------------------------------------------

void sgd_step(std::vector<Parameter>& params, float lr, const SgdOptions& opts) {
    for (Parameter& p : params) {
        if (p.grad == nullptr) {
            throw StateError("sgd_step: parameter '" + p.name + "' has no gradient");
        }
        if (p.momentum->empty()) {
            p.momentum->assign(static_cast<std::size_t>(p.size), 0.0f);
        }
        float* v = p.momentum->data();
        for (std::int64_t i = 0; i < p.size; ++i) {
            v[i] = opts.momentum * v[i] + (p.grad[i] + opts.weight_decay * p.value[i]);
            p.value[i] -= lr * v[i];
        }
    }
}

float PolySchedule::lr() const {
    if (current_iter < 0 || current_iter > max_iters) {
        throw StateError("poly schedule: current_iter outside [0, max_iters]");
    }
    const double frac = 1.0 - static_cast<double>(current_iter) / static_cast<double>(max_iters);
    return static_cast<float>(base_lr * std::pow(frac, static_cast<double>(power)));
}

void PolySchedule::step() {
    if (current_iter < max_iters) {
        ++current_iter;
    }
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

Tensor rotate90(const Tensor& t, int quarter_turns) {
    const int k = ((quarter_turns % 4) + 4) % 4;
    if (k == 0) return t;
    const Shape4 in = t.shape();
    const Shape4 os = (k == 2) ? in : Shape4{in.n, in.c, in.w, in.h};
    Tensor out(os);
    for (int n = 0; n < in.n; ++n) {
        for (int c = 0; c < in.c; ++c) {
            const float* src = t.plane(n, c);
            float* dst = out.plane(n, c);
            for (int y = 0; y < os.h; ++y) {
                for (int x = 0; x < os.w; ++x) {
                    int sy = 0, sx = 0;
                    if (k == 1) {  // 90 degrees clockwise
                        sy = in.h - 1 - x;
                        sx = y;
                    } else if (k == 2) {
                        sy = in.h - 1 - y;
                        sx = in.w - 1 - x;
                    } else {  // 270 degrees clockwise
                        sy = x;
                        sx = in.w - 1 - y;
                    }
                    dst[static_cast<std::int64_t>(y) * os.w + x] =
                        src[static_cast<std::int64_t>(sy) * in.w + sx];
                }
            }
        }
    }
    return out;
}

Tensor flip_h(const Tensor& t) {
    const Shape4 s = t.shape();
    Tensor out(s);
    for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
            const float* src = t.plane(n, c);
            float* dst = out.plane(n, c);
            for (int y = 0; y < s.h; ++y) {
                for (int x = 0; x < s.w; ++x) {
                    dst[static_cast<std::int64_t>(y) * s.w + x] =
                        src[static_cast<std::int64_t>(y) * s.w + (s.w - 1 - x)];
                }
            }
        }
    }
    return out;
}

Tensor flip_v(const Tensor& t) {
    const Shape4 s = t.shape();
    Tensor out(s);
    for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
            const float* src = t.plane(n, c);
            float* dst = out.plane(n, c);
            for (int y = 0; y < s.h; ++y) {
                const float* src_row = src + static_cast<std::int64_t>(s.h - 1 - y) * s.w;
                std::copy_n(src_row, s.w, dst + static_cast<std::int64_t>(y) * s.w);
            }
        }
    }
    return out;
}

SegmentationSample augment(const SegmentationSample& sample, Rng& rng) {
    check_same_shape(Shape4{1, 1, sample.image.shape().h, sample.image.shape().w},
                     Shape4{1, 1, sample.mask.shape().h, sample.mask.shape().w},
                     "augment image/mask");
    const int turns = rng.uniform_int(4);
    const bool hf = rng.coin();
    const bool vf = rng.coin();

    SegmentationSample out;
    out.id = sample.id;
    out.image = rotate90(sample.image, turns);
    out.mask = rotate90(sample.mask, turns);
    if (hf) {
        out.image = flip_h(out.image);
        out.mask = flip_h(out.mask);
    }
    if (vf) {
        out.image = flip_v(out.image);
        out.mask = flip_v(out.mask);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Train / evaluate loops
// ---------------------------------------------------------------------------

namespace {

void stack_batch(const std::vector<SegmentationSample>& set, const std::vector<int>& order,
                 std::size_t first, std::size_t count, bool do_augment, Rng& aug_rng,
                 Tensor& images, Tensor& masks) {
    const Shape4 is = set[static_cast<std::size_t>(order[first])].image.shape();
    const Shape4 ms = set[static_cast<std::size_t>(order[first])].mask.shape();
    images = Tensor(Shape4{static_cast<int>(count), is.c, is.h, is.w});
    masks = Tensor(Shape4{static_cast<int>(count), ms.c, ms.h, ms.w});
    for (std::size_t b = 0; b < count; ++b) {
        const SegmentationSample& s = set[static_cast<std::size_t>(order[first + b])];
        const SegmentationSample* use = &s;
        SegmentationSample tmp;
        if (do_augment) {
            tmp = augment(s, aug_rng);
            use = &tmp;
        }
        check_same_shape(use->image.shape(), is, "batch image");
        std::copy_n(use->image.data(), is.numel(),
                    images.data() + static_cast<std::int64_t>(b) * is.numel());
        std::copy_n(use->mask.data(), ms.numel(),
                    masks.data() + static_cast<std::int64_t>(b) * ms.numel());
    }
}

}  // namespace

EvalStats evaluate(Model& model, const std::vector<SegmentationSample>& samples) {
    if (samples.empty()) {
        throw ValidationError("evaluate: empty sample set");
    }
    MetricTotals totals;
    double loss_sum = 0.0;
    for (const SegmentationSample& s : samples) {
        Tensor logits = model.forward(s.image, /*train=*/false);
        LossResult loss = bce_dice_loss(logits, s.mask);
        loss_sum += loss.total;
        totals.add(sigmoid(logits), s.mask);
    }
    return EvalStats{loss_sum / static_cast<double>(samples.size()), totals.iou(), totals.f1()};
}

TrainRunRecord train(Model& model, const std::vector<SegmentationSample>& train_set,
                     const std::vector<SegmentationSample>& val_set, const TrainOptions& opts) {
    if (train_set.empty()) {
        throw ValidationError("train: empty dataset");
    }
    if (opts.epochs <= 0 || opts.batch_size <= 0) {
        throw ConfigError("train: epochs and batch_size must be positive");
    }

    const std::size_t n = train_set.size();
    const std::int64_t batches_per_epoch =
        static_cast<std::int64_t>((n + static_cast<std::size_t>(opts.batch_size) - 1) /
                                  static_cast<std::size_t>(opts.batch_size));
    PolySchedule sched{opts.base_lr, opts.epochs * batches_per_epoch, opts.poly_power, 0};
    SgdOptions sgd{opts.momentum, opts.weight_decay};
    std::vector<Parameter> params = model.parameters();

    Rng order_rng(opts.seed);
    Rng aug_rng(opts.seed ^ 0x9e3779b97f4a7c15ull);

    const auto t0 = std::chrono::steady_clock::now();
    TrainRunRecord record;
    record.seed = opts.seed;

    std::vector<int> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<int>(i);

    std::int64_t iter = 0;
    for (int epoch = 1; epoch <= opts.epochs; ++epoch) {
        order_rng.shuffle(order);
        double epoch_loss = 0.0;
        double last_lr = 0.0;
        int batches = 0;

        for (std::size_t first = 0; first < n; first += static_cast<std::size_t>(opts.batch_size)) {
            const std::size_t count = std::min(static_cast<std::size_t>(opts.batch_size), n - first);
            Tensor images, masks;
            stack_batch(train_set, order, first, count, opts.augment, aug_rng, images, masks);

            model.zero_grad();
            Tensor logits = model.forward(images, /*train=*/true);
            LossResult loss = bce_dice_loss(logits, masks);
            if (!std::isfinite(loss.total)) {
                LayerTrace trace;
                model.forward(images, /*train=*/true, &trace);
                const auto layer = trace.first_nonfinite();
                throw Error("train: non-finite loss at iteration " + std::to_string(iter) +
                            "; first non-finite layer: " + layer.value_or("loss"));
            }
            model.backward(loss.grad_logits);

            const float lr = sched.lr();
            sched.step();
            sgd_step(params, lr, sgd);

            epoch_loss += loss.total;
            last_lr = lr;
            ++batches;
            ++iter;
        }

        EvalStats val = evaluate(model, val_set.empty() ? train_set : val_set);
        record.epochs.push_back(EpochRecord{epoch, epoch_loss / batches, val.loss, val.iou, val.f1,
                                            last_lr});
    }

    record.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return record;
}

void TrainRunRecord::write_csv(std::ostream& os) const {
    os << "epoch,train_loss,val_loss,val_iou,val_f1,lr\n";
    char buf[192];
    for (const EpochRecord& e : epochs) {
        std::snprintf(buf, sizeof(buf), "%d,%.8f,%.8f,%.6f,%.6f,%.8f\n", e.epoch, e.train_loss,
                      e.val_loss, e.val_iou, e.val_f1, e.lr);
        os << buf;
    }
}

}  // namespace cmx
