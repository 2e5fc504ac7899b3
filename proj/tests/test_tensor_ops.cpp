#include <doctest.h>

#include <cstring>

#include "cmunext/ops.hpp"
#include "cmunext/rng.hpp"
#include "support/oracles.hpp"

using cmx::ConvSpec;
using cmx::Shape4;
using cmx::Tensor;

TEST_CASE("tensor shape and data length must agree") {
    CHECK_NOTHROW(Tensor(Shape4{1, 2, 3, 4}));
    CHECK_THROWS_AS(Tensor(Shape4{1, 1, 2, 2}, std::vector<float>{1.0f, 2.0f, 3.0f}),
                    cmx::DimensionError);
    Tensor t(Shape4{2, 3, 4, 5});
    CHECK(t.numel() == 120);
    CHECK(t.grad() == nullptr);
    t.set_requires_grad(true);
    CHECK(t.grad() != nullptr);
}

TEST_CASE("gradient accumulation is additive") {
    Tensor t(Shape4{1, 1, 2, 2});
    Tensor g(Shape4{1, 1, 2, 2}, std::vector<float>{1, 2, 3, 4});
    t.accumulate_grad(g);
    t.accumulate_grad(g);
    CHECK(t.grad()[0] == 2.0f);
    CHECK(t.grad()[3] == 8.0f);
    t.zero_grad();
    CHECK(t.grad()[3] == 0.0f);
    Tensor bad(Shape4{1, 1, 1, 4}, std::vector<float>{1, 2, 3, 4});
    CHECK_THROWS_AS(t.accumulate_grad(bad), cmx::DimensionError);
}

TEST_CASE("conv spec validation names the offending field") {
    ConvSpec even{4, 4, 2, 1, 0, 1, true};
    CHECK_THROWS_WITH_AS(even.validate(),
                         "conv spec: kernel must be a positive odd integer, got 2",
                         cmx::ConfigError);
    ConvSpec bad_groups{4, 6, 3, 1, 1, 4, true};
    CHECK_THROWS_AS(bad_groups.validate(), cmx::ConfigError);
    ConvSpec ok{4, 8, 3, 1, 1, 2, true};
    CHECK_NOTHROW(ok.validate());
    CHECK(ok.output_shape(Shape4{1, 4, 8, 8}) == Shape4{1, 8, 8, 8});
    CHECK_THROWS_AS(ok.output_shape(Shape4{1, 3, 8, 8}), cmx::DimensionError);
}

TEST_CASE("gelu values") {
    Tensor x(Shape4{1, 1, 1, 3}, std::vector<float>{0.0f, 10.0f, 1.0f});
    Tensor y = cmx::gelu(x);
    CHECK(y.data()[0] == 0.0f);
    CHECK(y.data()[1] == doctest::Approx(10.0f).epsilon(1e-7));
    CHECK(y.data()[2] == doctest::Approx(0.841345).epsilon(1e-5));
}

TEST_CASE("relu values") {
    Tensor x(Shape4{1, 1, 1, 3}, std::vector<float>{-1.0f, 2.0f, 0.0f});
    Tensor y = cmx::relu(x);
    CHECK(y.data()[0] == 0.0f);
    CHECK(y.data()[1] == 2.0f);
    CHECK(y.data()[2] == 0.0f);
}

TEST_CASE("sigmoid stability and symmetry") {
    Tensor x(Shape4{1, 1, 1, 4}, std::vector<float>{0.0f, 500.0f, -500.0f, 3.0f});
    Tensor y = cmx::sigmoid(x);
    CHECK(y.data()[0] == 0.5f);
    CHECK(y.data()[1] == 1.0f);
    CHECK(y.data()[2] == 0.0f);
    CHECK(std::isfinite(y.data()[1]));
    CHECK(std::isfinite(y.data()[2]));

    // sigmoid(-x) == 1 - sigmoid(x) on random draws
    Tensor r(Shape4{1, 1, 1, 256});
    oracle::fill_uniform(r, 11, -8.0f, 8.0f);
    Tensor neg(r.shape());
    for (std::int64_t i = 0; i < r.numel(); ++i) neg.data()[i] = -r.data()[i];
    Tensor a = cmx::sigmoid(r);
    Tensor b = cmx::sigmoid(neg);
    for (std::int64_t i = 0; i < r.numel(); ++i) {
        CHECK(b.data()[i] == doctest::Approx(1.0f - a.data()[i]).epsilon(1e-7));
    }
}

TEST_CASE("batchnorm train mode normalizes with batch statistics") {
    cmx::BatchNormState state(1);

    SUBCASE("gamma zero collapses output to beta") {
        state.gamma[0] = 0.0f;
        state.beta[0] = 0.7f;
        Tensor x(Shape4{1, 1, 2, 2}, std::vector<float>{5, -3, 11, 2});
        Tensor y = cmx::batchnorm2d(x, state);
        for (std::int64_t i = 0; i < y.numel(); ++i) {
            CHECK(y.data()[i] == doctest::Approx(0.7f));
        }
    }

    SUBCASE("values {1,3} normalize to {-1,+1}") {
        Tensor x(Shape4{1, 1, 1, 2}, std::vector<float>{1.0f, 3.0f});
        Tensor y = cmx::batchnorm2d(x, state);
        CHECK(y.data()[0] == doctest::Approx(-1.0).epsilon(1e-4));
        CHECK(y.data()[1] == doctest::Approx(1.0).epsilon(1e-4));
    }

    SUBCASE("running stats update with momentum 0.1") {
        Tensor x(Shape4{1, 1, 1, 2}, std::vector<float>{1.0f, 3.0f});
        cmx::batchnorm2d(x, state);
        CHECK(state.running_mean[0] == doctest::Approx(0.9f * 0.0f + 0.1f * 2.0f));
        CHECK(state.running_var[0] == doctest::Approx(0.9f * 1.0f + 0.1f * 1.0f));
    }

    SUBCASE("degenerate single-value batch is rejected in train mode") {
        Tensor x(Shape4{1, 1, 1, 1}, std::vector<float>{1.0f});
        CHECK_THROWS_AS(cmx::batchnorm2d(x, state), cmx::StateError);
        state.mode = cmx::Mode::Eval;
        CHECK_NOTHROW(cmx::batchnorm2d(x, state));
    }
}

TEST_CASE("batchnorm eval mode with standard-normal running stats is near identity") {
    cmx::BatchNormState state(2);
    state.mode = cmx::Mode::Eval;
    Tensor x(Shape4{1, 2, 2, 2});
    oracle::fill_uniform(x, 3, -2.0f, 2.0f);
    Tensor y = cmx::batchnorm2d(x, state);
    for (std::int64_t i = 0; i < x.numel(); ++i) {
        CHECK(y.data()[i] == doctest::Approx(x.data()[i]).epsilon(1e-5));
    }
    // identical input, identical output
    Tensor y2 = cmx::batchnorm2d(x, state);
    CHECK(std::memcmp(y.data(), y2.data(), sizeof(float) * static_cast<std::size_t>(y.numel())) ==
          0);
}

TEST_CASE("batchnorm matches the double-precision reference") {
    Tensor x(Shape4{2, 3, 4, 4});
    oracle::fill_uniform(x, 17, -2.0f, 3.0f);
    cmx::BatchNormState state(3);
    state.gamma = {1.3f, 0.7f, -0.4f};
    state.beta = {0.1f, -0.2f, 0.5f};
    Tensor y = cmx::batchnorm2d(x, state);

    const oracle::DTensor ref = oracle::batchnorm_train_ref(
        oracle::to_double(x), {1.3, 0.7, -0.4}, {0.1, -0.2, 0.5}, 1e-5);
    for (std::int64_t i = 0; i < y.numel(); ++i) {
        CHECK(y.data()[i] ==
              doctest::Approx(ref.data[static_cast<std::size_t>(i)]).epsilon(1e-5));
    }
}

TEST_CASE("maxpool windows, ties and errors") {
    SUBCASE("single window") {
        Tensor x(Shape4{1, 1, 2, 2}, std::vector<float>{1, 2, 3, 4});
        Tensor y = cmx::maxpool2x2(x);
        CHECK(y.shape() == Shape4{1, 1, 1, 1});
        CHECK(y.data()[0] == 4.0f);
    }
    SUBCASE("constant input stays constant at half resolution") {
        Tensor x(Shape4{1, 2, 4, 4}, 2.5f);
        Tensor y = cmx::maxpool2x2(x);
        CHECK(y.shape() == Shape4{1, 2, 2, 2});
        for (std::int64_t i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == 2.5f);
    }
    SUBCASE("4x4 ramp") {
        std::vector<float> ramp(16);
        for (int i = 0; i < 16; ++i) ramp[static_cast<std::size_t>(i)] = static_cast<float>(i);
        Tensor x(Shape4{1, 1, 4, 4}, ramp);
        Tensor y = cmx::maxpool2x2(x);
        CHECK(y.data()[0] == 5.0f);
        CHECK(y.data()[1] == 7.0f);
        CHECK(y.data()[2] == 13.0f);
        CHECK(y.data()[3] == 15.0f);
    }
    SUBCASE("odd dimensions are a dimension error") {
        Tensor x(Shape4{1, 1, 3, 4});
        CHECK_THROWS_AS(cmx::maxpool2x2(x), cmx::DimensionError);
    }
    SUBCASE("ties route gradient to the first window element in row-major order") {
        Tensor x(Shape4{1, 1, 2, 2}, std::vector<float>{1, 1, 1, 1});
        cmx::MaxPoolContext ctx;
        cmx::maxpool2x2(x, &ctx);
        Tensor go(Shape4{1, 1, 1, 1}, std::vector<float>{5.0f});
        Tensor gi = cmx::maxpool2x2_backward(go, ctx);
        CHECK(gi.data()[0] == 5.0f);
        CHECK(gi.data()[1] == 0.0f);
        CHECK(gi.data()[2] == 0.0f);
        CHECK(gi.data()[3] == 0.0f);
    }
}

TEST_CASE("bilinear upsample forced values") {
    SUBCASE("constants interpolate to constants") {
        Tensor x(Shape4{2, 3, 4, 4}, 1.25f);
        Tensor y = cmx::bilinear_upsample2x(x);
        CHECK(y.shape() == Shape4{2, 3, 8, 8});
        for (std::int64_t i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == doctest::Approx(1.25f));
    }
    SUBCASE("row [0,1] maps to [0, 0.25, 0.75, 1]") {
        Tensor x(Shape4{1, 1, 1, 2}, std::vector<float>{0.0f, 1.0f});
        Tensor y = cmx::bilinear_upsample2x(x);
        CHECK(y.shape() == Shape4{1, 1, 2, 4});
        CHECK(y.data()[0] == doctest::Approx(0.0f));
        CHECK(y.data()[1] == doctest::Approx(0.25f));
        CHECK(y.data()[2] == doctest::Approx(0.75f));
        CHECK(y.data()[3] == doctest::Approx(1.0f));
    }
    SUBCASE("backward of all-ones grad sums to the output element count") {
        Tensor go(Shape4{1, 2, 8, 8}, 1.0f);
        Tensor gi = cmx::bilinear_upsample2x_backward(go);
        CHECK(gi.shape() == Shape4{1, 2, 4, 4});
        double total = 0.0;
        for (std::int64_t i = 0; i < gi.numel(); ++i) total += gi.data()[i];
        // interpolation weights partition unity; 4x more outputs than inputs
        CHECK(total == doctest::Approx(4.0 * gi.numel()).epsilon(1e-6));
    }
    SUBCASE("matches the double-precision reference") {
        Tensor x(Shape4{1, 2, 5, 7});
        oracle::fill_uniform(x, 23);
        Tensor y = cmx::bilinear_upsample2x(x);
        const oracle::DTensor ref = oracle::upsample2x_ref(oracle::to_double(x));
        for (std::int64_t i = 0; i < y.numel(); ++i) {
            CHECK(y.data()[i] ==
                  doctest::Approx(ref.data[static_cast<std::size_t>(i)]).epsilon(1e-6));
        }
    }
}

TEST_CASE("concat joins channels with a's channels first") {
    Tensor a(Shape4{1, 2, 4, 4});
    Tensor b(Shape4{1, 3, 4, 4});
    oracle::fill_uniform(a, 5);
    oracle::fill_uniform(b, 6);
    Tensor c = cmx::concat_channels(a, b);
    CHECK(c.shape() == Shape4{1, 5, 4, 4});

    auto [ga, gb] = cmx::concat_channels_backward(c, 2);
    CHECK(std::memcmp(ga.data(), a.data(), sizeof(float) * static_cast<std::size_t>(a.numel())) ==
          0);
    CHECK(std::memcmp(gb.data(), b.data(), sizeof(float) * static_cast<std::size_t>(b.numel())) ==
          0);

    Tensor bad(Shape4{1, 3, 2, 4});
    CHECK_THROWS_WITH_AS(cmx::concat_channels(a, bad),
                         "concat_channels: inputs must agree on N,H,W: 1x2x4x4 vs 1x3x2x4",
                         cmx::DimensionError);
}

TEST_CASE("residual add and its cancellation") {
    Tensor a(Shape4{1, 2, 3, 3});
    oracle::fill_uniform(a, 9);
    Tensor zero(a.shape(), 0.0f);
    Tensor sum = cmx::residual_add(a, zero);
    CHECK(std::memcmp(sum.data(), a.data(), sizeof(float) * static_cast<std::size_t>(a.numel())) ==
          0);

    Tensor neg(a.shape());
    for (std::int64_t i = 0; i < a.numel(); ++i) neg.data()[i] = -a.data()[i];
    Tensor cancelled = cmx::residual_add(a, neg);
    for (std::int64_t i = 0; i < a.numel(); ++i) CHECK(cancelled.data()[i] == 0.0f);

    Tensor bad(Shape4{1, 2, 3, 4});
    CHECK_THROWS_AS(cmx::residual_add(a, bad), cmx::DimensionError);
}

TEST_CASE("seeded rng is reproducible") {
    cmx::Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) {
        CHECK(a.uniform() == b.uniform());
    }
    cmx::Rng c(43);
    bool any_diff = false;
    for (int i = 0; i < 16; ++i) {
        if (a.uniform() != c.uniform()) any_diff = true;
    }
    CHECK(any_diff);
}
