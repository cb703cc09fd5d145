#include <gtest/gtest.h>

#include <random>

#include "cgraseg/kernels.hpp"
#include "oracle.hpp"

using namespace cgraseg;

namespace {

QTensor const_activation(TensorShape shape, const QuantParams& p, std::int32_t q) {
    QTensor t = QTensor::activation(shape, p);
    for (auto& v : t.data) v = q;
    return t;
}

QTensor weight_tensor(std::vector<std::uint32_t> dims, const QuantParams& p,
                      std::vector<std::int32_t> data) {
    QTensor t;
    t.dims = std::move(dims);
    t.params = p;
    t.data = std::move(data);
    return t;
}

// Identity pointwise conv: weight code 64 at scale 1/64 represents real 1.0.
QTensor identity_pointwise(std::uint32_t channels) {
    std::vector<std::int32_t> data(static_cast<std::size_t>(channels) * channels, 0);
    for (std::uint32_t c = 0; c < channels; ++c) data[c * channels + c] = 64;
    return weight_tensor({1, 1, channels, channels}, {1.0 / 64.0, 0, 8}, std::move(data));
}

} // namespace

TEST(ConvQ, IdentityPointwise) {
    std::mt19937 rng(1);
    const QuantParams p{0.05, 3, 8};
    const QTensor x = oracle::random_activation(rng, {5, 4, 3}, p);
    const std::vector<std::int32_t> bias(3, 0);
    const QTensor y = conv2d_q(x, identity_pointwise(3), bias, Conv2D{1, 1, 1, 1, 1, 3}, p);
    EXPECT_EQ(y.data, x.data);
}

TEST(ConvQ, AllZeroInputYieldsOutputZeroPoint) {
    const QuantParams in_p{0.1, -7, 8};
    const QuantParams out_p{0.2, 11, 8};
    const QTensor x = const_activation({6, 6, 2}, in_p, in_p.zero_point); // real 0 everywhere
    std::mt19937 rng(2);
    std::vector<std::int32_t> wdata(3 * 3 * 2 * 4);
    for (auto& v : wdata) v = static_cast<std::int32_t>(rng() % 31) - 15;
    const QTensor w = weight_tensor({3, 3, 2, 4}, {1.0 / 32.0, 0, 8}, std::move(wdata));
    const std::vector<std::int32_t> bias(4, 0);
    const QTensor y = conv2d_q(x, w, bias, Conv2D{3, 3, 1, 1, 1, 4}, out_p);
    for (std::int32_t v : y.data) EXPECT_EQ(v, out_p.zero_point);
}

TEST(ConvQ, DepthwiseDilatedMatchesOracle) {
    std::mt19937 rng(3);
    const QuantParams in_p = calibrate_affine(-2.0, 2.0, 8);
    for (int iter = 0; iter < 200; ++iter) {
        const QTensor x = oracle::random_activation(rng, {6, 6, 4}, in_p);
        std::vector<std::int32_t> wdata(3 * 3 * 1 * 4);
        for (auto& v : wdata) v = static_cast<std::int32_t>(rng() % 41) - 20;
        const QTensor w = weight_tensor({3, 3, 1, 4}, {1.0 / 32.0, 0, 8}, std::move(wdata));
        std::vector<std::int32_t> bias(4);
        for (auto& b : bias) b = static_cast<std::int32_t>(rng() % 201) - 100;
        const Conv2D spec{3, 3, 1, 2, 4, 4};
        const QuantParams out_p{in_p.scale * w.params.scale * 200, 0, 8};
        const QTensor got = conv2d_q(x, w, bias, spec, out_p);
        const QTensor want = oracle::conv2d(x, w, bias, spec, out_p);
        EXPECT_LE(oracle::max_lsb_diff(got, want), 1) << "iteration " << iter;
    }
}

TEST(ConvQ, ShapeMismatchesRejected) {
    const QuantParams p{1.0, 0, 8};
    const QTensor x = const_activation({4, 4, 3}, p, 0);
    const QTensor w = identity_pointwise(3);
    EXPECT_THROW(conv2d_q(x, w, std::vector<std::int32_t>(2, 0), Conv2D{1, 1, 1, 1, 1, 3}, p),
                 ShapeError);
    EXPECT_THROW(conv2d_q(x, w, std::vector<std::int32_t>(4, 0), Conv2D{1, 1, 1, 1, 1, 4}, p),
                 ShapeError);
    EXPECT_THROW(conv2d_q(x, w, std::vector<std::int32_t>(3, 0), Conv2D{1, 1, 1, 1, 2, 3}, p),
                 ShapeError);
}

TEST(PoolQ, TwoByTwoExamples) {
    const QuantParams p{1.0, 0, 8};
    QTensor x = QTensor::activation({2, 2, 1}, p);
    x.at(0, 0, 0) = 1;
    x.at(0, 1, 0) = 2;
    x.at(1, 0, 0) = 3;
    x.at(1, 1, 0) = 4;
    EXPECT_EQ(pool_q(x, PoolOp::kMax, 2, 2).data, std::vector<std::int32_t>{4});

    const QTensor ones = const_activation({2, 2, 1}, p, 1);
    EXPECT_EQ(pool_q(ones, PoolOp::kAvg, 2, 2).data, std::vector<std::int32_t>{1});
}

TEST(PoolQ, AvgMatchesOracle) {
    std::mt19937 rng(5);
    const QuantParams p = calibrate_affine(-3.0, 3.0, 8);
    for (int iter = 0; iter < 200; ++iter) {
        const QTensor x = oracle::random_activation(rng, {8, 8, 3}, p);
        const QTensor got = pool_q(x, PoolOp::kAvg, 2, 2);
        const QTensor want = oracle::pool(x, PoolOp::kAvg, 2, 2);
        EXPECT_LE(oracle::max_lsb_diff(got, want), 1);
    }
}

TEST(PoolQ, WindowBoundsChecked) {
    const QTensor x = const_activation({2, 2, 1}, {1.0, 0, 8}, 0);
    EXPECT_THROW(pool_q(x, PoolOp::kMax, 3, 1), ShapeError);
}

TEST(GlobalPoolQ, ConstantAndOneHot) {
    const QuantParams p{0.25, -4, 8};
    const QTensor c = const_activation({7, 5, 3}, p, 17);
    for (PoolOp op : {PoolOp::kAvg, PoolOp::kMax}) {
        const QTensor y = global_pool_q(c, op);
        EXPECT_EQ(y.shape(), (TensorShape{1, 1, 3}));
        for (std::int32_t v : y.data) EXPECT_EQ(v, 17);
    }

    QTensor onehot = const_activation({4, 4, 2}, p, -4);
    onehot.at(2, 1, 0) = 99;
    onehot.at(0, 3, 1) = 42;
    const QTensor y = global_pool_q(onehot, PoolOp::kMax);
    EXPECT_EQ(y.at(0, 0, 0), 99);
    EXPECT_EQ(y.at(0, 0, 1), 42);
}

TEST(GlobalPoolQ, AvgMatchesOracle) {
    std::mt19937 rng(7);
    const QuantParams p = calibrate_affine(-1.0, 1.0, 8);
    for (int iter = 0; iter < 200; ++iter) {
        const QTensor x = oracle::random_activation(rng, {16, 16, 8}, p);
        EXPECT_LE(oracle::max_lsb_diff(global_pool_q(x, PoolOp::kAvg),
                                       oracle::global_pool(x, PoolOp::kAvg)),
                  1);
    }
}

TEST(UpsampleQ, ReplicatesBlocks) {
    const QuantParams p{1.0, 0, 8};
    QTensor x = QTensor::activation({2, 2, 1}, p);
    x.at(0, 0, 0) = 10;
    x.at(0, 1, 0) = 20;
    x.at(1, 0, 0) = 30;
    x.at(1, 1, 0) = 40;
    const QTensor y = upsample_nearest_q(x, 2);
    ASSERT_EQ(y.shape(), (TensorShape{4, 4, 1}));
    for (std::uint32_t yy = 0; yy < 4; ++yy) {
        for (std::uint32_t xx = 0; xx < 4; ++xx) {
            EXPECT_EQ(y.at(yy, xx, 0), x.at(yy / 2, xx / 2, 0));
        }
    }
}

TEST(UpsampleQ, MaxPoolInverts) {
    std::mt19937 rng(9);
    const QuantParams p = calibrate_affine(-2.0, 2.0, 8);
    const QTensor x = oracle::random_activation(rng, {5, 6, 3}, p);
    const QTensor roundtrip = pool_q(upsample_nearest_q(x, 2), PoolOp::kMax, 2, 2);
    EXPECT_EQ(roundtrip.data, x.data);
}

TEST(UpsampleQ, PositionalOracle) {
    std::mt19937 rng(11);
    const QuantParams p = calibrate_affine(-1.0, 1.0, 8);
    for (std::uint32_t factor : {2u, 3u, 4u}) {
        const QTensor x = oracle::random_activation(rng, {4, 5, 2}, p);
        const QTensor y = upsample_nearest_q(x, factor);
        for (std::uint32_t yy = 0; yy < y.h(); ++yy) {
            for (std::uint32_t xx = 0; xx < y.w(); ++xx) {
                for (std::uint32_t ch = 0; ch < y.c(); ++ch) {
                    EXPECT_EQ(y.at(yy, xx, ch), x.at(yy / factor, xx / factor, ch));
                }
            }
        }
    }
    EXPECT_THROW(upsample_nearest_q(const_activation({2, 2, 1}, p, 0), 1), KernelError);
}

TEST(ElementwiseQ, AdditiveIdentity) {
    std::mt19937 rng(13);
    const QuantParams p{0.125, -3, 8};
    const QTensor a = oracle::random_activation(rng, {6, 6, 4}, p);
    const QTensor zero = const_activation({6, 6, 4}, p, p.zero_point);
    const QTensor y = elementwise_q(a, zero, EltOp::kAdd, p);
    EXPECT_EQ(y.data, a.data);
}

TEST(ElementwiseQ, MultiplicativeIdentityViaBroadcast) {
    std::mt19937 rng(15);
    const QuantParams p = calibrate_affine(-2.0, 2.0, 8);
    const QTensor a = oracle::random_activation(rng, {6, 6, 4}, p);
    // Code 64 at scale 1/64 is exactly real 1.0.
    const QTensor one = const_activation({1, 1, 4}, {1.0 / 64.0, 0, 8}, 64);
    const QTensor y = elementwise_q(a, one, EltOp::kMultiply, a.params);
    EXPECT_LE(oracle::max_lsb_diff(y, a), 1);
}

TEST(ElementwiseQ, RandomAddMatchesOracle) {
    std::mt19937 rng(17);
    const QuantParams pa = calibrate_affine(-2.0, 2.0, 8);
    const QuantParams pb = calibrate_affine(-1.0, 3.0, 8);
    const QuantParams out = calibrate_affine(-3.0, 5.0, 8);
    for (int iter = 0; iter < 200; ++iter) {
        const QTensor a = oracle::random_activation(rng, {5, 7, 3}, pa);
        const QTensor b = oracle::random_activation(rng, {5, 7, 3}, pb);
        EXPECT_LE(oracle::max_lsb_diff(elementwise_q(a, b, EltOp::kAdd, out),
                                       oracle::elementwise(a, b, false, out)),
                  1);
    }
}

TEST(ElementwiseQ, ShapeMismatchRejected) {
    const QuantParams p{1.0, 0, 8};
    const QTensor a = const_activation({4, 4, 2}, p, 0);
    const QTensor b = const_activation({4, 3, 2}, p, 0);
    EXPECT_THROW(elementwise_q(a, b, EltOp::kAdd, p), ShapeError);
    // Broadcast is a multiply-only affordance.
    const QTensor gate = const_activation({1, 1, 2}, p, 0);
    EXPECT_THROW(elementwise_q(a, gate, EltOp::kAdd, p), ShapeError);
}

TEST(ConcatQ, SingleInputSameParamsIsCopy) {
    std::mt19937 rng(19);
    const QuantParams p = calibrate_affine(-1.0, 1.0, 8);
    const QTensor x = oracle::random_activation(rng, {4, 4, 3}, p);
    const std::vector<QTensor> inputs{x};
    EXPECT_EQ(concat_q(inputs, p).data, x.data);
}

TEST(ConcatQ, OrderedChannels) {
    const QuantParams p{1.0, 0, 8};
    const QTensor a = const_activation({2, 2, 2}, p, 1);
    const QTensor b = const_activation({2, 2, 3}, p, 2);
    const std::vector<QTensor> inputs{a, b};
    const QTensor y = concat_q(inputs, p);
    ASSERT_EQ(y.c(), 5u);
    EXPECT_EQ(y.at(0, 0, 0), 1);
    EXPECT_EQ(y.at(0, 0, 1), 1);
    EXPECT_EQ(y.at(0, 0, 2), 2);
    EXPECT_EQ(y.at(0, 0, 4), 2);
}

TEST(ConcatQ, MismatchedScalesRequantized) {
    std::mt19937 rng(21);
    const QuantParams pa = calibrate_affine(-2.0, 2.0, 8);
    const QuantParams pb = calibrate_affine(-4.0, 4.0, 8);
    for (int iter = 0; iter < 100; ++iter) {
        const QTensor a = oracle::random_activation(rng, {3, 3, 2}, pa);
        const QTensor b = oracle::random_activation(rng, {3, 3, 3}, pb);
        const std::vector<QTensor> inputs{a, b};
        EXPECT_LE(oracle::max_lsb_diff(concat_q(inputs, pa), oracle::concat(inputs, pa)), 1);
    }
    const QTensor bad = const_activation({2, 2, 1}, pa, 0);
    const std::vector<QTensor> mismatched{const_activation({3, 3, 1}, pa, 0), bad};
    EXPECT_THROW(concat_q(mismatched, pa), ShapeError);
}

TEST(DenseQ, IdentityAndBias) {
    const QuantParams p{0.05, 0, 8};
    std::mt19937 rng(23);
    const QTensor x = oracle::random_activation(rng, {1, 1, 6}, p);

    std::vector<std::int32_t> eye(36, 0);
    for (int i = 0; i < 6; ++i) eye[i * 6 + i] = 64;
    const QTensor w = weight_tensor({6, 6}, {1.0 / 64.0, 0, 8}, std::move(eye));
    const QTensor y = dense_q(x, w, std::vector<std::int32_t>(6, 0), p);
    EXPECT_LE(oracle::max_lsb_diff(y, x), 1);

    // Zero weights: output comes from the bias alone.
    const QTensor zero_w = weight_tensor({6, 4}, {1.0 / 64.0, 0, 8},
                                         std::vector<std::int32_t>(24, 0));
    const std::vector<std::int32_t> bias{640, -640, 0, 64};
    const QuantParams out{p.scale, 0, 8}; // bias scale p.scale/64 -> code/64 out codes
    const QTensor yb = dense_q(x, zero_w, bias, out);
    EXPECT_EQ(yb.at(0, 0, 0), 10);
    EXPECT_EQ(yb.at(0, 0, 1), -10);
    EXPECT_EQ(yb.at(0, 0, 2), 0);
    EXPECT_EQ(yb.at(0, 0, 3), 1);
}

TEST(DenseQ, RandomMatchesOracle) {
    std::mt19937 rng(25);
    const QuantParams in_p = calibrate_affine(-2.0, 2.0, 8);
    for (int iter = 0; iter < 200; ++iter) {
        const QTensor x = oracle::random_activation(rng, {1, 1, 16}, in_p);
        std::vector<std::int32_t> wdata(16 * 8);
        for (auto& v : wdata) v = static_cast<std::int32_t>(rng() % 41) - 20;
        const QTensor w = weight_tensor({16, 8}, {1.0 / 32.0, 0, 8}, std::move(wdata));
        std::vector<std::int32_t> bias(8);
        for (auto& b : bias) b = static_cast<std::int32_t>(rng() % 201) - 100;
        const QuantParams out{in_p.scale * w.params.scale * 8, 1, 8};
        EXPECT_LE(oracle::max_lsb_diff(dense_q(x, w, bias, out),
                                       oracle::dense(x, w, bias, out)),
                  1);
    }
}

TEST(ActivationQ, ReluClampsAtRealZero) {
    const QuantParams p{0.1, 10, 8}; // codes below 10 are negative reals
    QTensor x = QTensor::activation({2, 2, 1}, p);
    x.data = {-50, 9, 10, 37};
    const QTensor y = activation_q(x, ActOp::kRelu, p);
    EXPECT_EQ(y.data, (std::vector<std::int32_t>{10, 10, 10, 37}));
}

TEST(ActivationQ, SigmoidLutAtZeroIsHalf) {
    const QuantParams in_p = calibrate_affine(-6.0, 6.0, 8);
    const QuantParams out_p{1.0 / 256.0, -128, 8};
    QTensor x = QTensor::activation({1, 1, 1}, in_p);
    x.data = {quantize_value(0.0, in_p)};
    const QTensor y = activation_q(x, ActOp::kSigmoid, out_p);
    const double got = dequantize_value(y.at(0, 0, 0), out_p);
    EXPECT_NEAR(got, 0.5, out_p.scale + 1e-12);
}

TEST(ActivationQ, SigmoidLutMatchesRealSigmoid) {
    const QuantParams in_p = calibrate_affine(-8.0, 8.0, 8);
    const QuantParams out_p{1.0 / 256.0, -128, 8};
    QTensor x = QTensor::activation({16, 16, 1}, in_p);
    for (int q = -128; q <= 127; ++q) x.data[static_cast<std::size_t>(q + 128)] = q;
    const QTensor y = activation_q(x, ActOp::kSigmoid, out_p);
    for (int q = -128; q <= 127; ++q) {
        const double v = 1.0 / (1.0 + std::exp(-dequantize_value(q, in_p)));
        const std::int32_t want = oracle::quant(v, out_p);
        EXPECT_LE(std::abs(y.data[static_cast<std::size_t>(q + 128)] - want), 1);
    }
}

TEST(ActivationQ, SoftmaxMatchesDirectComputation) {
    const double logits[] = {2.0, 1.0, 0.1};
    const auto probs = softmax_real(logits);
    EXPECT_NEAR(probs[0], 0.659, 1e-3);
    EXPECT_NEAR(probs[1], 0.242, 1e-3);
    EXPECT_NEAR(probs[2], 0.099, 1e-3);

    const QuantParams in_p{0.1, 0, 8};
    const QuantParams out_p{1.0 / 256.0, -128, 8};
    QTensor x = QTensor::activation({1, 1, 3}, in_p);
    x.data = {20, 10, 1};
    const QTensor y = activation_q(x, ActOp::kSoftmax, out_p);
    for (int c = 0; c < 3; ++c) {
        EXPECT_NEAR(dequantize_value(y.at(0, 0, c), out_p), probs[c], out_p.scale + 1e-9);
    }
}

TEST(ActivationQ, SoftmaxPreservesArgmax) {
    std::mt19937 rng(27);
    const QuantParams p = calibrate_affine(-4.0, 4.0, 8);
    for (int iter = 0; iter < 500; ++iter) {
        const QTensor logits = oracle::random_activation(rng, {3, 3, 5}, p);
        const auto before = argmax_channels(logits);
        // Real softmax is strictly monotone, so the argmax must be identical.
        std::vector<std::uint32_t> after(before.size());
        std::vector<double> vec(5);
        for (std::uint32_t y = 0; y < 3; ++y) {
            for (std::uint32_t x = 0; x < 3; ++x) {
                for (std::uint32_t c = 0; c < 5; ++c) {
                    vec[c] = dequantize_value(logits.at(y, x, c), p);
                }
                const auto probs = softmax_real(vec);
                std::uint32_t best = 0;
                for (std::uint32_t c = 1; c < 5; ++c) {
                    if (probs[c] > probs[best]) best = c;
                }
                after[y * 3 + x] = best;
            }
        }
        EXPECT_EQ(before, after);
    }
}

TEST(Composition, DepthwiseThenPointwiseMatchesFullKernel) {
    std::mt19937 rng(29);
    const QuantParams in_p = calibrate_affine(-1.0, 1.0, 8);
    const QuantParams dw_scale{1.0 / 32.0, 0, 8};
    const QuantParams pw_scale{1.0 / 32.0, 0, 8};
    int worst = 0;
    for (int iter = 0; iter < 200; ++iter) {
        const QTensor x = oracle::random_activation(rng, {8, 8, 4}, in_p);

        std::vector<std::int32_t> dw_data(3 * 3 * 1 * 4);
        for (auto& v : dw_data) v = static_cast<std::int32_t>(rng() % 31) - 15;
        const QTensor dw_w = weight_tensor({3, 3, 1, 4}, dw_scale, dw_data);

        std::vector<std::int32_t> pw_data(4 * 4);
        for (auto& v : pw_data) v = static_cast<std::int32_t>(rng() % 31) - 15;
        const QTensor pw_w = weight_tensor({1, 1, 4, 4}, pw_scale, pw_data);

        const std::vector<std::int32_t> zero4(4, 0);
        // Scales sized so neither stage saturates: |mid| <= 9*1*(15/32) = 4.22
        // and |out| <= 4*4.22*(15/32) = 7.9.
        const QuantParams mid{in_p.scale * dw_scale.scale * 140, 0, 8};
        const QuantParams out{in_p.scale * dw_scale.scale * pw_scale.scale * 8400, 0, 8};

        const QTensor y_dw = conv2d_q(x, dw_w, zero4, Conv2D{3, 3, 1, 1, 4, 4}, mid);
        const QTensor y = conv2d_q(y_dw, pw_w, zero4, Conv2D{1, 1, 1, 1, 1, 4}, out);

        // Oracle: the rank-constrained full 3x3 kernel from the outer product
        // of the depthwise taps and pointwise mixing matrix. Products of two
        // int8 codes need 16-bit headroom.
        QTensor full;
        full.dims = {3, 3, 4, 4};
        full.params = QuantParams{dw_scale.scale * pw_scale.scale, 0, 16};
        full.data.assign(3 * 3 * 4 * 4, 0);
        for (std::uint32_t ky = 0; ky < 3; ++ky) {
            for (std::uint32_t kx = 0; kx < 3; ++kx) {
                for (std::uint32_t ic = 0; ic < 4; ++ic) {
                    for (std::uint32_t oc = 0; oc < 4; ++oc) {
                        const std::int32_t dwv =
                            dw_data[((ky * 3 + kx) * 1 + 0) * 4 + ic];
                        const std::int32_t pwv = pw_data[ic * 4 + oc];
                        full.data[((ky * 3 + kx) * 4 + ic) * 4 + oc] = dwv * pwv;
                    }
                }
            }
        }
        const QTensor want =
            oracle::conv2d(x, full, zero4, Conv2D{3, 3, 1, 1, 1, 4}, out);
        worst = std::max<int>(worst, static_cast<int>(oracle::max_lsb_diff(y, want)));
    }
    EXPECT_LE(worst, 2);
}

TEST(Overflow, DetectedNotWrapped) {
    // 140000 * 127 * 127 > 2^31: the accumulator must trip, never wrap.
    const std::uint32_t n = 140000;
    QTensor x = QTensor::activation({1, 1, n}, {1.0, 0, 8});
    for (auto& v : x.data) v = 127;
    QTensor w;
    w.dims = {n, 1};
    w.params = {1.0, 0, 8};
    w.data.assign(n, 127);
    const std::vector<std::int32_t> bias(1, 0);
    EXPECT_THROW(dense_q(x, w, bias, QuantParams{1e6, 0, 8}), AccumulatorOverflowError);

    // Same magnitude fed through the convolution path.
    QTensor wc;
    wc.dims = {1, 1, n, 1};
    wc.params = {1.0, 0, 8};
    wc.data.assign(n, 127);
    EXPECT_THROW(conv2d_q(x, wc, bias, Conv2D{1, 1, 1, 1, 1, 1}, QuantParams{1e6, 0, 8}),
                 AccumulatorOverflowError);
}
