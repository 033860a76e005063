#include "derain/tensor.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace derain;
using namespace derain::test_support;
using ag::Shape;
using ag::Tensor;
using ag::TensorD;

namespace {

constexpr double kFdStep = 1e-3;
constexpr double kFdTolerance = 1e-4;
constexpr std::uint64_t kSeeds[] = {1, 2, 3, 4, 5};

} // namespace

// ---------------------------------------------------------------------------
// Construction and invariants

TEST(Tensor, ShapeMustMatchData)
{
    EXPECT_THROW(Tensor(Shape{2, 3}, std::vector<float>(5)), ag::ShapeError);
    EXPECT_THROW(Tensor(Shape{2, 0}, std::vector<float>{}), ag::ShapeError);
    const Tensor t(Shape{2, 3}, std::vector<float>(6, 1.0f));
    EXPECT_EQ(t.numel(), 6u);
    EXPECT_EQ(t.dim(1), 3u);
}

TEST(Tensor, DefaultsToNoGradLeaf)
{
    Tensor t = Tensor::zeros({2, 2});
    EXPECT_FALSE(t.requires_grad());
    EXPECT_TRUE(t.is_leaf());
    EXPECT_FALSE(t.has_grad());
    EXPECT_THROW((void)t.grad(), std::logic_error);
}

TEST(Tensor, GradHasDataShapeAfterBackward)
{
    std::mt19937_64 rng(7);
    auto x = random_tensor<float>({2, 3, 4, 4}, rng, -1, 1, true);
    auto w = random_tensor<float>({5, 3, 3, 3}, rng, -1, 1, true);
    auto b = random_tensor<float>({5}, rng, -1, 1, true);
    ag::sum(ag::relu(ag::conv2d(x, w, b, 1, 1))).backward();
    for (const auto& t : {x, w, b}) {
        ASSERT_TRUE(t.has_grad());
        EXPECT_EQ(t.grad().size(), t.numel());
    }
}

// ---------------------------------------------------------------------------
// Worked examples

TEST(Ops, SumOfSquaresGradient)
{
    TensorD w(Shape{3}, {1.0, 2.0, 3.0}, true);
    ag::sum(ag::mul(w, w)).backward();
    const auto g = w.grad();
    EXPECT_DOUBLE_EQ(g[0], 2.0);
    EXPECT_DOUBLE_EQ(g[1], 4.0);
    EXPECT_DOUBLE_EQ(g[2], 6.0);
}

TEST(Ops, MseOfEqualInputsHasZeroGradient)
{
    std::mt19937_64 rng(3);
    auto x = random_tensor<double>({2, 5}, rng, -1, 1, true);
    ag::mse(x, x).backward();
    for (double g : x.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Ops, MseValue)
{
    const TensorD a(Shape{2}, {0.0, 0.0});
    const TensorD b(Shape{2}, {3.0, 4.0});
    EXPECT_DOUBLE_EQ(ag::mse(a, b).item(), 12.5);
}

TEST(Ops, ReluValue)
{
    const auto y = ag::relu(TensorD(Shape{3}, {-1.0, 0.0, 2.0}));
    EXPECT_EQ(std::vector<double>(y.data().begin(), y.data().end()), (std::vector<double>{0, 0, 2}));
}

TEST(Ops, LeakyReluSigmoidLogitValues)
{
    const TensorD x(Shape{3}, {-2.0, 0.0, 3.0});
    const auto l = ag::leaky_relu(x, 0.1);
    EXPECT_DOUBLE_EQ(l.data()[0], -0.2);
    EXPECT_DOUBLE_EQ(l.data()[2], 3.0);
    const auto s = ag::sigmoid(x);
    EXPECT_DOUBLE_EQ(s.data()[1], 0.5);
    EXPECT_NEAR(s.data()[2], 1.0 / (1.0 + std::exp(-3.0)), 1e-15);
    const TensorD p(Shape{3}, {0.0, 0.25, 1.0});
    const auto z = ag::logit(p, 1e-3);
    EXPECT_NEAR(z.data()[0], std::log(1e-3 / (1 - 1e-3)), 1e-12);
    EXPECT_NEAR(z.data()[1], std::log(0.25 / 0.75), 1e-12);
    EXPECT_NEAR(z.data()[2], std::log((1 - 1e-3) / 1e-3), 1e-12);
}

TEST(Ops, PoolUpsampleConcatValues)
{
    const TensorD x(Shape{1, 1, 2, 4}, {1, 5, 2, 0, 3, 4, 7, 6});
    const auto p = ag::max_pool2d(x);
    EXPECT_EQ(p.shape(), (Shape{1, 1, 1, 2}));
    EXPECT_EQ(p.data()[0], 5.0);
    EXPECT_EQ(p.data()[1], 7.0);

    const auto u = ag::upsample_nearest2x(p);
    EXPECT_EQ(u.shape(), (Shape{1, 1, 2, 4}));
    EXPECT_EQ(std::vector<double>(u.data().begin(), u.data().end()),
              (std::vector<double>{5, 5, 7, 7, 5, 5, 7, 7}));

    const TensorD a(Shape{2, 1, 1, 1}, {1, 2});
    const TensorD b(Shape{2, 2, 1, 1}, {3, 4, 5, 6});
    const auto c = ag::concat_channels<double>({a, b});
    EXPECT_EQ(c.shape(), (Shape{2, 3, 1, 1}));
    EXPECT_EQ(std::vector<double>(c.data().begin(), c.data().end()),
              (std::vector<double>{1, 3, 4, 2, 5, 6}));
}

TEST(Ops, MaxPoolGradientGoesToArgmaxOnly)
{
    TensorD x(Shape{1, 1, 2, 2}, {0.1, 0.9, 0.3, 0.2}, true);
    ag::sum(ag::max_pool2d(x)).backward();
    EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()),
              (std::vector<double>{0, 1, 0, 0}));
}

TEST(Conv2d, OnesKernelCountsOverlap)
{
    const Tensor x = Tensor::full({1, 1, 3, 3}, 1.0f);
    const Tensor w = Tensor::full({1, 1, 3, 3}, 1.0f);
    const auto y = ag::conv2d(x, w, Tensor::zeros({1}), 1, 1);
    ASSERT_EQ(y.shape(), (Shape{1, 1, 3, 3}));
    EXPECT_FLOAT_EQ(y.data()[4], 9.0f);
    for (std::size_t i : {0, 2, 6, 8}) EXPECT_FLOAT_EQ(y.data()[i], 4.0f);
}

TEST(Conv2d, IdentityKernelReproducesInput)
{
    std::mt19937_64 rng(11);
    for (std::size_t k : {1, 3, 5}) {
        const auto x = random_tensor<float>({2, 3, 7, 6}, rng);
        std::vector<float> w(3 * 3 * k * k, 0.0f);
        for (std::size_t c = 0; c < 3; ++c) w[((c * 3 + c) * k + k / 2) * k + k / 2] = 1.0f;
        const auto y = ag::conv2d(x, Tensor({3, 3, k, k}, w), Tensor::zeros({3}), 1, (k - 1) / 2);
        ASSERT_EQ(y.shape(), x.shape());
        for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y.data()[i], x.data()[i]);
    }
}

TEST(Conv2d, MatchesNaiveLoopOnRandomInput)
{
    std::mt19937_64 rng(5);
    const auto x = random_tensor<float>({2, 3, 8, 8}, rng);
    const auto w = random_tensor<float>({4, 3, 3, 3}, rng);
    const auto b = random_tensor<float>({4}, rng);
    const auto y = ag::conv2d(x, w, b, 1, 1);
    std::size_t Ho = 0, Wo = 0;
    const auto ref = naive_conv2d({x.data().begin(), x.data().end()}, 2, 3, 8, 8,
                                  {w.data().begin(), w.data().end()}, 4, 3, 3,
                                  {b.data().begin(), b.data().end()}, 1, 1, Ho, Wo);
    ASSERT_EQ(y.shape(), (Shape{2, 4, Ho, Wo}));
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y.data()[i], ref[i], 1e-5);
}

TEST(Conv2d, MatchesNaiveLoopExhaustively)
{
    // Every N, Cin, Cout up to 4, square frames up to 16, kernels 1/3/5,
    // strides 1/2 and paddings 0..2 that tile exactly.
    std::mt19937_64 rng(99);
    std::size_t configs = 0;
    double worst = 0.0;
    for (std::size_t n = 1; n <= 4; ++n)
        for (std::size_t cin = 1; cin <= 4; ++cin)
            for (std::size_t cout = 1; cout <= 4; ++cout)
                for (std::size_t hw : {1, 2, 3, 5, 8, 16})
                    for (std::size_t k : {1, 3, 5})
                        for (std::size_t stride : {1, 2})
                            for (std::size_t pad = 0; pad <= 2; ++pad) {
                                if (hw + 2 * pad < k || (hw + 2 * pad - k) % stride != 0) continue;
                                const auto x = random_tensor<float>({n, cin, hw, hw}, rng);
                                const auto w = random_tensor<float>({cout, cin, k, k}, rng);
                                const auto b = random_tensor<float>({cout}, rng);
                                const auto y = ag::conv2d(x, w, b, stride, pad);
                                std::size_t Ho = 0, Wo = 0;
                                const auto ref = naive_conv2d(
                                    {x.data().begin(), x.data().end()}, n, cin, hw, hw,
                                    {w.data().begin(), w.data().end()}, cout, k, k,
                                    {b.data().begin(), b.data().end()}, stride, pad, Ho, Wo);
                                ASSERT_EQ(y.shape(), (Shape{n, cout, Ho, Wo}));
                                for (std::size_t i = 0; i < ref.size(); ++i) {
                                    worst = std::max(worst, std::abs(y.data()[i] - ref[i]));
                                }
                                ++configs;
                            }
    EXPECT_GT(configs, 1000u);
    EXPECT_LT(worst, 1e-5);
}

TEST(Conv2d, RejectsChannelMismatchNamingBothShapes)
{
    const Tensor x = Tensor::zeros({1, 2, 5, 5});
    const Tensor w = Tensor::zeros({4, 3, 3, 3});
    try {
        (void)ag::conv2d(x, w, Tensor::zeros({4}), 1, 1);
        FAIL() << "expected a shape error";
    } catch (const ag::ShapeError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("[1,2,5,5]"), std::string::npos) << msg;
        EXPECT_NE(msg.find("[4,3,3,3]"), std::string::npos) << msg;
    }
}

TEST(Conv2d, RejectsInvalidGeometry)
{
    const Tensor x = Tensor::zeros({1, 1, 4, 4});
    EXPECT_THROW(ag::conv2d(x, Tensor::zeros({1, 1, 2, 2}), Tensor::zeros({1})), ag::ShapeError);
    EXPECT_THROW(ag::conv2d(x, Tensor::zeros({1, 1, 5, 5}), Tensor::zeros({1})), ag::ShapeError);
    EXPECT_THROW(ag::conv2d(x, Tensor::zeros({1, 1, 3, 3}), Tensor::zeros({1}), 2, 0), ag::ShapeError);
    EXPECT_THROW(ag::conv2d(x, Tensor::zeros({1, 1, 3, 3}), Tensor::zeros({2})), ag::ShapeError);
}

TEST(Ops, RejectMismatchedShapes)
{
    const Tensor a = Tensor::zeros({2, 3});
    const Tensor b = Tensor::zeros({3, 2});
    EXPECT_THROW(ag::add(a, b), ag::ShapeError);
    EXPECT_THROW(ag::sub(a, b), ag::ShapeError);
    EXPECT_THROW(ag::mul(a, b), ag::ShapeError);
    EXPECT_THROW(ag::mse(a, b), ag::ShapeError);
    EXPECT_THROW(ag::max_pool2d(Tensor::zeros({1, 1, 3, 4})), ag::ShapeError);
    EXPECT_THROW(ag::concat_channels<float>({Tensor::zeros({1, 1, 2, 2}), Tensor::zeros({1, 1, 2, 4})}),
                 ag::ShapeError);
}

// ---------------------------------------------------------------------------
// Backward contract

TEST(Backward, RejectsNonScalarLoss)
{
    auto x = Tensor::full({3}, 1.0f, true);
    EXPECT_THROW(ag::mul(x, x).backward(), ag::ShapeError);
}

TEST(Backward, GraphIsConsumedByOnePass)
{
    auto x = Tensor::full({3}, 2.0f, true);
    const auto loss = ag::sum(ag::mul(x, x));
    loss.backward();
    EXPECT_THROW(loss.backward(), std::logic_error);
}

TEST(Backward, AccumulatesAcrossSharedUses)
{
    TensorD x(Shape{2}, {1.0, -2.0}, true);
    const auto y = ag::add(x, ag::scalar_mul(x, 3.0));
    ag::sum(ag::mul(y, x)).backward(); // 4 x^2 -> 8 x
    EXPECT_DOUBLE_EQ(x.grad()[0], 8.0);
    EXPECT_DOUBLE_EQ(x.grad()[1], -16.0);
}

TEST(Backward, NoGradGuardRecordsNothing)
{
    auto x = Tensor::full({2}, 1.0f, true);
    Tensor y;
    {
        ag::NoGradGuard guard;
        y = ag::mul(x, x);
    }
    EXPECT_FALSE(y.requires_grad());
    EXPECT_TRUE(y.is_leaf());
    EXPECT_TRUE(ag::GradMode::enabled());
}

TEST(Backward, LinearInLossScale)
{
    for (auto seed : kSeeds) {
        std::mt19937_64 rng(seed);
        auto x = random_tensor<float>({1, 2, 6, 6}, rng, -1, 1, true);
        auto w = random_tensor<float>({3, 2, 3, 3}, rng, -1, 1, true);
        const auto b = random_tensor<float>({3}, rng);
        const auto target = random_tensor<float>({1, 3, 6, 6}, rng);
        auto loss = [&] { return ag::mse(ag::leaky_relu(ag::conv2d(x, w, b, 1, 1), 0.1f), target); };

        loss().backward();
        const std::vector<float> gx(x.grad().begin(), x.grad().end());
        const std::vector<float> gw(w.grad().begin(), w.grad().end());
        x.zero_grad();
        w.zero_grad();
        const float a = 3.5f;
        ag::scalar_mul(loss(), a).backward();
        for (std::size_t i = 0; i < gx.size(); ++i) EXPECT_NEAR(x.grad()[i], a * gx[i], 1e-6);
        for (std::size_t i = 0; i < gw.size(); ++i) EXPECT_NEAR(w.grad()[i], a * gw[i], 1e-6);
    }
}

TEST(Backward, ForwardIsDeterministic)
{
    auto run = [] {
        std::mt19937_64 rng(42);
        const auto x = random_tensor<float>({2, 3, 8, 8}, rng);
        const auto w = random_tensor<float>({4, 3, 3, 3}, rng);
        const auto b = random_tensor<float>({4}, rng);
        const auto y = ag::max_pool2d(ag::relu(ag::conv2d(x, w, b, 1, 1)));
        return std::vector<float>(y.data().begin(), y.data().end());
    };
    EXPECT_EQ(run(), run());
}

// ---------------------------------------------------------------------------
// Finite-difference checks, 64-bit mode, five seeds per operation

class FiniteDifference : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(FiniteDifference, Conv2dAllArguments)
{
    std::mt19937_64 rng(GetParam());
    for (auto [stride, pad] : {std::pair<std::size_t, std::size_t>{1, 1}, {2, 1}, {1, 0}}) {
        auto x = random_tensor<double>({2, 2, 5, 5}, rng, -1, 1, true);
        auto w = random_tensor<double>({3, 2, 3, 3}, rng, -1, 1, true);
        auto b = random_tensor<double>({3}, rng, -1, 1, true);
        const auto r = gradient_check([&] { return project(ag::conv2d(x, w, b, stride, pad), GetParam()); },
                                      {x, w, b}, kFdStep);
        EXPECT_LT(r.max_rel_error, kFdTolerance) << "stride " << stride << " pad " << pad;
    }
}

TEST_P(FiniteDifference, Activations)
{
    std::mt19937_64 rng(GetParam());
    auto x = separated_tensor({2, 3, 4}, rng);
    EXPECT_LT(gradient_check([&] { return project(ag::relu(x), 1); }, {x}, kFdStep).max_rel_error,
              kFdTolerance);
    EXPECT_LT(gradient_check([&] { return project(ag::leaky_relu(x, 0.1), 2); }, {x}, kFdStep).max_rel_error,
              kFdTolerance);
    auto z = random_tensor<double>({2, 3, 4}, rng, -4, 4, true);
    EXPECT_LT(gradient_check([&] { return project(ag::sigmoid(z), 3); }, {z}, kFdStep).max_rel_error,
              kFdTolerance);
    // Away from 0 and 1, where logit's third derivative would dominate the
    // central-difference truncation error.
    auto p = random_tensor<double>({2, 3, 4}, rng, 0.15, 0.85, true);
    EXPECT_LT(gradient_check([&] { return project(ag::logit(p, 1e-3), 4); }, {p}, kFdStep).max_rel_error,
              kFdTolerance);
}

TEST_P(FiniteDifference, PoolUpsampleConcat)
{
    std::mt19937_64 rng(GetParam());
    auto x = separated_tensor({2, 2, 4, 6}, rng);
    EXPECT_LT(gradient_check([&] { return project(ag::max_pool2d(x), 5); }, {x}, kFdStep).max_rel_error,
              kFdTolerance);
    auto u = random_tensor<double>({2, 2, 3, 2}, rng, -1, 1, true);
    EXPECT_LT(gradient_check([&] { return project(ag::upsample_nearest2x(u), 6); }, {u}, kFdStep).max_rel_error,
              kFdTolerance);
    auto a = random_tensor<double>({2, 1, 3, 3}, rng, -1, 1, true);
    auto b = random_tensor<double>({2, 3, 3, 3}, rng, -1, 1, true);
    EXPECT_LT(gradient_check([&] { return project(ag::concat_channels<double>({a, b, a}), 7); }, {a, b}, kFdStep)
                  .max_rel_error,
              kFdTolerance);
}

TEST_P(FiniteDifference, ArithmeticAndReductions)
{
    std::mt19937_64 rng(GetParam());
    auto a = random_tensor<double>({3, 4}, rng, -1, 1, true);
    auto b = random_tensor<double>({3, 4}, rng, -1, 1, true);
    EXPECT_LT(gradient_check([&] { return project(ag::add(a, b), 8); }, {a, b}, kFdStep).max_rel_error, kFdTolerance);
    EXPECT_LT(gradient_check([&] { return project(ag::sub(a, b), 9); }, {a, b}, kFdStep).max_rel_error, kFdTolerance);
    EXPECT_LT(gradient_check([&] { return project(ag::mul(a, b), 10); }, {a, b}, kFdStep).max_rel_error, kFdTolerance);
    EXPECT_LT(gradient_check([&] { return project(ag::scalar_mul(a, -2.5), 11); }, {a}, kFdStep).max_rel_error,
              kFdTolerance);
    EXPECT_LT(gradient_check([&] { return ag::sum(a); }, {a}, kFdStep).max_rel_error, kFdTolerance);
    EXPECT_LT(gradient_check([&] { return ag::mse(a, b); }, {a, b}, kFdStep).max_rel_error, kFdTolerance);
}

TEST_P(FiniteDifference, ComposedEncoderDecoderPath)
{
    std::mt19937_64 rng(GetParam());
    auto x = random_tensor<double>({1, 2, 4, 4}, rng, 0.1, 0.9, true);
    auto w1 = random_tensor<double>({3, 2, 3, 3}, rng, -0.5, 0.5, true);
    auto b1 = random_tensor<double>({3}, rng, -0.1, 0.1, true);
    auto w2 = random_tensor<double>({2, 5, 3, 3}, rng, -0.5, 0.5, true);
    auto b2 = random_tensor<double>({2}, rng, -0.1, 0.1, true);
    const auto target = random_tensor<double>({1, 2, 4, 4}, rng, 0, 1);
    auto loss = [&] {
        const auto h = ag::sigmoid(ag::conv2d(x, w1, b1, 1, 1));
        const auto up = ag::upsample_nearest2x(ag::max_pool2d(h));
        const auto y = ag::conv2d(ag::concat_channels<double>({up, x}), w2, b2, 1, 1);
        return ag::mse(ag::sigmoid(ag::add(ag::logit(x, 1e-3), y)), target);
    };
    // Max-pool ties are practically impossible for sigmoid outputs of random data.
    EXPECT_LT(gradient_check(loss, {x, w1, b1, w2, b2}, 1e-5).max_rel_error, kFdTolerance);
}

INSTANTIATE_TEST_SUITE_P(Seeds, FiniteDifference, ::testing::ValuesIn(kSeeds));
