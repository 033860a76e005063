#include "derain/optim.hpp"
#include "derain/weights.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <sstream>

using namespace derain;
using ag::Shape;
using ag::Tensor;

namespace {

// Textbook Adam, written out independently of the library.
struct ReferenceAdam {
    double lr, b1, b2, eps;
    double m = 0.0, v = 0.0;
    int t = 0;
    double step(double w, double g)
    {
        ++t;
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        const double mhat = m / (1 - std::pow(b1, t));
        const double vhat = v / (1 - std::pow(b2, t));
        return w - lr * mhat / (std::sqrt(vhat) + eps);
    }
};

void set_grad(ag::BasicTensor<double>& w, double g)
{
    // d(g * w)/dw = g
    ag::scalar_mul(ag::sum(w), g).backward();
}

} // namespace

TEST(Adam, FirstStepMovesByLearningRate)
{
    ag::TensorD w(Shape{1}, {1.0}, true);
    Adam<double> opt({w}, {0.1, 0.9, 0.999, 1e-8});
    set_grad(w, 2.0);
    opt.step();
    EXPECT_NEAR(w.item(), 0.9, 1e-7);
    EXPECT_EQ(opt.steps(), 1);
}

TEST(Adam, ZeroGradientLeavesParameterUnchanged)
{
    ag::TensorD w(Shape{3}, {1.0, -2.0, 0.5}, true);
    Adam<double> opt({w}, {});
    for (int i = 0; i < 3; ++i) {
        set_grad(w, 0.0);
        opt.step();
        opt.zero_grad();
    }
    EXPECT_EQ(std::vector<double>(w.data().begin(), w.data().end()), (std::vector<double>{1.0, -2.0, 0.5}));
}

TEST(Adam, TwoStepsMatchReference)
{
    const AdamOptions opts{0.01, 0.9, 0.999, 1e-8};
    ag::TensorD w(Shape{1}, {0.3}, true);
    Adam<double> opt({w}, opts);
    ReferenceAdam ref{opts.lr, opts.beta1, opts.beta2, opts.eps};
    double expected = 0.3;
    for (int i = 0; i < 2; ++i) {
        set_grad(w, 1.5);
        opt.step();
        opt.zero_grad();
        expected = ref.step(expected, 1.5);
        EXPECT_NEAR(w.item(), expected, 1e-7);
    }
}

TEST(Adam, VaryingGradientsMatchReferenceOverManySteps)
{
    const AdamOptions opts{0.05, 0.8, 0.99, 1e-6};
    ag::TensorD w(Shape{1}, {2.0}, true);
    Adam<double> opt({w}, opts);
    ReferenceAdam ref{opts.lr, opts.beta1, opts.beta2, opts.eps};
    double expected = 2.0;
    for (int i = 0; i < 50; ++i) {
        const double g = std::sin(0.3 * i) + 0.1 * w.item();
        set_grad(w, g);
        opt.step();
        opt.zero_grad();
        expected = ref.step(expected, g);
    }
    EXPECT_NEAR(w.item(), expected, 1e-9);
}

TEST(Adam, UpdateFunctionRejectsStepZero)
{
    std::vector<float> p{1}, g{1}, m{0}, v{0};
    EXPECT_THROW(adam_update<float>(p, g, m, v, {}, 0), std::invalid_argument);
}

TEST(Adam, MissingGradientIsRejected)
{
    Weights weights;
    weights.add("a", Tensor::full({2}, 1.0f, true));
    weights.add("b", Tensor::full({2}, 1.0f, true));
    Adam<float> opt(weights, {});
    ag::sum(weights.at("a")).backward();
    try {
        opt.step();
        FAIL() << "expected rejection";
    } catch (const std::exception& e) {
        EXPECT_NE(std::string(e.what()).find("b"), std::string::npos);
    }
}

TEST(Adam, MinimizesQuadratic)
{
    ag::TensorD w(Shape{2}, {3.0, -4.0}, true);
    const ag::TensorD target(Shape{2}, {0.5, 0.25});
    Adam<double> opt({w}, {0.05, 0.9, 0.999, 1e-8});
    for (int i = 0; i < 2000; ++i) {
        ag::mse(w, target).backward();
        opt.step();
        opt.zero_grad();
    }
    EXPECT_NEAR(w.data()[0], 0.5, 1e-3);
    EXPECT_NEAR(w.data()[1], 0.25, 1e-3);
}

// ---------------------------------------------------------------------------
// Weight files

TEST(WeightsFile, RoundTripIsBitExact)
{
    std::mt19937_64 rng(17);
    Weights w;
    w.add("enc0.conv0.weight", test_support::random_tensor<float>({4, 3, 3, 3}, rng, -1e3, 1e3));
    w.add("enc0.conv0.bias", test_support::random_tensor<float>({4}, rng));
    w.add("meta.depth", Tensor::scalar(3.0f));
    w.add("tiny", Tensor({1}, {std::numeric_limits<float>::denorm_min()}));

    std::stringstream buf;
    write_weights(buf, w);
    const auto r = read_weights(buf);
    ASSERT_EQ(r.size(), w.size());
    auto it = r.begin();
    for (const auto& e : w) {
        EXPECT_EQ(it->name, e.name);
        EXPECT_EQ(it->tensor.shape(), e.tensor.shape());
        ASSERT_EQ(std::memcmp(it->tensor.data().data(), e.tensor.data().data(), e.tensor.numel() * 4), 0);
        ++it;
    }
}

TEST(WeightsFile, HeaderLayout)
{
    Weights w;
    w.add("ab", Tensor({2}, {1.0f, -2.0f}));
    std::stringstream buf;
    write_weights(buf, w);
    const std::string s = buf.str();
    // magic(4) version(2) count(4) namelen(2) name(2) rank(1) extent(4) data(8)
    ASSERT_EQ(s.size(), 4u + 2 + 4 + 2 + 2 + 1 + 4 + 8);
    EXPECT_EQ(s.substr(0, 4), "DRLW");
    EXPECT_EQ(static_cast<unsigned char>(s[4]), 1);
    EXPECT_EQ(static_cast<unsigned char>(s[5]), 0);
    EXPECT_EQ(static_cast<unsigned char>(s[6]), 1);
    EXPECT_EQ(s.substr(12, 2), "ab");
    EXPECT_EQ(static_cast<unsigned char>(s[14]), 1);
    EXPECT_EQ(static_cast<unsigned char>(s[15]), 2);
    // 1.0f little-endian
    EXPECT_EQ(static_cast<unsigned char>(s[21]), 0x80);
    EXPECT_EQ(static_cast<unsigned char>(s[22]), 0x3f);
}

TEST(WeightsFile, RejectsCorruptInput)
{
    std::stringstream bad_magic("XXXX");
    EXPECT_THROW(read_weights(bad_magic), std::runtime_error);

    Weights w;
    w.add("x", Tensor::full({8}, 1.0f));
    std::stringstream buf;
    write_weights(buf, w);
    std::stringstream truncated(buf.str().substr(0, buf.str().size() - 3));
    EXPECT_THROW(read_weights(truncated), std::runtime_error);
}

TEST(WeightsFile, SaveAndLoadThroughDisk)
{
    const auto path = std::filesystem::temp_directory_path() / "derain_weights_test.drlw";
    Weights w;
    w.add("v", Tensor({3}, {0.1f, 0.2f, 0.3f}));
    save_weights(path, w);
    const auto r = load_weights(path);
    EXPECT_EQ(std::vector<float>(r.at("v").data().begin(), r.at("v").data().end()),
              (std::vector<float>{0.1f, 0.2f, 0.3f}));
    std::filesystem::remove(path);
    EXPECT_THROW(load_weights(path), std::runtime_error);
}

TEST(ModelWeightsCollection, RejectsDuplicatesAndShapeMismatch)
{
    Weights a;
    a.add("w", Tensor::zeros({2, 2}));
    EXPECT_THROW(a.add("w", Tensor::zeros({1})), std::invalid_argument);
    EXPECT_EQ(a.parameter_count(), 4u);

    Weights b;
    b.add("w", Tensor::zeros({4}));
    EXPECT_THROW(a.assign_from(b), std::exception);
    Weights c;
    EXPECT_THROW(a.assign_from(c), std::exception);
}
