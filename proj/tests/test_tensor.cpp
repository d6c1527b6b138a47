#include <gtest/gtest.h>

#include <cmath>

#include "prer/error.hpp"
#include "prer/grad_check.hpp"
#include "prer/nn.hpp"
#include "prer/ops.hpp"
#include "prer/optim.hpp"
#include "prer/rng.hpp"
#include "support.hpp"

using namespace prer;
using prer::test::mat;

TEST(Tensor, ShapeMustMatchValues) {
    EXPECT_THROW(Tensor({2, 2}, {1, 2, 3}), DimensionError);
    EXPECT_THROW(Tensor({0, 2}, {}), DimensionError);
    EXPECT_THROW(Tensor(Shape{}, {}), DimensionError);
    Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
    EXPECT_EQ(t.numel(), 6u);
    EXPECT_DOUBLE_EQ(t.at(1, 2), 6.0);
}

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
    Rng rng(1);
    Tensor b = Tensor::normal({3, 4}, rng);
    Tensor i3 = mat(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    Tensor r = matmul(i3, b);
    for (std::size_t k = 0; k < b.numel(); ++k) EXPECT_EQ(r.at(k), b.at(k));
}

TEST(Matmul, HandEvaluatedProduct) {
    Tensor r = matmul(mat(2, 2, {1, 2, 3, 4}), mat(2, 1, {5, 6}));
    ASSERT_EQ(r.shape(), (Shape{2, 1}));
    EXPECT_DOUBLE_EQ(r.at(0), 17.0);
    EXPECT_DOUBLE_EQ(r.at(1), 39.0);
}

TEST(Matmul, ZeroMatrixGivesZero) {
    Rng rng(2);
    Tensor r = matmul(Tensor::normal({3, 5}, rng), Tensor::zeros({5, 2}));
    for (double v : r.values()) EXPECT_EQ(v, 0.0);
}

TEST(Matmul, InnerDimensionMismatchThrows) {
    EXPECT_THROW(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), DimensionError);
}

TEST(Matmul, IdentityAssociativityIsBitwise) {
    Rng rng(3);
    Tensor a = Tensor::uniform({4, 5}, -2, 2, rng);
    Tensor b = Tensor::uniform({5, 3}, -2, 2, rng);
    std::vector<double> eye(25, 0.0);
    for (int i = 0; i < 5; ++i) eye[static_cast<std::size_t>(i * 6)] = 1.0;
    Tensor i5 = mat(5, 5, eye);
    Tensor ab = matmul(a, b);
    Tensor left = matmul(matmul(a, i5), b);
    Tensor right = matmul(a, matmul(i5, b));
    for (std::size_t k = 0; k < ab.numel(); ++k) {
        EXPECT_EQ(left.at(k), ab.at(k));
        EXPECT_EQ(right.at(k), ab.at(k));
    }
}

TEST(Elementwise, Definitions) {
    Tensor r = relu(Tensor({3}, {-1, 0, 2}));
    EXPECT_EQ(r.at(0), 0.0);
    EXPECT_EQ(r.at(1), 0.0);
    EXPECT_EQ(r.at(2), 2.0);
    EXPECT_DOUBLE_EQ(sigmoid(Tensor::scalar(0.0)).item(), 0.5);
    Tensor x({4}, {0.1, 1.0, 3.5, 42.0});
    Tensor y = exp(log(x));
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(y.at(i), x.at(i), 1e-12 * x.at(i));
}

TEST(Elementwise, LogOfNonPositive) {
    Tensor x({2}, {1.0, -1.0});
    {
        autograd::CheckedModeGuard checked(true);
        EXPECT_THROW(log(x), DomainError);
    }
    Tensor y = log(x);
    EXPECT_TRUE(std::isnan(y.at(1)));
}

TEST(Elementwise, CheckedModeCatchesNonFinite) {
    autograd::CheckedModeGuard checked(true);
    EXPECT_THROW(exp(Tensor::scalar(1000.0)), NumericError);
    EXPECT_THROW(div(Tensor::scalar(1.0), Tensor::scalar(0.0)), NumericError);
}

TEST(Elementwise, BroadcastRules) {
    Tensor a = mat(2, 3, {1, 2, 3, 4, 5, 6});
    Tensor row = mat(1, 3, {10, 20, 30});
    Tensor col = mat(2, 1, {100, 200});
    Tensor r = add(a, row);
    EXPECT_DOUBLE_EQ(r.at(1, 2), 36.0);
    Tensor c = add(a, col);
    EXPECT_DOUBLE_EQ(c.at(1, 0), 204.0);
    EXPECT_THROW(add(a, mat(3, 1, {1, 2, 3})), DimensionError);
}

TEST(Backward, SumOfProductGivesInputPerRow) {
    // loss = sum(x W) with x [1 x 3], W [3 x 2]: dW[i][j] = x[i].
    Tensor w = Tensor::zeros({3, 2}, true);
    Tensor x = mat(1, 3, {1.5, -2.0, 0.25});
    autograd::backward(sum(matmul(x, w)));
    ASSERT_TRUE(w.has_grad());
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 2; ++j) EXPECT_DOUBLE_EQ(w.grad()[i * 2 + j], x.at(i));
    EXPECT_TRUE(autograd::tape().empty());
}

TEST(Backward, ConstantLossGivesZeroGrad) {
    Tensor w = Tensor::full({2, 2}, 3.0, true);
    Tensor loss = add(scale(sum(w), 0.0), 5.0);
    autograd::backward(loss);
    for (double g : w.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Backward, NonScalarLossIsRejected) {
    Tensor w = Tensor::full({2, 2}, 1.0, true);
    Tensor y = square(w);
    EXPECT_THROW(autograd::backward(y), ContractError);
    autograd::tape().clear();
}

TEST(Backward, CompositeMatchesFiniteDifferences) {
    Rng rng(4);
    Tensor x = Tensor::uniform({3, 4}, -2, 2, rng, true);
    auto f = [](const Tensor& v) { return mean(log_sigmoid(tanh(mul(v, exp(scale(v, 0.3)))))); };
    EXPECT_LT(grad_check(f, x).max_rel_error, 1e-4);
}

TEST(Backward, CheckedModeCatchesNonFiniteGradient) {
    Tensor x = Tensor::full({1}, 0.0, true);
    Tensor y = sum(sqrt(x));
    autograd::CheckedModeGuard checked(true);
    EXPECT_THROW(autograd::backward(y), NumericError);
    autograd::tape().clear();
}

// Every differentiable primitive against central differences on [-2, 2].
class PrimitiveGrad : public ::testing::TestWithParam<int> {};

TEST_P(PrimitiveGrad, MatchesFiniteDifferences) {
    Rng rng(100 + static_cast<std::uint64_t>(GetParam()));
    Tensor a = Tensor::uniform({3, 4}, -2, 2, rng, true);
    Tensor b = Tensor::uniform({3, 4}, -2, 2, rng);
    Tensor pos = Tensor::uniform({3, 4}, 0.5, 2, rng, true);
    Tensor w = Tensor::uniform({4, 2}, -2, 2, rng);
    Tensor row = Tensor::uniform({1, 4}, -2, 2, rng);
    std::function<Tensor(const Tensor&)> f;
    Tensor point = a;
    switch (GetParam()) {
        case 0: f = [&](const Tensor& v) { return sum(add(v, b)); }; break;
        case 1: f = [&](const Tensor& v) { return sum(square(sub(b, v))); }; break;
        case 2: f = [&](const Tensor& v) { return sum(mul(v, b)); }; break;
        case 3: f = [&](const Tensor& v) { return sum(div(b, v)); }; point = pos; break;
        case 4: f = [&](const Tensor& v) { return sum(mul(relu(v), b)); }; break;
        case 5: f = [&](const Tensor& v) { return sum(mul(sigmoid(v), b)); }; break;
        case 6: f = [&](const Tensor& v) { return sum(mul(exp(v), b)); }; break;
        case 7: f = [&](const Tensor& v) { return sum(mul(log(v), b)); }; point = pos; break;
        case 8: f = [&](const Tensor& v) { return sum(mul(sqrt(v), b)); }; point = pos; break;
        case 9: f = [&](const Tensor& v) { return sum(mul(abs(v), b)); }; break;
        case 10: f = [&](const Tensor& v) { return sum(square(matmul(v, w))); }; break;
        case 11: f = [&](const Tensor& v) { return sum(mul(transpose(v), transpose(b))); }; break;
        case 12: f = [&](const Tensor& v) { return sum(square(sum_cols(v))); }; break;
        case 13: f = [&](const Tensor& v) { return sum(square(mean_rows(v))); }; break;
        case 14: f = [&](const Tensor& v) { return sum(square(add(v, row))); }; break;
        case 15: f = [&](const Tensor& v) { return sum(square(concat_cols({slice_cols(v, 2, 4), slice_cols(v, 0, 2)}))); }; break;
        case 16: f = [&](const Tensor& v) { return sum(square(concat_rows({slice_rows(v, 1, 3), v}))); }; break;
        case 17: {
            std::vector<std::size_t> idx{3, 0, 2, 1};
            f = [&, idx](const Tensor& v) { return sum(mul(gather_cols(v, idx), b)); };
            break;
        }
        case 18: {
            std::vector<int> labels{0, 3, 1};
            f = [labels](const Tensor& v) { return cross_entropy(v, labels); };
            break;
        }
        case 19: f = [&](const Tensor& v) { return sum(mul(tanh(v), b)); }; break;
        case 20: f = [&](const Tensor& v) { return sum(mul(log_sigmoid(v), b)); }; break;
        case 21: f = [&](const Tensor& v) { return mean(square(reshape(v, {2, 6}))); }; break;
        case 22: f = [&](const Tensor& v) { return sum(neg(scale(mul(v, row), 1.7))); }; break;
        case 23: f = [&](const Tensor& v) { return sum(square(sum_rows(v))); }; break;
        default: FAIL();
    }
    const double err = grad_check(f, point).max_rel_error;
    EXPECT_LT(err, 1e-4) << "case " << GetParam();
}

INSTANTIATE_TEST_SUITE_P(AllOps, PrimitiveGrad, ::testing::Range(0, 24));

TEST(Conv, MatchesDirectLoopsAndGradients) {
    Rng rng(5);
    Tensor x = Tensor::uniform({2, 2, 5, 5}, -2, 2, rng, true);
    ConvGeometry g{4, 2, 1};
    Conv2d conv(2, 3, g, rng);
    Tensor y = conv.forward(x);
    ASSERT_EQ(y.shape(), (Shape{2, 3, 2, 2}));
    // Direct convolution oracle.
    for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t f = 0; f < 3; ++f)
            for (std::size_t oy = 0; oy < 2; ++oy)
                for (std::size_t ox = 0; ox < 2; ++ox) {
                    double s = conv.bias.at(f);
                    for (std::size_t c = 0; c < 2; ++c)
                        for (std::size_t ky = 0; ky < 4; ++ky)
                            for (std::size_t kx = 0; kx < 4; ++kx) {
                                const long iy = static_cast<long>(oy * 2 + ky) - 1;
                                const long ix = static_cast<long>(ox * 2 + kx) - 1;
                                if (iy < 0 || ix < 0 || iy >= 5 || ix >= 5) continue;
                                s += x.at(((n * 2 + c) * 5 + static_cast<std::size_t>(iy)) * 5 + static_cast<std::size_t>(ix)) *
                                     conv.weight.at((c * 16 + ky * 4 + kx) * 3 + f);
                            }
                    EXPECT_NEAR(y.at(((n * 3 + f) * 2 + oy) * 2 + ox), s, 1e-12);
                }
    autograd::tape().clear();
    auto loss = [&] { return sum(square(conv.forward(x))); };
    EXPECT_LT(grad_check(loss, x).max_rel_error, 1e-4);
    EXPECT_LT(grad_check(loss, conv.weight).max_rel_error, 1e-4);
    EXPECT_LT(grad_check(loss, conv.bias).max_rel_error, 1e-4);
}

TEST(Conv, UpsampleGradient) {
    Rng rng(6);
    Tensor x = Tensor::uniform({1, 2, 3, 3}, -2, 2, rng, true);
    Tensor wts = Tensor::uniform({1, 2, 4, 4}, -2, 2, rng);
    auto f = [&](const Tensor& v) { return sum(mul(upsample_nearest(v, 4, 4), wts)); };
    EXPECT_LT(grad_check(f, x).max_rel_error, 1e-4);
}

TEST(Linear, GradientsMatchFiniteDifferences) {
    Rng rng(7);
    Linear lin(4, 3, rng);
    Tensor x = Tensor::uniform({5, 4}, -2, 2, rng);
    auto loss = [&] { return sum(square(lin.forward(x))); };
    EXPECT_LT(grad_check(loss, lin.weight).max_rel_error, 1e-4);
    EXPECT_LT(grad_check(loss, lin.bias).max_rel_error, 1e-4);
}

TEST(Linear, InitialisationBoundedByFanIn) {
    Rng rng(8);
    Linear lin(16, 8, rng);
    for (double v : lin.weight.values()) EXPECT_LE(std::abs(v), 0.25);
}

TEST(Dropout, InvertedScalingAndIdentityAtZero) {
    Rng rng(9);
    Tensor x = Tensor::full({1, 10000}, 1.0);
    Tensor y = dropout(x, 0.2, rng);
    double kept = 0, s = 0;
    for (double v : y.values()) {
        if (v != 0.0) {
            EXPECT_DOUBLE_EQ(v, 1.25);
            ++kept;
        }
        s += v;
    }
    EXPECT_NEAR(kept / 10000.0, 0.8, 0.02);
    EXPECT_TRUE(dropout(x, 0.0, rng).is_same(x));
}

TEST(Optimizer, SgdHandEvaluated) {
    Tensor p = Tensor::full({1}, 1.0, true);
    Optimizer opt({p}, {OptimizerKind::sgd, 0.1});
    autograd::backward(scale(sum(p), 2.0));
    opt.step();
    EXPECT_DOUBLE_EQ(p.at(0), 0.8);
    EXPECT_FALSE(p.has_grad());
}

TEST(Optimizer, SgdZeroGradientLeavesParams) {
    Tensor p = Tensor::full({3}, 0.7, true);
    Optimizer opt({p}, {OptimizerKind::sgd, 0.5});
    autograd::backward(scale(sum(p), 0.0));
    opt.step();
    for (double v : p.values()) EXPECT_EQ(v, 0.7);
}

TEST(Optimizer, AdamFirstStepMovesByLearningRate) {
    Tensor p = Tensor::full({1}, 1.0, true);
    Optimizer opt({p}, {OptimizerKind::adam, 1e-3});
    autograd::backward(sum(p));
    opt.step();
    EXPECT_NEAR(p.at(0), 1.0 - 1e-3, 1e-10);
    ASSERT_EQ(opt.first_moments().size(), 1u);
    EXPECT_EQ(opt.first_moments()[0].size(), 1u);
}

TEST(Optimizer, SgdHasNoMoments) {
    Tensor p = Tensor::full({2, 2}, 1.0, true);
    Optimizer opt({p}, {OptimizerKind::sgd, 0.1});
    EXPECT_TRUE(opt.first_moments().empty());
    EXPECT_TRUE(opt.second_moments().empty());
}

TEST(Optimizer, MissingGradIsContractError) {
    Tensor p = Tensor::full({1}, 1.0, true);
    Optimizer opt({p}, {OptimizerKind::adam, 1e-3});
    EXPECT_THROW(opt.step(), ContractError);
}

TEST(GradCheck, QuadraticAndLinear) {
    Tensor x = Tensor::full({1}, 3.0);
    auto q = grad_check([](const Tensor& v) { return sum(square(v)); }, x);
    EXPECT_NEAR(q.analytic, 6.0, 1e-12);
    EXPECT_LT(q.max_rel_error, 1e-8);
    auto l = grad_check([](const Tensor& v) { return sum(scale(v, 4.0)); }, x);
    EXPECT_LT(l.max_rel_error, 1e-9);
}

TEST(Rng, SameSeedSameSequence) {
    Rng a(42), b(42), c(43);
    for (int i = 0; i < 100; ++i) {
        const auto x = a.next_u64();
        EXPECT_EQ(x, b.next_u64());
        (void)c;
    }
    Rng d(42);
    Rng e(43);
    EXPECT_NE(d.next_u64(), e.next_u64());
}

TEST(Rng, KnownFirstOutputs) {
    // xoshiro256** seeded through splitmix64(0); fixed across platforms.
    std::uint64_t s = 0;
    EXPECT_EQ(splitmix64(s), 0xe220a8397b1dcdafULL);
    Rng r(0);
    const auto first = r.next_u64();
    Rng again(0);
    EXPECT_EQ(first, again.next_u64());
}

TEST(Rng, WeightInitIsReproducible) {
    Rng r1(11), r2(11);
    Linear a(5, 4, r1), b(5, 4, r2);
    for (std::size_t i = 0; i < a.weight.numel(); ++i) EXPECT_EQ(a.weight.at(i), b.weight.at(i));
}

TEST(Rng, NormalMoments) {
    Rng r(12);
    double s = 0, s2 = 0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double v = r.normal();
        s += v;
        s2 += v * v;
    }
    EXPECT_NEAR(s / n, 0.0, 0.01);
    EXPECT_NEAR(s2 / n, 1.0, 0.01);
}

TEST(Rng, DerivedStreamsAreIndependentOfUse) {
    Rng root(5);
    Rng a = root.derive("encoder");
    (void)root.derive("flow").next_u64();
    Rng b = root.derive("encoder");
    EXPECT_EQ(a.next_u64(), b.next_u64());
    EXPECT_NE(root.derive("x", 1).next_u64(), root.derive("x", 2).next_u64());
}
