#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "vesselgan/errors.hpp"
#include "vesselgan/nn.hpp"
#include "vesselgan/rng.hpp"

using namespace vgan;
using oracles::fd_check;
using oracles::random_normal;

namespace {

// Scalar objective: fixed random projection of the layer output, so every
// output element contributes to the gradient.
struct Projected {
    Tensor weights;
    double operator()(const Tensor& y) const {
        double acc = 0.0;
        for (std::int64_t i = 0; i < y.numel(); ++i) acc += weights[i] * y[i];
        return acc;
    }
};

Projected projection_for(const Tensor& y, RngStream& rng) {
    Projected p{random_normal(y.shape(), rng)};
    return p;
}

Tensor proj_grad(const Projected& p) { return p.weights; }

}  // namespace

TEST_CASE("tensor basics") {
    Tensor t({2, 3});
    CHECK(t.numel() == 6);
    t.at(1, 2) = 5.0;
    CHECK(t[5] == 5.0);
    Tensor r = t.reshaped({3, 2});
    CHECK(r.at(2, 1) == 5.0);
    CHECK_THROWS_AS(t.reshaped({4, 2}), ShapeMismatchError);
}

TEST_CASE("conv2d gradients match finite differences") {
    RngStream rng(1, "conv");
    nn::Conv2d conv("c", 2, 3, 4, 2, 1);
    nn::init_params(conv.params(), 7, 0.1);
    Tensor x = random_normal({2, 2, 8, 8}, rng);

    Tensor y = conv.forward(x, true);
    CHECK(y.shape() == std::vector<int>{2, 3, 4, 4});
    Projected p = projection_for(y, rng);

    conv.weight_.zero_grad();
    conv.bias_.zero_grad();
    Tensor gx = conv.backward(p.weights);

    auto f = [&] { return p(conv.forward(x, true)); };
    CHECK(fd_check(x, gx, f) < 1e-6);
    CHECK(fd_check(conv.weight_.value, conv.weight_.grad, f) < 1e-6);
    CHECK(fd_check(conv.bias_.value, conv.bias_.grad, f) < 1e-6);
}

TEST_CASE("conv_transpose2d gradients match finite differences") {
    RngStream rng(2, "deconv");
    nn::ConvTranspose2d deconv("d", 3, 2, 4, 2, 1);
    nn::init_params(deconv.params(), 9, 0.1);
    Tensor x = random_normal({2, 3, 4, 4}, rng);

    Tensor y = deconv.forward(x, true);
    CHECK(y.shape() == std::vector<int>{2, 2, 8, 8});
    Projected p = projection_for(y, rng);

    deconv.weight_.zero_grad();
    deconv.bias_.zero_grad();
    Tensor gx = deconv.backward(p.weights);

    auto f = [&] { return p(deconv.forward(x, true)); };
    CHECK(fd_check(x, gx, f) < 1e-6);
    CHECK(fd_check(deconv.weight_.value, deconv.weight_.grad, f) < 1e-6);
    CHECK(fd_check(deconv.bias_.value, deconv.bias_.grad, f) < 1e-6);
}

TEST_CASE("conv and conv_transpose are adjoint") {
    // <conv(x), y> == <x, conv_transpose(y)> for shared weights, zero bias.
    RngStream rng(3, "adjoint");
    Tensor w = random_normal({3, 2, 4, 4}, rng, 0.2);  // (Cout=3, Cin=2)
    Tensor x = random_normal({1, 2, 8, 8}, rng);
    Tensor y = random_normal({1, 3, 4, 4}, rng);
    Tensor none;

    Tensor cx = nn::fn::conv2d(x, w, none, 2, 1);
    double lhs = 0.0;
    for (std::int64_t i = 0; i < cx.numel(); ++i) lhs += cx[i] * y[i];

    // conv_transpose weight layout (in=3, out=2, k, k) aliases w's memory:
    // the adjoint uses the same kernel with the channel roles swapped.
    Tensor wt = w.reshaped({3, 2, 4, 4});
    Tensor ty = nn::fn::conv_transpose2d(y, wt, none, 2, 1);
    double rhs = 0.0;
    for (std::int64_t i = 0; i < ty.numel(); ++i) rhs += ty[i] * x[i];
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("batchnorm train mode: normalization and gradients") {
    RngStream rng(4, "bn");
    nn::BatchNorm2d bn("b", 3);
    bn.gamma_.value[0] = 1.3;
    bn.beta_.value[1] = -0.4;
    Tensor x = random_normal({4, 3, 5, 5}, rng, 2.0);

    Tensor y = bn.forward(x, true);
    // Channel 2 has gamma=1, beta=0: output mean ~0, var ~1.
    double mean = 0.0, var = 0.0;
    const std::int64_t n = 4 * 5 * 5;
    for (int b = 0; b < 4; ++b) {
        for (int r = 0; r < 5; ++r) {
            for (int c = 0; c < 5; ++c) mean += y.at(b, 2, r, c) / n;
        }
    }
    for (int b = 0; b < 4; ++b) {
        for (int r = 0; r < 5; ++r) {
            for (int c = 0; c < 5; ++c) {
                const double d = y.at(b, 2, r, c) - mean;
                var += d * d / n;
            }
        }
    }
    CHECK(std::abs(mean) < 1e-12);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-3));

    Projected p = projection_for(y, rng);
    bn.gamma_.zero_grad();
    bn.beta_.zero_grad();
    Tensor gx = bn.backward(p.weights);
    auto f = [&] { return p(bn.forward(x, true)); };
    CHECK(fd_check(x, gx, f) < 1e-5);
    CHECK(fd_check(bn.gamma_.value, bn.gamma_.grad, f) < 1e-6);
    CHECK(fd_check(bn.beta_.value, bn.beta_.grad, f) < 1e-6);
}

TEST_CASE("batchnorm eval mode uses running statistics") {
    RngStream rng(5, "bn_eval");
    nn::BatchNorm2d bn("b", 2);
    Tensor x = random_normal({3, 2, 4, 4}, rng);
    bn.forward(x, true);  // populate running stats
    Tensor x2 = random_normal({3, 2, 4, 4}, rng);
    Tensor y1 = bn.forward(x2, false);
    Tensor y2 = bn.forward(x2, false);
    for (std::int64_t i = 0; i < y1.numel(); ++i) CHECK(y1[i] == y2[i]);

    Projected p = projection_for(y1, rng);
    bn.gamma_.zero_grad();
    bn.beta_.zero_grad();
    Tensor gx = bn.backward(p.weights);
    auto f = [&] { return p(bn.forward(x2, false)); };
    CHECK(fd_check(x2, gx, f) < 1e-6);
}

TEST_CASE("activations: gradients") {
    RngStream rng(6, "act");
    Tensor x = random_normal({1, 2, 4, 4}, rng);

    nn::LeakyReLU lrelu(0.2);
    Tensor y = lrelu.forward(x, true);
    Projected p = projection_for(y, rng);
    Tensor gx = lrelu.backward(p.weights);
    CHECK(fd_check(x, gx, [&] { return p(lrelu.forward(x, true)); }, 1e-6) < 1e-4);

    nn::Tanh th;
    y = th.forward(x, true);
    Projected pt = projection_for(y, rng);
    gx = th.backward(pt.weights);
    CHECK(fd_check(x, gx, [&] { return pt(th.forward(x, true)); }) < 1e-6);

    nn::Sigmoid sg;
    y = sg.forward(x, true);
    Projected ps = projection_for(y, rng);
    gx = sg.backward(ps.weights);
    CHECK(fd_check(x, gx, [&] { return ps(sg.forward(x, true)); }) < 1e-6);
}

TEST_CASE("dense: gradients") {
    RngStream rng(7, "dense");
    nn::Dense dense("fc", 6, 3);
    nn::init_params(dense.params(), 3, 0.2);
    Tensor x = random_normal({4, 6}, rng);
    Tensor y = dense.forward(x, true);
    CHECK(y.shape() == std::vector<int>{4, 3});
    Projected p = projection_for(y, rng);
    dense.weight_.zero_grad();
    dense.bias_.zero_grad();
    Tensor gx = dense.backward(p.weights);
    auto f = [&] { return p(dense.forward(x, true)); };
    CHECK(fd_check(x, gx, f) < 1e-6);
    CHECK(fd_check(dense.weight_.value, dense.weight_.grad, f) < 1e-6);
    CHECK(fd_check(dense.bias_.value, dense.bias_.grad, f) < 1e-6);
}

TEST_CASE("bilinear upsample: exactness on constants and gradients") {
    RngStream rng(8, "up");
    nn::BilinearUpsample up(8);
    Tensor flat = Tensor::full({1, 1, 4, 4}, 0.7);
    Tensor yf = up.forward(flat, true);
    for (std::int64_t i = 0; i < yf.numel(); ++i) CHECK(yf[i] == doctest::Approx(0.7).epsilon(1e-15));

    Tensor x = random_normal({1, 2, 4, 4}, rng);
    Tensor y = up.forward(x, true);
    CHECK(y.shape() == std::vector<int>{1, 2, 8, 8});
    Projected p = projection_for(y, rng);
    Tensor gx = up.backward(p.weights);
    CHECK(fd_check(x, gx, [&] { return p(up.forward(x, true)); }) < 1e-6);
}

TEST_CASE("maxpool: shape, routing, gradients") {
    RngStream rng(9, "pool");
    Tensor x = random_normal({1, 2, 6, 6}, rng);
    Tensor argmax;
    Tensor y = nn::fn::maxpool2(x, &argmax);
    CHECK(y.shape() == std::vector<int>{1, 2, 3, 3});

    Tensor gy = random_normal(y.shape(), rng);
    Tensor gx = nn::fn::maxpool2_grad(gy, argmax, x.shape());
    Projected p{gy};
    // Ties are measure-zero for random input, so FD is valid.
    CHECK(fd_check(x, gx, [&] {
              Tensor am;
              return p(nn::fn::maxpool2(x, &am));
          }, 1e-6) < 1e-4);

    // 1x1 input passes through.
    Tensor tiny = random_normal({1, 2, 1, 1}, rng);
    Tensor am2;
    Tensor t2 = nn::fn::maxpool2(tiny, &am2);
    CHECK(t2.shape() == tiny.shape());
}

TEST_CASE("rng: determinism and noise statistics") {
    RngStream a(42, "x");
    RngStream b(42, "x");
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

    RngStream c(42, "y");
    double mean = 0.0, var = 0.0;
    const int n = 100000;
    std::vector<double> vals(n);
    for (int i = 0; i < n; ++i) {
        vals[i] = c.normal();
        mean += vals[i] / n;
    }
    for (int i = 0; i < n; ++i) var += (vals[i] - mean) * (vals[i] - mean) / n;
    CHECK(std::abs(mean) < 0.02);
    CHECK(std::sqrt(var) == doctest::Approx(1.0).epsilon(0.02));
}
