#include <cmath>

#include "doctest.h"
#include "pamdn/error.hpp"
#include "pamdn/ops.hpp"
#include "test_util.hpp"

using namespace pamdn;
using namespace pamdn::testing;
using doctest::Approx;

namespace {

Var zeros(Shape s) { return Var(Tensor(s, 0.0)); }

double plane_mean(const Var& v, std::size_t nc, std::size_t m) {
    double acc = 0.0;
    for (std::size_t i = 0; i < m; ++i) acc += v.data()[nc * m + i];
    return acc / static_cast<double>(m);
}

double plane_var(const Var& v, std::size_t nc, std::size_t m) {
    const double mu = plane_mean(v, nc, m);
    double acc = 0.0;
    for (std::size_t i = 0; i < m; ++i) acc += (v.data()[nc * m + i] - mu) * (v.data()[nc * m + i] - mu);
    return acc / static_cast<double>(m);
}

}  // namespace

TEST_CASE("conv2d: hand-computed diagonal kernel") {
    Tape tape(false);
    auto x = constant(Shape{1, 1, 2, 2}, {1, 2, 3, 4});
    auto w = constant(Shape{1, 1, 2, 2}, {1, 0, 0, 1});
    auto y = ops::conv2d(tape, x, w, zeros(Shape{1}), 1, 0);
    CHECK(y.shape() == Shape{1, 1, 1, 1});
    CHECK(y.data()[0] == 5.0);
}

TEST_CASE("conv2d: zero weights and same-padding shape") {
    Tape tape(false);
    auto x = Var(random_tensor(Shape{2, 3, 16, 16}, 3));
    auto y = ops::conv2d(tape, x, zeros(Shape{8, 3, 3, 3}), zeros(Shape{8}), 1, 1);
    CHECK(y.shape() == Shape{2, 8, 16, 16});
    for (double v : y.data()) CHECK(v == 0.0);
}

TEST_CASE("conv2d: odd kernels with (k-1)/2 padding preserve spatial shape") {
    Tape tape(false);
    for (std::size_t k : {1u, 3u, 5u}) {
        for (std::size_t h : {3u, 8u, 13u}) {
            auto x = Var(random_tensor(Shape{1, 2, h, h + 2}, h));
            auto w = Var(random_tensor(Shape{3, 2, k, k}, k));
            auto y = ops::conv2d(tape, x, w, zeros(Shape{3}), 1, static_cast<int>((k - 1) / 2));
            CHECK(y.shape() == Shape{1, 3, h, h + 2});
        }
    }
}

TEST_CASE("conv2d: strided output matches direct evaluation") {
    Tape tape(false);
    auto x = Var(random_tensor(Shape{2, 3, 9, 7}, 11));
    auto w = Var(random_tensor(Shape{4, 3, 3, 3}, 12));
    auto b = Var(random_tensor(Shape{4}, 13));
    auto y = ops::conv2d(tape, x, w, b, 2, 1);
    REQUIRE(y.shape() == Shape{2, 4, 5, 4});
    for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t o = 0; o < 4; ++o)
            for (std::size_t i = 0; i < 5; ++i)
                for (std::size_t j = 0; j < 4; ++j) {
                    double acc = b.data()[o];
                    for (std::size_t c = 0; c < 3; ++c)
                        for (int ky = 0; ky < 3; ++ky)
                            for (int kx = 0; kx < 3; ++kx) {
                                const int iy = static_cast<int>(i) * 2 + ky - 1, ix = static_cast<int>(j) * 2 + kx - 1;
                                if (iy < 0 || iy >= 9 || ix < 0 || ix >= 7) continue;
                                acc += x.value().at(n, c, iy, ix) * w.value().at(o, c, ky, kx);
                            }
                    CHECK(y.value().at(n, o, i, j) == Approx(acc).epsilon(1e-12));
                }
}

TEST_CASE("conv2d: errors") {
    Tape tape(false);
    auto x = Var(random_tensor(Shape{1, 2, 8, 8}, 1));
    CHECK_THROWS_AS(ops::conv2d(tape, x, zeros(Shape{4, 3, 3, 3}), zeros(Shape{4}), 1, 1), DimensionError);
    try {
        ops::conv2d(tape, x, zeros(Shape{4, 3, 3, 3}), zeros(Shape{4}), 1, 1);
    } catch (const DimensionError& e) {
        CHECK(std::string(e.what()).find("in_c") != std::string::npos);
    }
    CHECK_THROWS_AS(ops::conv2d(tape, x, zeros(Shape{4, 2, 3, 3}), zeros(Shape{4}), 2, 0), ConfigError);
    CHECK_THROWS_AS(ops::conv2d(tape, x, zeros(Shape{4, 2, 9, 9}), zeros(Shape{4}), 1, 0), ConfigError);
}

TEST_CASE("conv2d_transpose: shape doubling, zero weights, scatter arithmetic") {
    Tape tape(false);
    auto x = Var(random_tensor(Shape{1, 1, 2, 2}, 5));
    auto y = ops::conv2d_transpose(tape, x, zeros(Shape{1, 3, 2, 2}), zeros(Shape{3}), 2);
    CHECK(y.shape() == Shape{1, 3, 4, 4});
    for (double v : y.data()) CHECK(v == 0.0);

    auto one = constant(Shape{1, 1, 1, 1}, {1.0});
    auto z = ops::conv2d_transpose(tape, one, filled(Shape{1, 1, 2, 2}, 1.0), zeros(Shape{1}), 2);
    CHECK(values(z) == std::vector<double>{1, 1, 1, 1});

    CHECK_THROWS_AS(ops::conv2d_transpose(tape, x, zeros(Shape{1, 1, 3, 3}), zeros(Shape{1}), 2), ConfigError);
}

TEST_CASE("conv2d_transpose is the adjoint of the strided convolution") {
    // <T x, y> == <x, C y> for the stride-2, kernel-2 pair sharing weights.
    Tape tape(false);
    auto x = Var(random_tensor(Shape{2, 3, 4, 5}, 21));
    auto y = Var(random_tensor(Shape{2, 4, 8, 10}, 22));
    auto wt = Var(random_tensor(Shape{3, 4, 2, 2}, 23));
    // Same numbers viewed as a (in_c=4, out_c=3) convolution weight.
    Tensor wc(Shape{3, 4, 2, 2});
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t o = 0; o < 4; ++o)
            for (std::size_t a = 0; a < 2; ++a)
                for (std::size_t b = 0; b < 2; ++b) wc.at(i, o, a, b) = wt.value().at(i, o, a, b);
    auto tx = ops::conv2d_transpose(tape, x, wt, zeros(Shape{4}), 2);
    auto cy = ops::conv2d(tape, y, Var(wc), zeros(Shape{3}), 2, 0);
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t i = 0; i < tx.size(); ++i) lhs += tx.data()[i] * y.data()[i];
    for (std::size_t i = 0; i < cy.size(); ++i) rhs += cy.data()[i] * x.data()[i];
    CHECK(lhs == Approx(rhs).epsilon(1e-12));
}

TEST_CASE("maxpool2d: values, constant invariance, argmax routing, ties") {
    Tape tape;
    auto x = param(Shape{1, 1, 2, 2}, {1, 2, 3, 4});
    auto y = ops::maxpool2d(tape, x);
    CHECK(values(y) == std::vector<double>{4});
    tape.backward(ops::sum(tape, y));
    CHECK(std::vector<double>(x.grad().begin(), x.grad().end()) == std::vector<double>{0, 0, 0, 1});

    Tape t2(false);
    auto c = ops::maxpool2d(t2, filled(Shape{2, 3, 8, 6}, 0.7));
    CHECK(c.shape() == Shape{2, 3, 4, 3});
    for (double v : c.data()) CHECK(v == 0.7);

    Tape t3;
    auto tie = param(Shape{1, 1, 2, 2}, {5, 5, 5, 5});
    t3.backward(ops::sum(t3, ops::maxpool2d(t3, tie)));
    CHECK(std::vector<double>(tie.grad().begin(), tie.grad().end()) == std::vector<double>{1, 0, 0, 0});

    CHECK_THROWS_AS(ops::maxpool2d(t2, filled(Shape{1, 1, 3, 4}, 0.0)), DimensionError);
}

TEST_CASE("instance_norm examples") {
    Tape tape(false);
    auto one = filled(Shape{1}, 1.0);
    auto zero = filled(Shape{1}, 0.0);
    auto flat = ops::instance_norm(tape, filled(Shape{1, 1, 3, 3}, 2.5), one, zero);
    for (double v : flat.data()) CHECK(v == 0.0);

    auto pm = ops::instance_norm(tape, constant(Shape{1, 1, 1, 2}, {-1, 1}), one, zero, 1e-14);
    CHECK(pm.data()[0] == Approx(-1.0).epsilon(1e-12));
    CHECK(pm.data()[1] == Approx(1.0).epsilon(1e-12));

    auto over = ops::instance_norm(tape, Var(random_tensor(Shape{1, 1, 4, 4}, 2)), filled(Shape{1}, 0.0),
                                   filled(Shape{1}, 5.0));
    for (double v : over.data()) CHECK(v == 5.0);
}

TEST_CASE("instance_norm per-plane moments") {
    Tape tape(false);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        auto x = Var(random_tensor(Shape{2, 3, 6, 5}, seed, -4.0, 9.0));
        auto gamma = Var(random_tensor(Shape{3}, seed + 100, 0.5, 2.0));
        auto beta = Var(random_tensor(Shape{3}, seed + 200));
        auto y = ops::instance_norm(tape, x, gamma, beta);
        for (std::size_t nc = 0; nc < 6; ++nc) {
            const double g = gamma.data()[nc % 3], b = beta.data()[nc % 3];
            CHECK(std::abs(plane_mean(y, nc, 30) - b) < 1e-9);
            CHECK(std::abs(plane_var(y, nc, 30) - g * g) < 1e-6 * g * g + 1e-6);
        }
    }
}

TEST_CASE("batch_norm examples") {
    auto one = filled(Shape{2}, 1.0);
    auto zero = filled(Shape{2}, 0.0);
    {
        Tape tape(false);
        ops::RunningStats stats(2);
        auto y = ops::batch_norm(tape, filled(Shape{3, 2, 2, 2}, 4.0), one, zero, &stats, 0.1, 1e-5, true);
        for (double v : y.data()) CHECK(v == 0.0);
    }
    {
        Tape tape(false);
        ops::RunningStats stats(2);
        auto x = Var(random_tensor(Shape{4, 2, 3, 3}, 8));
        ops::batch_norm(tape, x, one, zero, &stats, 1.0, 1e-5, true);
        for (std::size_t c = 0; c < 2; ++c) {
            double mu = 0.0, var = 0.0;
            for (std::size_t n = 0; n < 4; ++n)
                for (std::size_t i = 0; i < 9; ++i) mu += x.value().at(n, c, i / 3, i % 3);
            mu /= 36.0;
            for (std::size_t n = 0; n < 4; ++n)
                for (std::size_t i = 0; i < 9; ++i) var += std::pow(x.value().at(n, c, i / 3, i % 3) - mu, 2);
            var /= 36.0;
            CHECK(stats.mean[c] == Approx(mu).epsilon(1e-12));
            CHECK(stats.var[c] == Approx(var).epsilon(1e-12));
        }
        CHECK(stats.initialized);
        auto inf = ops::batch_norm(tape, x, one, zero, &stats, 0.1, 1e-5, false);
        auto tr = ops::batch_norm(tape, x, one, zero, nullptr, 0.1, 1e-5, true);
        for (std::size_t i = 0; i < x.size(); ++i) CHECK(inf.data()[i] == Approx(tr.data()[i]).epsilon(1e-12));
    }
    {
        Tape tape(false);
        auto x = constant(Shape{2, 1, 1, 1}, {0.0, 2.0});
        auto y = ops::batch_norm(tape, x, filled(Shape{1}, 1.0), filled(Shape{1}, 0.0), nullptr, 0.1, 1e-14, true);
        CHECK(y.data()[0] == Approx(-1.0).epsilon(1e-12));
        CHECK(y.data()[1] == Approx(1.0).epsilon(1e-12));
    }
    {
        Tape tape(false);
        ops::RunningStats fresh(2);
        CHECK_THROWS_AS(ops::batch_norm(tape, filled(Shape{2, 2, 2, 2}, 1.0), one, zero, &fresh, 0.1, 1e-5, false),
                        StateError);
        CHECK_THROWS_AS(ops::batch_norm(tape, filled(Shape{2, 2, 2, 2}, 1.0), one, zero, nullptr, 0.1, 1e-5, false),
                        StateError);
    }
}

TEST_CASE("layer_norm examples") {
    Tape tape(false);
    auto beta = constant(Shape{3}, {0.1, 0.2, 0.3});
    auto c = ops::layer_norm(tape, filled(Shape{2, 3, 1, 1}, 4.0), filled(Shape{3}, 1.0), beta);
    for (std::size_t i = 0; i < 6; ++i) CHECK(c.data()[i] == beta.data()[i % 3]);

    auto pm = ops::layer_norm(tape, constant(Shape{1, 2}, {-3, 3}), filled(Shape{2}, 1.0), filled(Shape{2}, 0.0), 1e-14);
    CHECK(pm.data()[0] == Approx(-1.0).epsilon(1e-12));
    CHECK(pm.data()[1] == Approx(1.0).epsilon(1e-12));

    auto x = Var(random_tensor(Shape{2, 4, 1, 1}, 4));
    auto y1 = ops::layer_norm(tape, x, filled(Shape{4}, 1.0), filled(Shape{4}, 0.0));
    auto y2 = ops::layer_norm(tape, x, filled(Shape{4}, 2.0), filled(Shape{4}, 0.0));
    for (std::size_t i = 0; i < 8; ++i) CHECK(y2.data()[i] == 2.0 * y1.data()[i]);
}

TEST_CASE("leaky_relu examples") {
    Tape tape(false);
    auto y = ops::leaky_relu(tape, constant(Shape{2}, {3.0, -5.0}), 0.2);
    CHECK(y.data()[0] == 3.0);
    CHECK(y.data()[1] == doctest::Approx(-1.0).epsilon(1e-15));
    auto x = Var(random_tensor(Shape{10}, 3));
    CHECK(values(ops::leaky_relu(tape, x, 1.0)) == values(x));

    Tape rec;
    auto z = param(Shape{1}, {0.0});
    rec.backward(ops::sum(rec, ops::leaky_relu(rec, z, 0.2)));
    CHECK(z.grad()[0] == 0.2);
}

TEST_CASE("linear examples") {
    Tape tape(false);
    auto x = Var(random_tensor(Shape{3, 4}, 6));
    Tensor eye(Shape{4, 4}, 0.0);
    for (std::size_t i = 0; i < 4; ++i) eye[i * 4 + i] = 1.0;
    CHECK(values(ops::linear(tape, x, Var(eye), filled(Shape{4}, 0.0))) == values(x));

    auto y = ops::linear(tape, constant(Shape{1, 2}, {1, 2}), constant(Shape{1, 2}, {3, 4}), constant(Shape{1}, {1}));
    CHECK(y.data()[0] == 12.0);

    auto b = constant(Shape{2}, {0.5, -1.5});
    auto z = ops::linear(tape, x, filled(Shape{2, 4}, 0.0), b);
    for (std::size_t r = 0; r < 3; ++r) {
        CHECK(z.data()[r * 2] == 0.5);
        CHECK(z.data()[r * 2 + 1] == -1.5);
    }
    CHECK_THROWS_AS(ops::linear(tape, x, filled(Shape{2, 3}, 0.0), b), DimensionError);
}

TEST_CASE("sigmoid examples and range") {
    Tape tape(false);
    auto y = ops::sigmoid(tape, constant(Shape{3}, {0.0, 50.0, -50.0}));
    CHECK(y.data()[0] == 0.5);
    CHECK(std::abs(y.data()[1] - 1.0) < 1e-9);
    auto x = Var(random_tensor(Shape{64}, 17, -40.0, 40.0));
    auto p = ops::sigmoid(tape, x);
    auto q = ops::sigmoid(tape, ops::affine(tape, x, -1.0, 0.0));
    for (std::size_t i = 0; i < 64; ++i) CHECK(p.data()[i] + q.data()[i] == Approx(1.0).epsilon(1e-15));
    auto extreme = ops::sigmoid(tape, constant(Shape{4}, {-1e300, -800.0, 800.0, 1e300}));
    for (double v : extreme.data()) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
    }
}

TEST_CASE("spatial softmax and weighted pooling") {
    Tape tape(false);
    auto logits = Var(random_tensor(Shape{3, 1, 4, 5}, 31, -3.0, 3.0));
    auto a = ops::spatial_softmax(tape, logits);
    for (std::size_t n = 0; n < 3; ++n) {
        double s = 0.0;
        for (std::size_t i = 0; i < 20; ++i) s += a.data()[n * 20 + i];
        CHECK(std::abs(s - 1.0) < 1e-12);
    }
    auto ctx = ops::weighted_pool(tape, filled(Shape{3, 2, 4, 5}, 0.25), a);
    CHECK(ctx.shape() == Shape{3, 2, 1, 1});
    for (double v : ctx.data()) CHECK(v == Approx(0.25).epsilon(1e-14));
}

TEST_CASE("forward passes are bit-reproducible") {
    auto run = [] {
        Tape tape(false);
        auto x = Var(random_tensor(Shape{2, 3, 8, 8}, 44));
        auto w = Var(random_tensor(Shape{5, 3, 3, 3}, 45));
        auto y = ops::conv2d(tape, x, w, filled(Shape{5}, 0.1), 1, 1);
        y = ops::instance_norm(tape, y, filled(Shape{5}, 1.0), filled(Shape{5}, 0.0));
        y = ops::maxpool2d(tape, ops::leaky_relu(tape, y));
        return values(y);
    };
    CHECK(run() == run());
}
