#include "pamdn/selfcheck.hpp"

#include <algorithm>
#include <random>

#include "pamdn/error.hpp"
#include "pamdn/gradcheck.hpp"
#include "pamdn/ops.hpp"

namespace pamdn {

namespace {

struct Case {
    std::string name;
    ScalarFn f;
    Tensor x;
};

Tensor uniform(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor t(shape);
    for (double& v : t.data()) v = u(rng);
    return t;
}

// Identity forward whose backward passes 1.5x the upstream gradient.
Var faulty_identity(Tape& tape, const Var& x) {
    return tape.emit(x.value(), {&x}, [x](const Node& out) {
        auto dx = grad_sink(x);
        const auto g = out.value.grad();
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += 1.5 * g[i];
    });
}

std::vector<Case> build_cases(const GradcheckSuiteOptions& o) {
    if (o.size == 0 || o.size % 16 != 0)
        throw ConfigError("gradcheck size must be a positive multiple of 16, got " + std::to_string(o.size));
    std::uint64_t s = o.seed * 1000;
    auto rnd = [&](Shape shape, double lo = -1.0, double hi = 1.0) { return uniform(shape, ++s, lo, hi); };

    // Shared operands. Every tensor lives inside the closures by value.
    const Tensor x4 = rnd(Shape{2, 3, 6, 6});
    const Var w(rnd(Shape{4, 3, 3, 3})), b(rnd(Shape{4}));
    const Var wt(rnd(Shape{3, 2, 2, 2})), bt(rnd(Shape{2}));
    const Var g3(rnd(Shape{3}, 0.5, 1.5)), b3(rnd(Shape{3}));
    const Var g108(rnd(Shape{108}, 0.5, 1.5)), b108(rnd(Shape{108}));
    const Var lw(rnd(Shape{5, 7})), lb(rnd(Shape{5}));
    const Tensor lx = rnd(Shape{3, 7});
    const Var other(rnd(Shape{2, 3, 6, 6}));
    const Tensor ctx = rnd(Shape{2, 3, 1, 1});
    const Tensor logits = rnd(Shape{2, 1, 6, 6});
    const Var soft = [&] {
        Tape t(false);
        return ops::spatial_softmax(t, Var(logits));
    }();
    const Tensor positive = rnd(Shape{2, 3, 6, 6}, 0.2, 2.0);
    const Tensor wide = rnd(Shape{2, 3, 6, 6}, -3.0, 3.0);

    // sum(y * r) with a fixed random r, so every output gets its own weight.
    auto proj = [&](std::uint64_t tag) {
        return [tag](Tape& t, const Var& y) {
            return ops::sum(t, ops::mul(t, y, Var(uniform(y.shape(), 77000 + tag))));
        };
    };

    std::vector<Case> c;
    auto add = [&](std::string name, auto body, Tensor x) {
        const auto p = proj(c.size());
        c.push_back({std::move(name), [body, p](Tape& t, const Var& v) { return p(t, body(t, v)); }, std::move(x)});
    };

    add("conv2d/input", [=](Tape& t, const Var& v) { return ops::conv2d(t, v, w, b, 1, 1); }, x4);
    add("conv2d/weight", [=](Tape& t, const Var& v) { return ops::conv2d(t, Var(x4), v, b, 2, 1); }, w.value());
    add("conv2d/bias", [=](Tape& t, const Var& v) { return ops::conv2d(t, Var(x4), w, v, 1, 0); }, b.value());
    add("conv2d_transpose/input", [=](Tape& t, const Var& v) { return ops::conv2d_transpose(t, v, wt, bt, 2); }, x4);
    add("conv2d_transpose/weight",
        [=](Tape& t, const Var& v) { return ops::conv2d_transpose(t, Var(x4), v, bt, 2); }, wt.value());
    add("conv2d_transpose/bias", [=](Tape& t, const Var& v) { return ops::conv2d_transpose(t, Var(x4), wt, v, 2); },
        bt.value());
    add("maxpool2d", [](Tape& t, const Var& v) { return ops::maxpool2d(t, v); }, x4);
    add("instance_norm/input", [=](Tape& t, const Var& v) { return ops::instance_norm(t, v, g3, b3); }, x4);
    add("instance_norm/gamma", [=](Tape& t, const Var& v) { return ops::instance_norm(t, Var(x4), v, b3); },
        g3.value());
    add("instance_norm/beta", [=](Tape& t, const Var& v) { return ops::instance_norm(t, Var(x4), g3, v); },
        b3.value());
    add("batch_norm/input",
        [=](Tape& t, const Var& v) { return ops::batch_norm(t, v, g3, b3, nullptr, 0.1, 1e-5, true); }, x4);
    add("batch_norm/gamma",
        [=](Tape& t, const Var& v) { return ops::batch_norm(t, Var(x4), v, b3, nullptr, 0.1, 1e-5, true); },
        g3.value());
    add("batch_norm/beta",
        [=](Tape& t, const Var& v) { return ops::batch_norm(t, Var(x4), g3, v, nullptr, 0.1, 1e-5, true); },
        b3.value());
    add("layer_norm/input", [=](Tape& t, const Var& v) { return ops::layer_norm(t, v, g108, b108); }, x4);
    add("layer_norm/gamma", [=](Tape& t, const Var& v) { return ops::layer_norm(t, Var(x4), v, b108); },
        g108.value());
    add("layer_norm/beta", [=](Tape& t, const Var& v) { return ops::layer_norm(t, Var(x4), g108, v); },
        b108.value());
    add("leaky_relu", [](Tape& t, const Var& v) { return ops::leaky_relu(t, v); }, x4);
    add("relu", [](Tape& t, const Var& v) { return ops::relu(t, v); }, x4);
    add("sigmoid", [](Tape& t, const Var& v) { return ops::sigmoid(t, v); }, wide);
    add("linear/input", [=](Tape& t, const Var& v) { return ops::linear(t, v, lw, lb); }, lx);
    add("linear/weight", [=](Tape& t, const Var& v) { return ops::linear(t, Var(lx), v, lb); }, lw.value());
    add("linear/bias", [=](Tape& t, const Var& v) { return ops::linear(t, Var(lx), lw, v); }, lb.value());
    add("spatial_softmax", [](Tape& t, const Var& v) { return ops::spatial_softmax(t, v); }, logits);
    add("weighted_pool/input", [=](Tape& t, const Var& v) { return ops::weighted_pool(t, v, soft); }, x4);
    add("weighted_pool/weights", [=](Tape& t, const Var& v) { return ops::weighted_pool(t, Var(x4), v); },
        soft.value());
    add("add_broadcast/input", [=](Tape& t, const Var& v) { return ops::add_broadcast(t, v, Var(ctx)); }, x4);
    add("add_broadcast/context", [=](Tape& t, const Var& v) { return ops::add_broadcast(t, other, v); }, ctx);
    add("concat_channels", [=](Tape& t, const Var& v) { return ops::concat_channels(t, other, v); }, x4);
    add("global_avg_pool", [](Tape& t, const Var& v) { return ops::global_avg_pool(t, v); }, x4);
    add("add", [=](Tape& t, const Var& v) { return ops::add(t, v, other); }, x4);
    add("sub", [=](Tape& t, const Var& v) { return ops::sub(t, other, v); }, x4);
    add("mul", [=](Tape& t, const Var& v) { return ops::mul(t, v, other); }, x4);
    add("affine", [](Tape& t, const Var& v) { return ops::affine(t, v, -1.7, 0.3); }, x4);
    add("square", [](Tape& t, const Var& v) { return ops::square(t, v); }, x4);
    add("log", [](Tape& t, const Var& v) { return ops::log(t, v); }, positive);
    add("clamp", [](Tape& t, const Var& v) { return ops::clamp(t, v, -2.5, 2.5); }, wide);
    add("smooth_l1", [](Tape& t, const Var& v) { return ops::smooth_l1(t, v); }, wide);
    add("sum", [](Tape& t, const Var& v) { return ops::affine(t, ops::sum(t, v), 1.0, 0.0); }, x4);
    add("mean", [](Tape& t, const Var& v) { return ops::affine(t, ops::mean(t, v), 1.0, 0.0); }, x4);

    // Composite blocks and the full networks at the requested scale.
    Generator gen = Generator::build(o.seed + 11, o.scale);
    Discriminator disc = Discriminator::build(o.seed + 17, o.scale);
    const StandardUnitBlock unit = gen.encoder()[0];
    const GCBlock gc = gen.gc_blocks()[1];
    const int gc_ch = gc.channels;
    const std::size_t n = o.size;

    add("standard_unit_block", [unit](Tape& t, const Var& v) { return unit.forward(t, v); },
        rnd(Shape{2, 1, 8, 8}));
    add("gc_block", [gc](Tape& t, const Var& v) { return gc.forward(t, v); },
        rnd(Shape{2, static_cast<std::size_t>(gc_ch), 4, 4}));
    add("generator/input", [gen](Tape& t, const Var& v) { return gen.forward(t, v); }, rnd(Shape{2, 1, n, n}, 0.0, 1.0));
    {
        const Tensor x = rnd(Shape{2, 1, n, n}, 0.0, 1.0);
        add("generator/gc_weight",
            [gen, x](Tape& t, const Var& v) {
                Generator g = gen;
                g.gc_blocks()[1].reduce.weight = v;
                return g.forward(t, Var(x));
            },
            gc.reduce.weight.value());
    }
    add("discriminator/input",
        [disc](Tape& t, const Var& v) { return disc.forward(t, v, BatchStatsMode::kTrainFrozen); },
        rnd(Shape{4, 1, n, n}, 0.0, 1.0));
    {
        const Tensor x = rnd(Shape{4, 1, n, n}, 0.0, 1.0);
        add("discriminator/head_weight",
            [disc, x](Tape& t, const Var& v) {
                Discriminator d = disc;
                d.fc_head().weight = v;
                return d.forward(t, Var(x), BatchStatsMode::kTrainFrozen);
            },
            disc.fc_head().weight.value());
    }
    return c;
}

}  // namespace

std::vector<GradcheckEntry> gradcheck_suite(const GradcheckSuiteOptions& opts) {
    std::vector<Case> cases = build_cases(opts);
    if (!opts.corrupt.empty()) {
        auto it = std::find_if(cases.begin(), cases.end(), [&](const Case& c) { return c.name == opts.corrupt; });
        if (it == cases.end()) throw ConfigError("no gradcheck entry named '" + opts.corrupt + "'");
        it->f = [f = it->f](Tape& t, const Var& v) { return f(t, faulty_identity(t, v)); };
    }
    std::vector<GradcheckEntry> out;
    for (const auto& c : cases) out.push_back({c.name, grad_check_refined(c.f, c.x, opts.steps)});
    return out;
}

std::vector<std::string> gradcheck_suite_names() {
    std::vector<std::string> names;
    for (const auto& c : build_cases({})) names.push_back(c.name);
    return names;
}

}  // namespace pamdn
