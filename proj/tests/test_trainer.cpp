#include <cmath>
#include <fstream>
#include <set>

#include "doctest.h"
#include "pamdn/error.hpp"
#include "pamdn/hash.hpp"
#include "pamdn/tns.hpp"
#include "pamdn/trainer.hpp"
#include "test_util.hpp"

using namespace pamdn;
using namespace pamdn::testing;

namespace {

// Small but complete configuration: 32x32 pairs, batch 2, scale 1/8.
struct Fixture {
    DatasetOptions data_opts;
    Dataset data;
    TrainConfig cfg;

    Fixture() {
        data_opts.count = 4;
        data_opts.height = data_opts.width = 32;
        data_opts.seed = 5;
        data = synth_dataset(data_opts);
        cfg.batch_size = 2;
        cfg.total_steps = 6;
        cfg.seed = 11;
        cfg.adam.lr = 1e-3;
    }
};

std::uint64_t params_hash(const NamedParams& params) {
    std::uint64_t h = fnv1a({});
    for (const auto& [name, p] : params) h = fnv1a(p.data(), h);
    return h;
}

std::vector<std::string> read_lines(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::vector<std::string> out;
    for (std::string line; std::getline(in, line);) out.push_back(line);
    return out;
}

}  // namespace

TEST_CASE("Adam: fixed point, first step, symmetry") {
    Var p = Var::parameter(Tensor(Shape{3}, std::vector<double>{0.5, -1.0, 2.0}));
    Adam opt({{"p", p}}, AdamConfig{});
    p.grad_buffer();  // zero gradient
    opt.step();
    CHECK(values(p) == std::vector<double>{0.5, -1.0, 2.0});

    for (double& g : p.grad_buffer()) g = 1.0;
    opt.step();
    const double expect = -1e-4 / (1.0 + 1e-8);
    CHECK(std::abs((p.data()[0] - 0.5) - expect) < 1e-9);
    CHECK(std::abs((p.data()[1] + 1.0) - expect) < 1e-9);
    CHECK(std::abs((p.data()[2] - 2.0) - expect) < 1e-9);
    CHECK(opt.m()[0][0] == doctest::Approx(0.1));
    CHECK(opt.v()[0][0] == doctest::Approx(0.001));
}

TEST_CASE("Adam: matches a hand-rolled update over several steps") {
    const AdamConfig cfg{0.01, 0.8, 0.95, 1e-6};
    Var p = Var::parameter(Tensor(Shape{2}, std::vector<double>{1.0, -2.0}));
    Adam opt({{"p", p}}, cfg);
    double w[2] = {1.0, -2.0}, m[2] = {0, 0}, v[2] = {0, 0};
    const double grads[4][2] = {{0.3, -1.0}, {0.1, 0.4}, {-0.2, 2.0}, {0.05, -0.5}};
    for (int t = 1; t <= 4; ++t) {
        p.zero_grad();
        for (int i = 0; i < 2; ++i) p.grad_buffer()[i] = grads[t - 1][i];
        opt.step();
        for (int i = 0; i < 2; ++i) {
            const double g = grads[t - 1][i];
            m[i] = cfg.beta1 * m[i] + (1 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1 - cfg.beta2) * g * g;
            const double mh = m[i] / (1 - std::pow(cfg.beta1, t)), vh = v[i] / (1 - std::pow(cfg.beta2, t));
            w[i] -= cfg.lr * mh / (std::sqrt(vh) + cfg.eps);
            CHECK(p.data()[i] == doctest::Approx(w[i]).epsilon(1e-14));
            CHECK(opt.v()[0][i] >= 0.0);
        }
    }
    CHECK(opt.t() == 4);
}

TEST_CASE("Adam: non-finite gradient aborts without a partial update") {
    Var a = Var::parameter(Tensor(Shape{2}, 1.0));
    Var b = Var::parameter(Tensor(Shape{2}, 1.0));
    Adam opt({{"a", a}, {"b", b}}, AdamConfig{});
    a.grad_buffer()[0] = 1.0;
    b.grad_buffer()[1] = std::nan("");
    CHECK_THROWS_AS(opt.step(), NumericError);
    CHECK(values(a) == std::vector<double>{1.0, 1.0});
    CHECK(opt.t() == 0);
}

TEST_CASE("batch_indices: seeded permutation per pass") {
    std::set<std::size_t> seen;
    for (long long s = 0; s < 5; ++s)
        for (auto i : batch_indices(3, s, 10, 2)) seen.insert(i);
    CHECK(seen.size() == 10);
    CHECK(batch_indices(3, 7, 10, 2) == batch_indices(3, 7, 10, 2));
    CHECK(batch_indices(3, 0, 10, 2) != batch_indices(4, 0, 10, 2));
    // 10 pairs, batch 4: two batches per pass, the remainder is dropped.
    const auto a = batch_indices(1, 0, 10, 4), b = batch_indices(1, 1, 10, 4);
    std::set<std::size_t> pass(a.begin(), a.end());
    pass.insert(b.begin(), b.end());
    CHECK(pass.size() == 8);
    CHECK_THROWS_AS(batch_indices(1, 0, 3, 4), ConfigError);
}

TEST_CASE("train_step: deterministic trajectories") {
    Fixture f;
    auto run = [&] {
        TrainState st = init_state(f.cfg);
        const auto ext = make_extractor(f.cfg);
        std::vector<std::string> lines;
        train_loop(st, f.cfg, f.data.pairs, ext, [&](const StepRecord& r, const TrainState&) { lines.push_back(log_line(r)); });
        return std::pair{lines, state_fingerprint(st)};
    };
    const auto a = run(), b = run();
    CHECK(a.first == b.first);
    CHECK(a.second == b.second);
}

TEST_CASE("train_step: gating keeps the discriminator fixed") {
    Fixture f;
    TrainState st = init_state(f.cfg);
    const auto ext = make_extractor(f.cfg);
    // Seed the running statistics so inference-mode checks are meaningful.
    {
        Tape t(false);
        st.d.forward(t, Var(stack_images({&f.data.pairs[0].clean, &f.data.pairs[1].clean})), BatchStatsMode::kTrain);
    }
    const auto d_before = params_hash(st.d.parameters());
    const auto g_before = params_hash(st.g.parameters());
    const auto stats_before = st.d.running_stats()[3].mean;
    const Tensor noisy = stack_images({&f.data.pairs[0].noisy, &f.data.pairs[1].noisy});
    const Tensor clean = stack_images({&f.data.pairs[0].clean, &f.data.pairs[1].clean});
    const auto rec = train_step(st, noisy, clean, {0.2, 0.7, 1e-3}, ext, 0);
    CHECK(params_hash(st.d.parameters()) == d_before);
    CHECK(st.d.running_stats()[3].mean.data()[0] == stats_before.data()[0]);
    CHECK(params_hash(st.g.parameters()) != g_before);
    CHECK(st.adam_d.t() == 0);
    CHECK(st.adam_g.t() == 1);
    CHECK(rec.d_loss > 0.0);
    CHECK(st.step == 1);

    // With updates on, D changes; G's own step never adds to D's moments.
    train_step(st, noisy, clean, {0.2, 0.7, 1e-3}, ext, 1);
    CHECK(params_hash(st.d.parameters()) != d_before);
    CHECK(st.adam_d.t() == 1);
    for (const auto& [name, p] : st.d.parameters()) {
        const bool dirty = p.has_grad() && std::any_of(p.grad().begin(), p.grad().end(), [](double g) { return g != 0.0; });
        CHECK_FALSE(dirty);
    }
}

TEST_CASE("train_step: smooth-L1 falls on a repeated batch with the discriminator frozen") {
    Fixture f;
    f.cfg.adam.lr = 1e-3;
    TrainState st = init_state(f.cfg);
    const auto ext = make_extractor(f.cfg);
    const Tensor noisy = stack_images({&f.data.pairs[0].noisy, &f.data.pairs[1].noisy});
    const Tensor clean = stack_images({&f.data.pairs[0].clean, &f.data.pairs[1].clean});
    double first = 0, last = 0;
    for (int s = 0; s <= 50; ++s) {
        const auto rec = train_step(st, noisy, clean, {0, 1, 0}, ext, 0);
        if (s == 0) first = rec.smooth_l1;
        last = rec.smooth_l1;
        Tape t(false);
        const Var scores = st.d.forward(t, Var(clean), BatchStatsMode::kTrainFrozen);
        for (double v : scores.data()) {
            CHECK(v > 0.0);
            CHECK(v < 1.0);
        }
    }
    CHECK(last < first);
}

TEST_CASE("train: log weights follow the schedule, endpoints exact") {
    Fixture f;
    TempDir dir("train_log");
    f.cfg.out_dir = dir.path() / "run";
    save_dataset(dir.path() / "data", f.data);
    f.cfg.manifest = dir.path() / "data" / "manifest.json";
    f.cfg.total_steps = 5;
    const auto ext_before = make_extractor(f.cfg).fingerprint();
    const TrainState st = train(f.cfg);
    CHECK(st.step == 5);
    const auto lines = read_lines(f.cfg.out_dir / "train_log.jsonl");
    REQUIRE(lines.size() == 5);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const auto r = parse_log_line(lines[i]);
        CHECK(r.step == static_cast<long long>(i));
        CHECK(r.weights == weights_for(f.cfg, r.step));
    }
    CHECK(parse_log_line(lines.front()).weights == LossWeights{0, 1, 0});
    CHECK(parse_log_line(lines.back()).weights == LossWeights{1, 0, 1e-3});
    CHECK(std::filesystem::exists(f.cfg.out_dir / "final" / "manifest.json"));
    CHECK(make_extractor(f.cfg).fingerprint() == ext_before);
}

TEST_CASE("train: invalid runs fail before anything is written") {
    Fixture f;
    TempDir dir("train_bad");
    f.cfg.out_dir = dir.path() / "run";
    f.cfg.manifest = dir.path() / "data" / "manifest.json";
    f.cfg.total_steps = 0;
    CHECK_THROWS_AS(train(f.cfg), RangeError);
    f.cfg.total_steps = 3;
    CHECK_THROWS_AS(train(f.cfg), IoError);  // manifest missing
    CHECK_FALSE(std::filesystem::exists(f.cfg.out_dir));
    f.cfg.batch_size = 1;
    CHECK_THROWS_AS(f.cfg.validate(), ConfigError);
}

TEST_CASE("checkpoint: round trip, step, scale check, corruption") {
    Fixture f;
    TempDir dir("ckpt");
    TrainState st = init_state(f.cfg);
    const auto ext = make_extractor(f.cfg);
    f.cfg.total_steps = 3;
    train_loop(st, f.cfg, f.data.pairs, ext);
    save_checkpoint(st, dir.path() / "c");
    const TrainState back = load_checkpoint(dir.path() / "c", Scale{1, 8});
    CHECK(back.step == 3);
    CHECK(state_fingerprint(back) == state_fingerprint(st));
    CHECK(back.adam_g.t() == st.adam_g.t());
    for (std::size_t k = 0; k < st.adam_g.m().size(); ++k) {
        CHECK(values(Var(back.adam_g.m()[k])) == values(Var(st.adam_g.m()[k])));
        CHECK(values(Var(back.adam_g.v()[k])) == values(Var(st.adam_g.v()[k])));
    }
    CHECK(back.d.running_stats()[0].initialized);

    CHECK_THROWS_AS(load_checkpoint(dir.path() / "c", Scale{1, 4}), ConfigError);

    const auto victim = dir.path() / "c" / "generator" / "head.weight.tns";
    {
        std::fstream io(victim, std::ios::in | std::ios::out | std::ios::binary);
        io.write("XXXX", 4);
    }
    try {
        load_checkpoint(dir.path() / "c");
        FAIL("corrupt checkpoint loaded");
    } catch (const IoError& e) {
        CHECK(std::string(e.what()).find("head.weight.tns") != std::string::npos);
    }
    write_tns(victim, Tensor(Shape{1, 3, 1, 1}));
    CHECK_THROWS_AS(load_checkpoint(dir.path() / "c"), DimensionError);
}

TEST_CASE("resume from a checkpoint equals an uninterrupted run") {
    Fixture f;
    TempDir dir("resume");
    const auto ext = make_extractor(f.cfg);

    TrainState whole = init_state(f.cfg);
    train_loop(whole, f.cfg, f.data.pairs, ext);

    // First leg: three iterations of the same six-step schedule.
    TrainState part_full = init_state(f.cfg);
    for (long long s = 0; s < 3; ++s) {
        const auto idx = batch_indices(f.cfg.seed, s, f.data.pairs.size(), f.cfg.batch_size);
        train_step(part_full, stack_images({&f.data.pairs[idx[0]].noisy, &f.data.pairs[idx[1]].noisy}),
                   stack_images({&f.data.pairs[idx[0]].clean, &f.data.pairs[idx[1]].clean}), weights_for(f.cfg, s), ext, 1);
    }
    save_checkpoint(part_full, dir.path() / "mid_full");
    TrainState resumed = load_checkpoint(dir.path() / "mid_full", f.cfg.scale, f.cfg.adam);
    CHECK(resumed.step == 3);
    train_loop(resumed, f.cfg, f.data.pairs, ext);
    CHECK(resumed.step == whole.step);
    CHECK(state_fingerprint(resumed) == state_fingerprint(whole));
}

TEST_CASE("non-finite loss aborts and keeps the last good state") {
    Fixture f;
    TempDir dir("nan");
    f.cfg.out_dir = dir.path();
    TrainState st = init_state(f.cfg);
    st.g.head().bias.mutable_value()[0] = std::nan("");
    const auto ext = make_extractor(f.cfg);
    CHECK_THROWS_AS(train_loop(st, f.cfg, f.data.pairs, ext), NumericError);
    CHECK(std::filesystem::exists(dir.path() / "last_good" / "manifest.json"));
    CHECK(st.adam_d.t() == 0);
}
