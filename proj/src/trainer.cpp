#include "pamdn/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "json.hpp"
#include "pamdn/error.hpp"
#include "pamdn/hash.hpp"
#include "pamdn/ops.hpp"
#include "pamdn/rng.hpp"
#include "pamdn/tns.hpp"

namespace pamdn {

using nlohmann::json;

// ================================================================ Adam

Adam::Adam(NamedParams params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    for (const auto& [name, p] : params_) {
        m_.emplace_back(p.shape(), 0.0);
        v_.emplace_back(p.shape(), 0.0);
    }
}

void Adam::zero_grad() {
    for (auto& [name, p] : params_) p.zero_grad();
}

void Adam::step() {
    for (const auto& [name, p] : params_) {
        if (!p.has_grad()) continue;
        for (double g : p.grad())
            if (!std::isfinite(g)) throw NumericError("non-finite gradient in " + name + "; update skipped");
    }
    std::vector<std::size_t> live;
    for (std::size_t k = 0; k < params_.size(); ++k) {
        const Var& p = params_[k].second;
        if (!p.has_grad()) continue;
        const auto g = p.grad();
        if (std::any_of(g.begin(), g.end(), [](double x) { return x != 0.0; })) live.push_back(k);
    }
    // A step with nothing to update does not advance the bias correction.
    if (live.empty()) return;
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t k : live) {
        Var& p = params_[k].second;
        const auto g = p.grad();
        auto w = p.mutable_value().data();
        auto m = m_[k].data();
        auto v = v_[k].data();
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
            const double mh = m[i] / c1;
            const double vh = v[i] / c2;
            w[i] -= cfg_.lr * mh / (std::sqrt(vh) + cfg_.eps);
        }
    }
}

// ================================================================ config

void TrainConfig::validate() const {
    if (total_steps <= 0) throw RangeError("total_steps must be positive, got " + std::to_string(total_steps));
    if (batch_size < 2) throw ConfigError("batch_size must be at least 2 (batch-norm statistics)");
    if (d_steps_per_g_step < 0) throw ConfigError("d_steps_per_g_step must be >= 0");
    if (checkpoint_interval < 0) throw ConfigError("checkpoint_interval must be >= 0");
    if (!(adam.lr > 0) || !(adam.eps > 0) || adam.beta1 < 0 || adam.beta1 >= 1 || adam.beta2 < 0 || adam.beta2 >= 1)
        throw ConfigError("invalid Adam hyper-parameters");
    scale.apply(32);  // rejects scales that do not divide the filter counts
}

TrainState init_state(const TrainConfig& cfg) {
    TrainState st;
    st.g = Generator::build(derive_seed(cfg.seed, 1), cfg.scale);
    st.d = Discriminator::build(derive_seed(cfg.seed, 2), cfg.scale);
    st.adam_g = Adam(st.g.parameters(), cfg.adam);
    st.adam_d = Adam(st.d.parameters(), cfg.adam);
    return st;
}

PerceptualExtractor make_extractor(const TrainConfig& cfg) {
    if (!cfg.extractor_dir.empty()) return PerceptualExtractor::load(cfg.extractor_dir);
    return PerceptualExtractor::seeded(derive_seed(cfg.seed, 3));
}

LossWeights weights_for(const TrainConfig& cfg, long long step) {
    if (cfg.fixed_weights) return *cfg.fixed_weights;
    return schedule_weights(step, std::max(1LL, cfg.total_steps - 1));
}

// ================================================================ step

namespace {

void set_trainable(const NamedParams& params, bool on) {
    for (auto [name, p] : params) p.mutable_value().set_requires_grad(on);
}

void require_finite(double v, const char* what, long long step) {
    if (!std::isfinite(v))
        throw NumericError(std::string(what) + " became non-finite at step " + std::to_string(step));
}

}  // namespace

StepRecord train_step(TrainState& st, const Tensor& noisy, const Tensor& clean, const LossWeights& w,
                      const PerceptualExtractor& ext, int d_steps) {
    if (noisy.shape() != clean.shape()) throw DimensionError("noisy and clean batches differ in shape");
    StepRecord rec;
    rec.step = st.step;
    rec.weights = w;

    const Var real(clean);
    Tape g_tape;
    st.adam_g.zero_grad();
    const Var fake = st.g.forward(g_tape, Var(noisy));

    // Discriminator: real vs generated, no gradient into the generator.
    rec.d_loss = 0.0;
    for (int k = 0; k < d_steps; ++k) {
        Tape d_tape;
        st.adam_d.zero_grad();
        const Var loss = discriminator_loss(d_tape, st.d.forward(d_tape, real, BatchStatsMode::kTrain),
                                            st.d.forward(d_tape, fake.detach(), BatchStatsMode::kTrain));
        rec.d_loss = loss.data()[0];
        require_finite(rec.d_loss, "discriminator loss", st.step);
        d_tape.backward(loss);
        st.adam_d.step();
    }
    if (d_steps == 0) {
        Tape eval(false);
        rec.d_loss = discriminator_loss(eval, st.d.forward(eval, real, BatchStatsMode::kTrainFrozen),
                                        st.d.forward(eval, fake.detach(), BatchStatsMode::kTrainFrozen))
                         .data()[0];
    }

    // Generator: gradients flow through D's activations but D stays fixed.
    const NamedParams d_params = st.d.parameters();
    set_trainable(d_params, false);
    LossTerms terms;
    try {
        const Var scores = st.d.forward(g_tape, fake, BatchStatsMode::kTrainFrozen);
        terms = combined_loss(g_tape, fake, real, scores, w, ext);
    } catch (...) {
        set_trainable(d_params, true);
        throw;
    }
    set_trainable(d_params, true);
    rec.perceptual = terms.perceptual;
    rec.smooth_l1 = terms.smooth_l1;
    rec.adv_g = terms.adversarial;
    require_finite(terms.total.data()[0], "generator loss", st.step);
    g_tape.backward(terms.total);
    st.adam_g.step();
    st.adam_g.zero_grad();
    st.adam_d.zero_grad();
    ++st.step;
    return rec;
}

std::vector<std::size_t> batch_indices(std::uint64_t seed, long long step, std::size_t pairs, std::size_t batch) {
    if (batch == 0 || pairs < batch)
        throw ConfigError("need at least batch_size=" + std::to_string(batch) + " pairs, have " + std::to_string(pairs));
    const long long per_pass = static_cast<long long>(pairs / batch);
    const long long pass = step / per_pass;
    const std::size_t offset = static_cast<std::size_t>(step % per_pass) * batch;
    std::vector<std::size_t> order(pairs);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(derive_seed(derive_seed(seed, 4), static_cast<std::uint64_t>(pass)));
    std::shuffle(order.begin(), order.end(), rng);
    return {order.begin() + static_cast<std::ptrdiff_t>(offset),
            order.begin() + static_cast<std::ptrdiff_t>(offset + batch)};
}

// ================================================================ loop

std::string log_line(const StepRecord& r) {
    json j = {{"step", r.step},          {"k1", r.weights.k1},   {"k2", r.weights.k2},  {"k3", r.weights.k3},
              {"L_perc", r.perceptual},   {"L_sl1", r.smooth_l1}, {"L_adv_g", r.adv_g}, {"L_d", r.d_loss}};
    return j.dump();
}

StepRecord parse_log_line(const std::string& line) {
    try {
        const json j = json::parse(line);
        StepRecord r;
        r.step = j.at("step").get<long long>();
        r.weights = {j.at("k1").get<double>(), j.at("k2").get<double>(), j.at("k3").get<double>()};
        r.perceptual = j.at("L_perc").get<double>();
        r.smooth_l1 = j.at("L_sl1").get<double>();
        r.adv_g = j.at("L_adv_g").get<double>();
        r.d_loss = j.at("L_d").get<double>();
        return r;
    } catch (const json::exception& e) {
        throw IoError(std::string("bad training log line: ") + e.what());
    }
}

void train_loop(TrainState& st, const TrainConfig& cfg, const std::vector<PairSample>& data,
                const PerceptualExtractor& ext, const StepCallback& on_step) {
    cfg.validate();
    if (data.size() < cfg.batch_size)
        throw ConfigError("dataset has " + std::to_string(data.size()) + " pairs, fewer than batch_size " +
                          std::to_string(cfg.batch_size));
    if (st.step > cfg.total_steps) throw RangeError("checkpoint step is beyond total_steps");
    std::ofstream log;
    if (!cfg.out_dir.empty()) {
        std::filesystem::create_directories(cfg.out_dir);
        log.open(cfg.out_dir / "train_log.jsonl", st.step == 0 ? std::ios::trunc : std::ios::app);
        if (!log) throw IoError("cannot write " + (cfg.out_dir / "train_log.jsonl").string());
    }
    std::vector<const Image*> noisy(cfg.batch_size), clean(cfg.batch_size);
    while (st.step < cfg.total_steps) {
        const auto idx = batch_indices(cfg.seed, st.step, data.size(), cfg.batch_size);
        for (std::size_t i = 0; i < idx.size(); ++i) {
            noisy[i] = &data[idx[i]].noisy;
            clean[i] = &data[idx[i]].clean;
        }
        StepRecord rec;
        try {
            rec = train_step(st, stack_images(noisy), stack_images(clean), weights_for(cfg, st.step), ext,
                             cfg.d_steps_per_g_step);
        } catch (const NumericError& e) {
            if (cfg.out_dir.empty()) throw;
            const auto dump = cfg.out_dir / "last_good";
            save_checkpoint(st, dump);
            throw NumericError(std::string(e.what()) + "; state saved to " + dump.string());
        }
        if (log) log << log_line(rec) << "\n" << std::flush;
        if (on_step) on_step(rec, st);
        if (!cfg.out_dir.empty() && cfg.checkpoint_interval > 0 && st.step % cfg.checkpoint_interval == 0 &&
            st.step < cfg.total_steps) {
            std::ostringstream name;
            name << "step_" << st.step;
            save_checkpoint(st, cfg.out_dir / name.str());
        }
    }
}

TrainState train(const TrainConfig& cfg, const StepCallback& on_step) {
    cfg.validate();
    if (cfg.manifest.empty()) throw ConfigError("training needs a dataset manifest");
    const auto data = load_dataset(cfg.manifest);
    const auto ext = make_extractor(cfg);
    TrainState st = cfg.resume_from.empty() ? init_state(cfg) : load_checkpoint(cfg.resume_from, cfg.scale, cfg.adam);
    train_loop(st, cfg, data, ext, on_step);
    if (!cfg.out_dir.empty()) save_checkpoint(st, cfg.out_dir / "final");
    return st;
}

// ================================================================ checkpoints

namespace {

constexpr int kCheckpointVersion = 1;

void save_params(const std::filesystem::path& dir, const NamedParams& params) {
    std::filesystem::create_directories(dir);
    for (const auto& [name, p] : params) write_tns(dir / (name + ".tns"), p.value());
}

void load_into(const std::filesystem::path& file, Tensor& dst) {
    Tensor t = read_tns(file);
    if (t.shape() != dst.shape())
        throw DimensionError(file.string() + ": shape " + t.shape().str() + " does not match expected " + dst.shape().str());
    std::copy(t.data().begin(), t.data().end(), dst.data().begin());
}

void load_params(const std::filesystem::path& dir, NamedParams& params) {
    for (auto& [name, p] : params) load_into(dir / (name + ".tns"), p.mutable_value());
}

void save_adam(const std::filesystem::path& dir, const Adam& opt) {
    std::filesystem::create_directories(dir / "m");
    std::filesystem::create_directories(dir / "v");
    for (std::size_t k = 0; k < opt.params().size(); ++k) {
        write_tns(dir / "m" / (opt.params()[k].first + ".tns"), opt.m()[k]);
        write_tns(dir / "v" / (opt.params()[k].first + ".tns"), opt.v()[k]);
    }
}

void load_adam(const std::filesystem::path& dir, Adam& opt) {
    for (std::size_t k = 0; k < opt.params().size(); ++k) {
        load_into(dir / "m" / (opt.params()[k].first + ".tns"), opt.m()[k]);
        load_into(dir / "v" / (opt.params()[k].first + ".tns"), opt.v()[k]);
    }
}

}  // namespace

void save_checkpoint(const TrainState& st, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    save_params(dir / "generator", st.g.parameters());
    save_params(dir / "discriminator", st.d.parameters());
    json bn = json::array();
    const auto& stats = st.d.running_stats();
    for (std::size_t i = 0; i < stats.size(); ++i) {
        write_tns(dir / "discriminator" / ("bn" + std::to_string(i) + ".running_mean.tns"), stats[i].mean);
        write_tns(dir / "discriminator" / ("bn" + std::to_string(i) + ".running_var.tns"), stats[i].var);
        bn.push_back(stats[i].initialized);
    }
    save_adam(dir / "adam_g", st.adam_g);
    save_adam(dir / "adam_d", st.adam_d);
    const json manifest = {{"format", "pamdn-checkpoint"},
                           {"version", kCheckpointVersion},
                           {"scale", st.g.scale().str()},
                           {"generator_seed", st.g.seed()},
                           {"discriminator_seed", st.d.seed()},
                           {"step", st.step},
                           {"adam_g_t", st.adam_g.t()},
                           {"adam_d_t", st.adam_d.t()},
                           {"bn_initialized", bn}};
    std::ofstream out(dir / "manifest.json");
    if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
    out << manifest.dump(2) << "\n";
}

TrainState load_checkpoint(const std::filesystem::path& dir, std::optional<Scale> expected, AdamConfig adam) {
    const auto mpath = dir / "manifest.json";
    std::ifstream in(mpath);
    if (!in) throw IoError("cannot open " + mpath.string());
    json m;
    try {
        in >> m;
        if (m.at("format").get<std::string>() != "pamdn-checkpoint") throw IoError(mpath.string() + ": not a checkpoint manifest");
    } catch (const json::exception& e) {
        throw IoError(mpath.string() + ": " + e.what());
    }
    TrainState st;
    try {
        const Scale scale = Scale::parse(m.at("scale").get<std::string>());
        if (expected && !(*expected == scale))
            throw ConfigError("checkpoint " + dir.string() + " was trained at scale " + scale.str() +
                              ", configuration asks for " + expected->str());
        st.g = Generator::build(m.at("generator_seed").get<std::uint64_t>(), scale);
        st.d = Discriminator::build(m.at("discriminator_seed").get<std::uint64_t>(), scale);
        st.step = m.at("step").get<long long>();
        NamedParams gp = st.g.parameters(), dp = st.d.parameters();
        load_params(dir / "generator", gp);
        load_params(dir / "discriminator", dp);
        const auto& bn = m.at("bn_initialized");
        auto& stats = st.d.running_stats();
        if (bn.size() != stats.size()) throw IoError(mpath.string() + ": batch-norm layer count mismatch");
        for (std::size_t i = 0; i < stats.size(); ++i) {
            load_into(dir / "discriminator" / ("bn" + std::to_string(i) + ".running_mean.tns"), stats[i].mean);
            load_into(dir / "discriminator" / ("bn" + std::to_string(i) + ".running_var.tns"), stats[i].var);
            stats[i].initialized = bn[i].get<bool>();
        }
        st.adam_g = Adam(gp, adam);
        st.adam_d = Adam(dp, adam);
        load_adam(dir / "adam_g", st.adam_g);
        load_adam(dir / "adam_d", st.adam_d);
        st.adam_g.set_t(m.at("adam_g_t").get<long long>());
        st.adam_d.set_t(m.at("adam_d_t").get<long long>());
    } catch (const json::exception& e) {
        throw IoError(mpath.string() + ": " + e.what());
    }
    return st;
}

std::uint64_t state_fingerprint(const TrainState& st) {
    std::uint64_t h = fnv1a({});
    for (const auto& [name, p] : st.g.parameters()) h = fnv1a(p.data(), h);
    for (const auto& [name, p] : st.d.parameters()) h = fnv1a(p.data(), h);
    for (const auto& s : st.d.running_stats()) {
        h = fnv1a(s.mean.data(), h);
        h = fnv1a(s.var.data(), h);
    }
    return h;
}

}  // namespace pamdn
