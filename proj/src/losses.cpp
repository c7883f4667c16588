#include "pamdn/losses.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "json.hpp"
#include "pamdn/error.hpp"
#include "pamdn/hash.hpp"
#include "pamdn/ops.hpp"
#include "pamdn/tns.hpp"

namespace pamdn {

LossWeights schedule_weights(long long step, long long total) {
    if (total <= 0) throw RangeError("total_steps must be positive, got " + std::to_string(total));
    if (step < 0 || step > total)
        throw RangeError("step " + std::to_string(step) + " outside [0, " + std::to_string(total) + "]");
    const double t = static_cast<double>(step) / static_cast<double>(total);
    return {t, 1.0 - t, kAdvWeightMax * t};
}

// ---------------------------------------------------------------- extractor

std::vector<ExtractorStage> PerceptualExtractor::default_stages() { return {{8, 3, false}, {8, 3, true}, {16, 3, true}}; }

PerceptualExtractor PerceptualExtractor::seeded(std::uint64_t seed, std::vector<ExtractorStage> stages) {
    if (stages.empty()) throw ConfigError("perceptual extractor needs at least one stage");
    std::mt19937_64 rng(seed);
    std::vector<Tensor> w, b;
    std::vector<bool> pool;
    std::size_t in = 1;
    for (const auto& s : stages) {
        if (s.out_channels <= 0 || s.kernel <= 0 || s.kernel % 2 == 0)
            throw ConfigError("extractor stages need positive channels and an odd kernel");
        const std::size_t out = static_cast<std::size_t>(s.out_channels), k = static_cast<std::size_t>(s.kernel);
        const double bound = std::sqrt(6.0 / static_cast<double>(in * k * k));
        std::uniform_real_distribution<double> u(-bound, bound);
        Tensor wt(Shape{out, in, k, k});
        for (double& v : wt.data()) v = u(rng);
        w.push_back(std::move(wt));
        b.emplace_back(Shape{out}, 0.0);
        pool.push_back(s.pool);
        in = out;
    }
    auto ext = from_weights(std::move(w), std::move(b), std::move(pool));
    ext.origin_ = "seeded(" + std::to_string(seed) + ")";
    return ext;
}

PerceptualExtractor PerceptualExtractor::from_weights(std::vector<Tensor> weights, std::vector<Tensor> biases,
                                                      std::vector<bool> pool) {
    if (weights.empty() || weights.size() != biases.size() || weights.size() != pool.size())
        throw ConfigError("extractor weights, biases and pool flags must have equal nonzero counts");
    PerceptualExtractor ext;
    std::size_t in = 1;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        const Shape& ws = weights[i].shape();
        if (ws.rank() != 4 || ws[1] != in || ws[2] != ws[3] || ws[2] % 2 == 0)
            throw DimensionError("extractor stage " + std::to_string(i) + " weight has shape " + ws.str() +
                                 ", expected (out, " + std::to_string(in) + ", k, k) with odd k");
        if (biases[i].shape() != Shape{ws[0]})
            throw DimensionError("extractor stage " + std::to_string(i) + " bias has shape " + biases[i].shape().str());
        ext.weights_.push_back(Var::constant(std::move(weights[i])));
        ext.biases_.push_back(Var::constant(std::move(biases[i])));
        in = ws[0];
    }
    ext.pool_ = std::move(pool);
    ext.origin_ = "external";
    return ext;
}

void PerceptualExtractor::save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    nlohmann::json stages = nlohmann::json::array();
    for (std::size_t i = 0; i < weights_.size(); ++i) {
        const std::string stem = "stage" + std::to_string(i);
        write_tns(dir / (stem + ".weight.tns"), weights_[i].value());
        write_tns(dir / (stem + ".bias.tns"), biases_[i].value());
        stages.push_back({{"weight", stem + ".weight.tns"}, {"bias", stem + ".bias.tns"}, {"pool", bool(pool_[i])}});
    }
    std::ofstream out(dir / "extractor.json");
    if (!out) throw IoError("cannot write " + (dir / "extractor.json").string());
    out << nlohmann::json{{"stages", stages}}.dump(2) << "\n";
}

PerceptualExtractor PerceptualExtractor::load(const std::filesystem::path& dir) {
    const auto index = dir / "extractor.json";
    std::ifstream in(index);
    if (!in) throw IoError("cannot open " + index.string());
    std::vector<Tensor> w, b;
    std::vector<bool> pool;
    try {
        nlohmann::json j;
        in >> j;
        for (const auto& s : j.at("stages")) {
            w.push_back(read_tns(dir / s.at("weight").get<std::string>()));
            b.push_back(read_tns(dir / s.at("bias").get<std::string>()));
            pool.push_back(s.at("pool").get<bool>());
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError(index.string() + ": " + e.what());
    }
    auto ext = from_weights(std::move(w), std::move(b), std::move(pool));
    ext.origin_ = "loaded(" + dir.string() + ")";
    return ext;
}

Var PerceptualExtractor::features(Tape& tape, const Var& x) const {
    if (x.shape().rank() != 4 || x.shape()[1] != 1)
        throw DimensionError("extractor expects (N,1,H,W) input, got " + x.shape().str());
    Var h = x;
    for (std::size_t i = 0; i < weights_.size(); ++i) {
        const int pad = static_cast<int>(weights_[i].shape()[2] / 2);
        h = ops::relu(tape, ops::conv2d(tape, h, weights_[i], biases_[i], 1, pad));
        if (pool_[i]) h = ops::maxpool2d(tape, h);
    }
    return h;
}

std::uint64_t PerceptualExtractor::fingerprint() const {
    std::uint64_t h = fnv1a({});
    for (std::size_t i = 0; i < weights_.size(); ++i) {
        h = fnv1a(weights_[i].data(), h);
        h = fnv1a(biases_[i].data(), h);
    }
    return h;
}

std::string PerceptualExtractor::describe() const {
    std::ostringstream s;
    s << origin_ << ":";
    for (std::size_t i = 0; i < weights_.size(); ++i) {
        const Shape& ws = weights_[i].shape();
        s << (i ? " |" : "") << " " << ws[2] << "x" << ws[3] << "->" << ws[0] << (pool_[i] ? ",pool" : "");
    }
    return s.str();
}

// ---------------------------------------------------------------- losses

namespace {

void require_same_shape(const Var& a, const Var& b, const char* what) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(what) + ": shapes differ, " + a.shape().str() + " vs " + b.shape().str());
}

void require_scores(const Var& s, const char* what) {
    if (s.shape().rank() != 2 || s.shape()[1] != 1)
        throw DimensionError(std::string(what) + ": expected (N,1) scores, got " + s.shape().str());
}

Var neg_log_clamped(Tape& tape, const Var& p) {
    return ops::affine(tape, ops::log(tape, ops::clamp(tape, p, kScoreClamp, 1.0 - kScoreClamp)), -1.0, 0.0);
}

}  // namespace

Var perceptual_loss(Tape& tape, const Var& denoised, const Var& clean, const PerceptualExtractor& ext) {
    require_same_shape(denoised, clean, "perceptual_loss");
    const Var fa = ext.features(tape, denoised);
    const Var fb = ext.features(tape, clean);
    return ops::mean(tape, ops::square(tape, ops::sub(tape, fa, fb)));
}

Var smooth_l1_loss(Tape& tape, const Var& denoised, const Var& clean) {
    require_same_shape(denoised, clean, "smooth_l1_loss");
    return ops::mean(tape, ops::smooth_l1(tape, ops::sub(tape, denoised, clean)));
}

Var generator_adv_loss(Tape& tape, const Var& d_scores) {
    require_scores(d_scores, "generator_adv_loss");
    return ops::sum(tape, neg_log_clamped(tape, d_scores));
}

Var discriminator_loss(Tape& tape, const Var& real_scores, const Var& fake_scores) {
    require_scores(real_scores, "discriminator_loss");
    require_scores(fake_scores, "discriminator_loss");
    const Var real_term = ops::sum(tape, neg_log_clamped(tape, real_scores));
    // 1 - fake, clamped after the flip so both tails get the same guard.
    const Var fake_term = ops::sum(tape, neg_log_clamped(tape, ops::affine(tape, fake_scores, -1.0, 1.0)));
    return ops::add(tape, real_term, fake_term);
}

LossTerms combined_loss(Tape& tape, const Var& denoised, const Var& clean, const Var& d_scores, const LossWeights& w,
                        const PerceptualExtractor& ext) {
    LossTerms out;
    const Var perc = perceptual_loss(tape, denoised, clean, ext);
    const Var sl1 = smooth_l1_loss(tape, denoised, clean);
    const Var adv = generator_adv_loss(tape, d_scores);
    out.perceptual = perc.data()[0];
    out.smooth_l1 = sl1.data()[0];
    out.adversarial = adv.data()[0];
    out.total = ops::add(tape,
                         ops::add(tape, ops::affine(tape, perc, w.k1, 0.0), ops::affine(tape, sl1, w.k2, 0.0)),
                         ops::affine(tape, adv, w.k3, 0.0));
    return out;
}

}  // namespace pamdn
