#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pamdn/autograd.hpp"

namespace pamdn {

struct LossWeights {
    double k1 = 0.0;  // perceptual
    double k2 = 1.0;  // smooth-L1
    double k3 = 0.0;  // adversarial

    friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

// Linear ramp: k1 = t, k2 = 1 - t, k3 = 1e-3 * t with t = step / total.
// Throws RangeError when total <= 0, step < 0 or step > total.
LossWeights schedule_weights(long long step, long long total);

inline constexpr double kAdvWeightMax = 1e-3;
inline constexpr double kScoreClamp = 1e-7;

struct ExtractorStage {
    int out_channels = 8;
    int kernel = 3;
    bool pool = false;
};

/// Frozen conv + ReLU (+ optional 2x max-pool) stack used as a feature space
/// for the perceptual loss. Weights never require gradients, so backward
/// passes only flow through to the input.
class PerceptualExtractor {
public:
    static std::vector<ExtractorStage> default_stages();

    // He-uniform weights from `seed`, zero biases.
    static PerceptualExtractor seeded(std::uint64_t seed, std::vector<ExtractorStage> stages = default_stages());
    // Explicit weights: weights[i] is (out, in, k, k), biases[i] is (out).
    static PerceptualExtractor from_weights(std::vector<Tensor> weights, std::vector<Tensor> biases, std::vector<bool> pool);

    // Directory with extractor.json (stage list with pool flags) plus
    // stage{i}.weight.tns / stage{i}.bias.tns.
    void save(const std::filesystem::path& dir) const;
    static PerceptualExtractor load(const std::filesystem::path& dir);

    Var features(Tape& tape, const Var& x) const;

    std::size_t stage_count() const { return weights_.size(); }
    // Hash of every weight and bias; stays constant over training.
    std::uint64_t fingerprint() const;
    // Short human-readable summary, e.g. "seeded(7): 3x3->8 | 3x3->8,pool | 3x3->16,pool".
    std::string describe() const;

private:
    std::vector<Var> weights_;
    std::vector<Var> biases_;
    std::vector<bool> pool_;
    std::string origin_;
};

// Mean over every feature element (batch included) of the squared difference.
Var perceptual_loss(Tape& tape, const Var& denoised, const Var& clean, const PerceptualExtractor& ext);

// Mean over every pixel of the smooth-L1 penalty with unit threshold.
Var smooth_l1_loss(Tape& tape, const Var& denoised, const Var& clean);

// Sum over the batch of -log(clamp(score)).
Var generator_adv_loss(Tape& tape, const Var& d_scores);

// -sum log(clamp(real)) - sum log(1 - clamp(fake)).
Var discriminator_loss(Tape& tape, const Var& real_scores, const Var& fake_scores);

struct LossTerms {
    Var total;
    double perceptual = 0.0;
    double smooth_l1 = 0.0;
    double adversarial = 0.0;
};

// k1 * perceptual + k2 * smooth_l1 + k3 * adversarial.
LossTerms combined_loss(Tape& tape, const Var& denoised, const Var& clean, const Var& d_scores, const LossWeights& w,
                        const PerceptualExtractor& ext);

}  // namespace pamdn
