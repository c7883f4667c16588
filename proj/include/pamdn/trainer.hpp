#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "pamdn/losses.hpp"
#include "pamdn/model.hpp"
#include "pamdn/noise.hpp"

namespace pamdn {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Bias-corrected Adam over a fixed parameter list. Moments are kept in
/// the same order as the parameters it was built with.
class Adam {
public:
    Adam() = default;
    Adam(NamedParams params, AdamConfig cfg);

    // Applies one update from the parameters' current gradients. Throws
    // NumericError (before touching anything) if any gradient is non-finite.
    // A parameter whose gradient is identically zero is skipped entirely.
    void step();
    void zero_grad();

    const NamedParams& params() const { return params_; }
    const AdamConfig& config() const { return cfg_; }
    long long t() const { return t_; }
    void set_t(long long t) { t_ = t; }
    std::vector<Tensor>& m() { return m_; }
    std::vector<Tensor>& v() { return v_; }
    const std::vector<Tensor>& m() const { return m_; }
    const std::vector<Tensor>& v() const { return v_; }

private:
    NamedParams params_;
    AdamConfig cfg_;
    std::vector<Tensor> m_, v_;
    long long t_ = 0;
};

struct TrainConfig {
    AdamConfig adam;
    std::size_t batch_size = 8;
    long long total_steps = 2000;
    std::uint64_t seed = 0;
    Scale scale{1, 8};
    std::filesystem::path manifest;     // dataset manifest (used by train())
    std::filesystem::path out_dir;      // checkpoints and log; empty = keep in memory
    long long checkpoint_interval = 0;  // 0 = only the final checkpoint
    int d_steps_per_g_step = 1;
    // Overrides the schedule at every step when set.
    std::optional<LossWeights> fixed_weights;
    // Extractor weights directory; empty = seeded from the run seed.
    std::filesystem::path extractor_dir;
    std::filesystem::path resume_from;  // checkpoint directory to continue from

    // Throws ConfigError for invalid combinations.
    void validate() const;
};

struct TrainState {
    Generator g;
    Discriminator d;
    Adam adam_g;
    Adam adam_d;
    long long step = 0;  // number of completed iterations
};

struct StepRecord {
    long long step = 0;
    LossWeights weights;
    double perceptual = 0, smooth_l1 = 0, adv_g = 0, d_loss = 0;
};

// Fresh models and optimizers from the run seed.
TrainState init_state(const TrainConfig& cfg);

PerceptualExtractor make_extractor(const TrainConfig& cfg);

// Weights for iteration `step` (0-based) of a `total`-iteration run; the
// first and last iterations hit the schedule endpoints.
LossWeights weights_for(const TrainConfig& cfg, long long step);

// One iteration: d_steps_per_g_step discriminator updates on real vs
// detached generated images, then one generator update through the
// discriminator (batch statistics only, its parameters untouched).
// Throws NumericError on a non-finite loss before any update it guards.
StepRecord train_step(TrainState& st, const Tensor& noisy, const Tensor& clean, const LossWeights& w,
                      const PerceptualExtractor& ext, int d_steps);

// Indices of the pairs in batch `step`: one seeded shuffle per pass over
// the data, so any step can be reconstructed from (seed, step) alone.
std::vector<std::size_t> batch_indices(std::uint64_t seed, long long step, std::size_t pairs, std::size_t batch);

using StepCallback = std::function<void(const StepRecord&, const TrainState&)>;

// Runs from st.step up to cfg.total_steps on `data`. Appends one JSON line
// per step to out_dir/train_log.jsonl and checkpoints into out_dir when set.
void train_loop(TrainState& st, const TrainConfig& cfg, const std::vector<PairSample>& data,
                const PerceptualExtractor& ext, const StepCallback& on_step = {});

// Loads the manifest (errors surface before step 0), builds or resumes the
// state, trains, and writes the final checkpoint to out_dir/final.
TrainState train(const TrainConfig& cfg, const StepCallback& on_step = {});

// Directory of .tns tensors plus manifest.json (scale, seed, step, Adam
// counters, batch-norm flags).
void save_checkpoint(const TrainState& st, const std::filesystem::path& dir);
// Throws ConfigError if `expected` is given and differs from the stored
// scale; IoError / DimensionError (naming the file) on damaged contents.
TrainState load_checkpoint(const std::filesystem::path& dir, std::optional<Scale> expected = std::nullopt,
                           AdamConfig adam = {});

std::string log_line(const StepRecord& r);
StepRecord parse_log_line(const std::string& line);

// Hash over every parameter of both models.
std::uint64_t state_fingerprint(const TrainState& st);

}  // namespace pamdn
