#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "pamdn/autograd.hpp"
#include "pamdn/ops.hpp"

namespace pamdn {

/// Channel multiplier applied to every filter count, e.g. "1/8".
struct Scale {
    int num = 1;
    int den = 1;

    static Scale parse(const std::string& text);
    // Scaled filter count; throws ConfigError when it is not a positive integer.
    int apply(int filters) const;
    double value() const { return static_cast<double>(num) / den; }
    std::string str() const;

    friend bool operator==(const Scale&, const Scale&) = default;
};

using NamedParams = std::vector<std::pair<std::string, Var>>;

struct Conv {
    Var weight;
    Var bias;
    int stride = 1;
    int padding = 0;

    Var forward(Tape& tape, const Var& x) const { return ops::conv2d(tape, x, weight, bias, stride, padding); }
};

struct Dense {
    Var weight;
    Var bias;

    Var forward(Tape& tape, const Var& x) const { return ops::linear(tape, x, weight, bias); }
};

struct Affine {
    Var gamma;
    Var beta;
};

/// Two 3x3 same-padding convolutions, each followed by instance
/// normalization and a leaky ReLU.
struct StandardUnitBlock {
    Conv conv1, conv2;
    Affine norm1, norm2;
    double alpha = ops::kLeakySlope;
    int filters = 0;

    Var forward(Tape& tape, const Var& x) const;
    void collect(const std::string& prefix, NamedParams& out) const;
};

/// Global-context attention: softmax spatial pooling into one context vector
/// per sample, a 1x1 bottleneck transform with layer normalization, and a
/// broadcast add back onto every position.
struct GCBlock {
    Conv context;  // C -> 1 attention logits
    Conv reduce;   // C -> C / ratio
    Affine norm;   // layer norm over the reduced vector
    Conv expand;   // C / ratio -> C
    int channels = 0;
    int ratio = 1;

    // Throws ConfigError unless `channels` is divisible by `ratio`.
    static GCBlock build(int channels, int ratio, std::uint64_t seed);

    Var attention(Tape& tape, const Var& x) const;
    Var context_vector(Tape& tape, const Var& x) const;
    Var forward(Tape& tape, const Var& x) const;
    void collect(const std::string& prefix, NamedParams& out) const;
};

inline constexpr int kGcRatio = 8;

struct GeneratorInventory {
    std::vector<int> unit_block_filters;
    int gc_blocks = 0;
    // Index of the unit block each GC block follows.
    std::vector<int> gc_after_block;
    int maxpools = 0;
    int transposed_convs = 0;
};

/// U-Net shaped de-noiser: five encoder unit blocks each followed by a GC
/// block, 2x max-pooling between encoder stages, four decoder stages of
/// (2x transposed convolution, skip concatenation, unit block), and a 1x1
/// head with a sigmoid onto [0, 1].
class Generator {
public:
    static constexpr int kBaseFilters[5] = {32, 64, 128, 256, 512};

    static Generator build(std::uint64_t seed, Scale scale);

    Var forward(Tape& tape, const Var& noisy) const;

    GeneratorInventory inventory() const;
    NamedParams parameters() const;

    Scale scale() const { return scale_; }
    std::uint64_t seed() const { return seed_; }

    std::vector<StandardUnitBlock>& encoder() { return encoder_; }
    std::vector<GCBlock>& gc_blocks() { return gc_; }
    Conv& head() { return head_; }

private:
    Scale scale_;
    std::uint64_t seed_ = 0;
    std::vector<StandardUnitBlock> encoder_;
    std::vector<GCBlock> gc_;
    std::vector<Conv> up_;
    std::vector<StandardUnitBlock> decoder_;
    Conv head_;
};

struct DiscriminatorInventory {
    std::vector<int> conv_filters;
    std::vector<int> conv_strides;
    std::vector<int> fc_outputs;
};

enum class BatchStatsMode {
    kTrain,        // batch statistics, folded into the running averages
    kTrainFrozen,  // batch statistics, running averages untouched
    kInference,    // running averages
};

/// Eight 3x3 conv layers (LReLU then batch norm after each), global average
/// pooling, FC(1024), LReLU, FC(1), sigmoid.
class Discriminator {
public:
    static constexpr int kBaseFilters[8] = {64, 64, 128, 128, 256, 256, 512, 512};
    static constexpr int kStrides[8] = {1, 2, 1, 2, 1, 2, 1, 2};
    static constexpr int kHiddenUnits = 1024;
    static constexpr double kMomentum = 0.1;

    static Discriminator build(std::uint64_t seed, Scale scale);

    Var forward(Tape& tape, const Var& image, BatchStatsMode mode) const;
    Var forward(Tape& tape, const Var& image, bool training) const {
        return forward(tape, image, training ? BatchStatsMode::kTrain : BatchStatsMode::kInference);
    }

    DiscriminatorInventory inventory() const;
    NamedParams parameters() const;
    std::vector<ops::RunningStats>& running_stats() { return stats_; }
    const std::vector<ops::RunningStats>& running_stats() const { return stats_; }

    Scale scale() const { return scale_; }
    std::uint64_t seed() const { return seed_; }

    Dense& fc_head() { return fc2_; }

private:
    Scale scale_;
    std::uint64_t seed_ = 0;
    std::vector<Conv> convs_;
    std::vector<Affine> norms_;
    // Mutable: running statistics change during forward passes in training mode.
    mutable std::vector<ops::RunningStats> stats_;
    Dense fc1_, fc2_;
};

void zero_parameters(const NamedParams& params);

}  // namespace pamdn
