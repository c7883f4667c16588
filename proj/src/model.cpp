#include "pamdn/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "pamdn/error.hpp"

namespace pamdn {
namespace {

// He-style fan-in scaling for leaky-ReLU networks, drawn uniformly.
class Initializer {
public:
    explicit Initializer(std::uint64_t seed) : rng_(seed) {}

    Var uniform(Shape shape, std::size_t fan_in) {
        const double gain = std::sqrt(2.0 / (1.0 + ops::kLeakySlope * ops::kLeakySlope));
        const double bound = gain * std::sqrt(3.0 / static_cast<double>(fan_in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        Tensor t(shape);
        for (double& v : t.data()) v = dist(rng_);
        return Var::parameter(std::move(t));
    }

    Conv conv(int in, int out, int k, int stride, int padding) {
        Conv c;
        c.weight = uniform(Shape{std::size_t(out), std::size_t(in), std::size_t(k), std::size_t(k)},
                           std::size_t(in) * k * k);
        c.bias = Var::parameter(Tensor(Shape{std::size_t(out)}, 0.0));
        c.stride = stride;
        c.padding = padding;
        return c;
    }

    // Kernel == stride, so every output position sees exactly `in` terms.
    Conv up(int in, int out, int k) {
        Conv c;
        c.weight = uniform(Shape{std::size_t(in), std::size_t(out), std::size_t(k), std::size_t(k)}, std::size_t(in));
        c.bias = Var::parameter(Tensor(Shape{std::size_t(out)}, 0.0));
        c.stride = k;
        return c;
    }

    Dense dense(int in, int out) {
        Dense d;
        d.weight = uniform(Shape{std::size_t(out), std::size_t(in)}, std::size_t(in));
        d.bias = Var::parameter(Tensor(Shape{std::size_t(out)}, 0.0));
        return d;
    }

    static Affine affine(std::size_t n) {
        return {Var::parameter(Tensor(Shape{n}, 1.0)), Var::parameter(Tensor(Shape{n}, 0.0))};
    }

    StandardUnitBlock unit(int in, int filters) {
        StandardUnitBlock b;
        b.conv1 = conv(in, filters, 3, 1, 1);
        b.norm1 = affine(filters);
        b.conv2 = conv(filters, filters, 3, 1, 1);
        b.norm2 = affine(filters);
        b.filters = filters;
        return b;
    }

    GCBlock gc(int channels, int ratio) {
        if (ratio < 1 || channels % ratio != 0) {
            throw ConfigError("GC block: channel count " + std::to_string(channels) +
                              " is not divisible by bottleneck ratio " + std::to_string(ratio));
        }
        const int reduced = channels / ratio;
        GCBlock g;
        g.context = conv(channels, 1, 1, 1, 0);
        g.reduce = conv(channels, reduced, 1, 1, 0);
        g.norm = affine(reduced);
        g.expand = conv(reduced, channels, 1, 1, 0);
        g.channels = channels;
        g.ratio = ratio;
        return g;
    }

private:
    std::mt19937_64 rng_;
};

void add(NamedParams& out, const std::string& name, const Var& v) { out.emplace_back(name, v); }

void add_conv(NamedParams& out, const std::string& prefix, const Conv& c) {
    add(out, prefix + ".weight", c.weight);
    add(out, prefix + ".bias", c.bias);
}

void add_affine(NamedParams& out, const std::string& prefix, const Affine& a) {
    add(out, prefix + ".gamma", a.gamma);
    add(out, prefix + ".beta", a.beta);
}

// Bottleneck ratio that keeps at least two reduced channels at small scales.
int gc_ratio_for(int channels) { return std::max(1, std::min(kGcRatio, channels / 2)); }

}  // namespace

Scale Scale::parse(const std::string& text) {
    Scale s;
    try {
        const auto slash = text.find('/');
        std::size_t used = 0;
        if (slash == std::string::npos) {
            s.num = std::stoi(text, &used);
            if (used != text.size()) throw ConfigError("");
        } else {
            s.num = std::stoi(text.substr(0, slash), &used);
            if (used != slash) throw ConfigError("");
            const std::string d = text.substr(slash + 1);
            s.den = std::stoi(d, &used);
            if (used != d.size()) throw ConfigError("");
        }
    } catch (const std::exception&) {
        throw ConfigError("invalid scale '" + text + "', expected a ratio such as 1/8");
    }
    if (s.num <= 0 || s.den <= 0) throw ConfigError("scale must be positive, got '" + text + "'");
    return s;
}

int Scale::apply(int filters) const {
    const long scaled = static_cast<long>(filters) * num;
    if (scaled % den != 0 || scaled / den < 1) {
        throw ConfigError("scale " + str() + " turns " + std::to_string(filters) +
                          " filters into a non-integer channel count");
    }
    return static_cast<int>(scaled / den);
}

std::string Scale::str() const { return den == 1 ? std::to_string(num) : std::to_string(num) + "/" + std::to_string(den); }

Var StandardUnitBlock::forward(Tape& tape, const Var& x) const {
    Var y = conv1.forward(tape, x);
    y = ops::leaky_relu(tape, ops::instance_norm(tape, y, norm1.gamma, norm1.beta), alpha);
    y = conv2.forward(tape, y);
    return ops::leaky_relu(tape, ops::instance_norm(tape, y, norm2.gamma, norm2.beta), alpha);
}

void StandardUnitBlock::collect(const std::string& prefix, NamedParams& out) const {
    add_conv(out, prefix + ".conv1", conv1);
    add_affine(out, prefix + ".norm1", norm1);
    add_conv(out, prefix + ".conv2", conv2);
    add_affine(out, prefix + ".norm2", norm2);
}

GCBlock GCBlock::build(int channels, int ratio, std::uint64_t seed) {
    Initializer init(seed);
    return init.gc(channels, ratio);
}

Var GCBlock::attention(Tape& tape, const Var& x) const {
    if (x.shape().rank() != 4 || x.shape()[1] != static_cast<std::size_t>(channels)) {
        throw DimensionError("GC block expects " + std::to_string(channels) + " channels, got " + x.shape().str());
    }
    return ops::spatial_softmax(tape, context.forward(tape, x));
}

Var GCBlock::context_vector(Tape& tape, const Var& x) const { return ops::weighted_pool(tape, x, attention(tape, x)); }

Var GCBlock::forward(Tape& tape, const Var& x) const {
    Var t = reduce.forward(tape, context_vector(tape, x));
    t = ops::relu(tape, ops::layer_norm(tape, t, norm.gamma, norm.beta));
    return ops::add_broadcast(tape, x, expand.forward(tape, t));
}

void GCBlock::collect(const std::string& prefix, NamedParams& out) const {
    add_conv(out, prefix + ".context", context);
    add_conv(out, prefix + ".reduce", reduce);
    add_affine(out, prefix + ".norm", norm);
    add_conv(out, prefix + ".expand", expand);
}

Generator Generator::build(std::uint64_t seed, Scale scale) {
    Generator g;
    g.scale_ = scale;
    g.seed_ = seed;
    int filters[5];
    for (int i = 0; i < 5; ++i) filters[i] = scale.apply(kBaseFilters[i]);

    Initializer init(seed);
    int in = 1;
    for (int i = 0; i < 5; ++i) {
        g.encoder_.push_back(init.unit(in, filters[i]));
        g.gc_.push_back(init.gc(filters[i], gc_ratio_for(filters[i])));
        in = filters[i];
    }
    for (int i = 3; i >= 0; --i) {
        g.up_.push_back(init.up(filters[i + 1], filters[i], 2));
        g.decoder_.push_back(init.unit(2 * filters[i], filters[i]));
    }
    g.head_ = init.conv(filters[0], 1, 1, 1, 0);
    return g;
}

Var Generator::forward(Tape& tape, const Var& noisy) const {
    const Shape& s = noisy.shape();
    if (s.rank() != 4 || s[1] != 1) {
        throw DimensionError("generator expects a (N, 1, H, W) batch, got " + s.str());
    }
    if (s[2] % 16 != 0 || s[3] % 16 != 0) {
        throw DimensionError("generator input H and W must be divisible by 16, got " + s.str());
    }
    std::vector<Var> skips;
    Var x = noisy;
    for (std::size_t i = 0; i < encoder_.size(); ++i) {
        if (i > 0) x = ops::maxpool2d(tape, x);
        x = gc_[i].forward(tape, encoder_[i].forward(tape, x));
        skips.push_back(x);
    }
    for (std::size_t i = 0; i < decoder_.size(); ++i) {
        const Var& skip = skips[skips.size() - 2 - i];
        x = ops::conv2d_transpose(tape, x, up_[i].weight, up_[i].bias, up_[i].stride);
        x = decoder_[i].forward(tape, ops::concat_channels(tape, x, skip));
    }
    return ops::sigmoid(tape, head_.forward(tape, x));
}

GeneratorInventory Generator::inventory() const {
    GeneratorInventory inv;
    for (const auto& b : encoder_) inv.unit_block_filters.push_back(b.filters);
    for (const auto& b : decoder_) inv.unit_block_filters.push_back(b.filters);
    inv.gc_blocks = static_cast<int>(gc_.size());
    for (std::size_t i = 0; i < gc_.size(); ++i) inv.gc_after_block.push_back(static_cast<int>(i));
    inv.maxpools = static_cast<int>(encoder_.size()) - 1;
    inv.transposed_convs = static_cast<int>(up_.size());
    return inv;
}

NamedParams Generator::parameters() const {
    NamedParams out;
    for (std::size_t i = 0; i < encoder_.size(); ++i) {
        encoder_[i].collect("enc" + std::to_string(i), out);
        gc_[i].collect("gc" + std::to_string(i), out);
    }
    for (std::size_t i = 0; i < decoder_.size(); ++i) {
        add_conv(out, "up" + std::to_string(i), up_[i]);
        decoder_[i].collect("dec" + std::to_string(i), out);
    }
    add_conv(out, "head", head_);
    return out;
}

Discriminator Discriminator::build(std::uint64_t seed, Scale scale) {
    Discriminator d;
    d.scale_ = scale;
    d.seed_ = seed;
    Initializer init(seed);
    int in = 1;
    for (int i = 0; i < 8; ++i) {
        const int f = scale.apply(kBaseFilters[i]);
        d.convs_.push_back(init.conv(in, f, 3, kStrides[i], 1));
        d.norms_.push_back(Initializer::affine(f));
        d.stats_.emplace_back(f);
        in = f;
    }
    d.fc1_ = init.dense(in, kHiddenUnits);
    d.fc2_ = init.dense(kHiddenUnits, 1);
    return d;
}

Var Discriminator::forward(Tape& tape, const Var& image, BatchStatsMode mode) const {
    const Shape& s = image.shape();
    if (s.rank() != 4 || s[1] != 1) {
        throw DimensionError("discriminator expects a (N, 1, H, W) batch, got " + s.str());
    }
    if (s[2] % 16 != 0 || s[3] % 16 != 0) {
        throw DimensionError("discriminator input H and W must be divisible by 16, got " + s.str());
    }
    const bool training = mode != BatchStatsMode::kInference;
    if (training && s[0] < 2) {
        throw StateError("discriminator training needs a batch of at least 2 for batch statistics, got " +
                         std::to_string(s[0]));
    }
    Var x = image;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
        x = ops::leaky_relu(tape, convs_[i].forward(tape, x));
        ops::RunningStats* stats = mode == BatchStatsMode::kTrainFrozen ? nullptr : &stats_[i];
        x = ops::batch_norm(tape, x, norms_[i].gamma, norms_[i].beta, stats, kMomentum, ops::kNormEpsilon, training);
    }
    x = ops::global_avg_pool(tape, x);
    x = ops::leaky_relu(tape, fc1_.forward(tape, x));
    return ops::sigmoid(tape, fc2_.forward(tape, x));
}

DiscriminatorInventory Discriminator::inventory() const {
    DiscriminatorInventory inv;
    for (const auto& c : convs_) {
        inv.conv_filters.push_back(static_cast<int>(c.weight.shape()[0]));
        inv.conv_strides.push_back(c.stride);
    }
    inv.fc_outputs = {static_cast<int>(fc1_.weight.shape()[0]), static_cast<int>(fc2_.weight.shape()[0])};
    return inv;
}

NamedParams Discriminator::parameters() const {
    NamedParams out;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
        add_conv(out, "conv" + std::to_string(i), convs_[i]);
        add_affine(out, "bn" + std::to_string(i), norms_[i]);
    }
    add(out, "fc1.weight", fc1_.weight);
    add(out, "fc1.bias", fc1_.bias);
    add(out, "fc2.weight", fc2_.weight);
    add(out, "fc2.bias", fc2_.bias);
    return out;
}

void zero_parameters(const NamedParams& params) {
    for (const auto& [name, v] : params) {
        Var p = v;
        auto d = p.mutable_value().data();
        std::fill(d.begin(), d.end(), 0.0);
    }
}

}  // namespace pamdn
