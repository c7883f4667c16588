#pragma once

#include "pamdn/autograd.hpp"

// Differentiable operations over NCHW tensors. Every function records its
// backward rule on the given tape when the tape is recording and at least one
// input requires a gradient.
namespace pamdn::ops {

inline constexpr double kNormEpsilon = 1e-5;
inline constexpr double kLeakySlope = 0.2;

// Cross-correlation. w: (out_c, in_c, kh, kw), b: (out_c).
Var conv2d(Tape& tape, const Var& x, const Var& w, const Var& b, int stride, int padding);

// Non-overlapping transposed convolution (kernel == stride).
// w: (in_c, out_c, k, k), b: (out_c). Output extent is input extent * stride.
Var conv2d_transpose(Tape& tape, const Var& x, const Var& w, const Var& b, int stride);

// 2x2 window, stride 2. Ties resolve to the first element in row-major order.
Var maxpool2d(Tape& tape, const Var& x);

// Normalizes each (sample, channel) plane. gamma, beta: (C).
Var instance_norm(Tape& tape, const Var& x, const Var& gamma, const Var& beta,
                  double epsilon = kNormEpsilon);

struct RunningStats {
    Tensor mean;
    Tensor var;
    bool initialized = false;

    explicit RunningStats(std::size_t channels = 0);
};

// Per-channel normalization over (N, H, W). In training mode the batch
// statistics are used and, when `stats` is non-null, folded into it as
// stats = (1 - momentum) * stats + momentum * batch. Inference mode reads
// `stats`, which must have been populated.
Var batch_norm(Tape& tape, const Var& x, const Var& gamma, const Var& beta, RunningStats* stats,
               double momentum, double epsilon, bool training);

// Normalizes each sample over all non-batch axes. gamma and beta hold one
// entry per normalized feature.
Var layer_norm(Tape& tape, const Var& x, const Var& gamma, const Var& beta,
               double epsilon = kNormEpsilon);

Var leaky_relu(Tape& tape, const Var& x, double alpha = kLeakySlope);
Var relu(Tape& tape, const Var& x);
Var sigmoid(Tape& tape, const Var& x);

// x: (N, F_in), w: (F_out, F_in), b: (F_out) -> (N, F_out).
Var linear(Tape& tape, const Var& x, const Var& w, const Var& b);

// Softmax over all spatial positions of a (N, 1, H, W) map.
Var spatial_softmax(Tape& tape, const Var& logits);
// sum_p weights[n, 0, p] * x[n, c, p] -> (N, C, 1, 1).
Var weighted_pool(Tape& tape, const Var& x, const Var& weights);
// x: (N, C, H, W) plus y: (N, C, 1, 1) broadcast over positions.
Var add_broadcast(Tape& tape, const Var& x, const Var& y);
Var concat_channels(Tape& tape, const Var& a, const Var& b);
// (N, C, H, W) -> (N, C).
Var global_avg_pool(Tape& tape, const Var& x);

Var add(Tape& tape, const Var& a, const Var& b);
Var sub(Tape& tape, const Var& a, const Var& b);
Var mul(Tape& tape, const Var& a, const Var& b);
// scale * x + shift
Var affine(Tape& tape, const Var& x, double scale, double shift);
Var square(Tape& tape, const Var& x);
Var log(Tape& tape, const Var& x);
// Gradient passes where lo <= x <= hi.
Var clamp(Tape& tape, const Var& x, double lo, double hi);
// Elementwise 0.5 d^2 for |d| < 1, |d| - 0.5 otherwise.
Var smooth_l1(Tape& tape, const Var& x);
Var sum(Tape& tape, const Var& x);
Var mean(Tape& tape, const Var& x);

}  // namespace pamdn::ops
