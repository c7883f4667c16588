#include "pamdn/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "pamdn/error.hpp"

namespace pamdn::ops {
namespace {

using MatR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;

void require_rank(const Var& v, std::size_t rank, const char* op, const char* what) {
    if (v.shape().rank() != rank) {
        throw DimensionError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) +
                             ", got " + v.shape().str());
    }
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
    if (!(a.shape() == b.shape())) {
        throw DimensionError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " + b.shape().str());
    }
}

void require_channels(const Var& p, std::size_t c, const char* op, const char* what) {
    if (p.size() != c) {
        throw DimensionError(std::string(op) + ": " + what + " has " + std::to_string(p.size()) +
                             " entries, expected " + std::to_string(c) + " (channel axis)");
    }
}

struct Geometry {
    std::size_t n, c, h, w;
    std::size_t plane() const { return h * w; }
};

Geometry nchw(const Var& x) {
    const Shape& s = x.shape();
    return {s[0], s[1], s[2], s[3]};
}

// Unfolds one sample (C, H, W) into a (C*kh*kw, Ho*Wo) matrix.
void im2col(const double* x, std::size_t c, std::size_t h, std::size_t w, std::size_t kh, std::size_t kw,
            std::size_t stride, std::size_t pad, std::size_t ho, std::size_t wo, double* col) {
    const std::size_t p = ho * wo;
    for (std::size_t ci = 0; ci < c; ++ci) {
        const double* plane = x + ci * h * w;
        for (std::size_t ky = 0; ky < kh; ++ky) {
            for (std::size_t kx = 0; kx < kw; ++kx) {
                double* row = col + ((ci * kh + ky) * kw + kx) * p;
                for (std::size_t oy = 0; oy < ho; ++oy) {
                    const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                    double* dst = row + oy * wo;
                    if (iy < 0 || iy >= static_cast<long>(h)) {
                        std::fill(dst, dst + wo, 0.0);
                        continue;
                    }
                    const double* src = plane + iy * w;
                    for (std::size_t ox = 0; ox < wo; ++ox) {
                        const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                        dst[ox] = (ix < 0 || ix >= static_cast<long>(w)) ? 0.0 : src[ix];
                    }
                }
            }
        }
    }
}

void col2im_add(const double* col, std::size_t c, std::size_t h, std::size_t w, std::size_t kh, std::size_t kw,
                std::size_t stride, std::size_t pad, std::size_t ho, std::size_t wo, double* x) {
    const std::size_t p = ho * wo;
    for (std::size_t ci = 0; ci < c; ++ci) {
        double* plane = x + ci * h * w;
        for (std::size_t ky = 0; ky < kh; ++ky) {
            for (std::size_t kx = 0; kx < kw; ++kx) {
                const double* row = col + ((ci * kh + ky) * kw + kx) * p;
                for (std::size_t oy = 0; oy < ho; ++oy) {
                    const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                    if (iy < 0 || iy >= static_cast<long>(h)) continue;
                    double* dst = plane + iy * w;
                    const double* src = row + oy * wo;
                    for (std::size_t ox = 0; ox < wo; ++ox) {
                        const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                        if (ix >= 0 && ix < static_cast<long>(w)) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

// Shared shape of per-plane (instance) and per-channel (batch) normalization
// backward: dx = inv / m * (m * g - sum(g) - xhat * sum(g * xhat)).
void norm_backward_group(const double* g, const double* xhat, double inv, std::size_t m, double sum_g,
                         double sum_gx, double* dx, std::size_t stride_count, std::size_t stride_len,
                         std::size_t stride_step) {
    const double md = static_cast<double>(m);
    for (std::size_t s = 0; s < stride_count; ++s) {
        const std::size_t base = s * stride_step;
        for (std::size_t i = 0; i < stride_len; ++i) {
            const std::size_t k = base + i;
            dx[k] += inv / md * (md * g[k] - sum_g - xhat[k] * sum_gx);
        }
    }
}

}  // namespace

Var conv2d(Tape& tape, const Var& x, const Var& w, const Var& b, int stride, int padding) {
    require_rank(x, 4, "conv2d", "input");
    require_rank(w, 4, "conv2d", "weight");
    if (stride < 1 || padding < 0) {
        throw ConfigError("conv2d: stride must be >= 1 and padding >= 0");
    }
    const Geometry g = nchw(x);
    const std::size_t co = w.shape()[0], kh = w.shape()[2], kw = w.shape()[3];
    if (w.shape()[1] != g.c) {
        throw DimensionError("conv2d: input channel axis (" + std::to_string(g.c) + ") does not match weight in_c axis (" +
                             std::to_string(w.shape()[1]) + ")");
    }
    require_channels(b, co, "conv2d", "bias");
    const long span_h = static_cast<long>(g.h) + 2L * padding - static_cast<long>(kh);
    const long span_w = static_cast<long>(g.w) + 2L * padding - static_cast<long>(kw);
    // A remainder is tolerated only while the dropped trailing rows/columns
    // are padding; otherwise the output grid would not cover the input.
    if (span_h < 0 || span_w < 0 || span_h % stride > padding || span_w % stride > padding) {
        throw ConfigError("conv2d: output size is not a positive integer for input " + x.shape().str() + ", kernel " +
                          std::to_string(kh) + "x" + std::to_string(kw) + ", stride " + std::to_string(stride) +
                          ", padding " + std::to_string(padding));
    }
    const std::size_t ho = span_h / stride + 1, wo = span_w / stride + 1;
    const std::size_t k = g.c * kh * kw, p = ho * wo;
    const bool direct = kh == 1 && kw == 1 && stride == 1 && padding == 0;

    Tensor out(Shape{g.n, co, ho, wo});
    CMapR wm(w.data().data(), co, k);
    Buffer col(direct ? 0 : k * p);
    for (std::size_t n = 0; n < g.n; ++n) {
        const double* xn = x.data().data() + n * g.c * g.plane();
        const double* colp = xn;
        if (!direct) {
            im2col(xn, g.c, g.h, g.w, kh, kw, stride, padding, ho, wo, col.data());
            colp = col.data();
        }
        MapR on(out.data().data() + n * co * p, co, p);
        on.noalias() = wm * CMapR(colp, k, p);
        for (std::size_t o = 0; o < co; ++o) on.row(o).array() += b.data()[o];
    }

    return tape.emit(std::move(out), {&x, &w, &b}, [=](const Node& res) {
        const double* dy = res.value.grad().data();
        auto dx = grad_sink(x);
        auto dw = grad_sink(w);
        auto db = grad_sink(b);
        CMapR wmat(w.data().data(), co, k);
        Buffer cbuf(k * p);
        for (std::size_t n = 0; n < g.n; ++n) {
            CMapR dyn(dy + n * co * p, co, p);
            if (!db.empty()) {
                for (std::size_t o = 0; o < co; ++o) db[o] += dyn.row(o).sum();
            }
            const double* xn = x.data().data() + n * g.c * g.plane();
            if (!dw.empty()) {
                const double* colp = xn;
                if (!direct) {
                    im2col(xn, g.c, g.h, g.w, kh, kw, stride, padding, ho, wo, cbuf.data());
                    colp = cbuf.data();
                }
                MapR(dw.data(), co, k).noalias() += dyn * CMapR(colp, k, p).transpose();
            }
            if (!dx.empty()) {
                double* dxn = dx.data() + n * g.c * g.plane();
                if (direct) {
                    MapR(dxn, k, p).noalias() += wmat.transpose() * dyn;
                } else {
                    MapR(cbuf.data(), k, p).noalias() = wmat.transpose() * dyn;
                    col2im_add(cbuf.data(), g.c, g.h, g.w, kh, kw, stride, padding, ho, wo, dxn);
                }
            }
        }
    });
}

Var conv2d_transpose(Tape& tape, const Var& x, const Var& w, const Var& b, int stride) {
    require_rank(x, 4, "conv2d_transpose", "input");
    require_rank(w, 4, "conv2d_transpose", "weight");
    const Geometry g = nchw(x);
    if (w.shape()[0] != g.c) {
        throw DimensionError("conv2d_transpose: input channel axis (" + std::to_string(g.c) +
                             ") does not match weight in_c axis (" + std::to_string(w.shape()[0]) + ")");
    }
    const std::size_t co = w.shape()[1], kh = w.shape()[2], kw = w.shape()[3];
    if (stride < 1 || kh != static_cast<std::size_t>(stride) || kw != static_cast<std::size_t>(stride)) {
        throw ConfigError("conv2d_transpose: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                          " must equal stride " + std::to_string(stride));
    }
    require_channels(b, co, "conv2d_transpose", "bias");
    const std::size_t s = stride, ho = g.h * s, wo = g.w * s, p = g.plane(), rows = co * s * s;

    Tensor out(Shape{g.n, co, ho, wo});
    CMapR wm(w.data().data(), g.c, rows);
    MatR y(rows, p);
    for (std::size_t n = 0; n < g.n; ++n) {
        y.noalias() = wm.transpose() * CMapR(x.data().data() + n * g.c * p, g.c, p);
        double* on = out.data().data() + n * co * ho * wo;
        for (std::size_t o = 0; o < co; ++o) {
            for (std::size_t a = 0; a < s; ++a) {
                for (std::size_t bb = 0; bb < s; ++bb) {
                    const double* src = y.data() + ((o * s + a) * s + bb) * p;
                    for (std::size_t i = 0; i < g.h; ++i) {
                        double* dst = on + (o * ho + i * s + a) * wo + bb;
                        for (std::size_t j = 0; j < g.w; ++j) dst[j * s] = src[i * g.w + j] + b.data()[o];
                    }
                }
            }
        }
    }

    return tape.emit(std::move(out), {&x, &w, &b}, [=](const Node& res) {
        const double* dy = res.value.grad().data();
        auto dx = grad_sink(x);
        auto dw = grad_sink(w);
        auto db = grad_sink(b);
        CMapR wmat(w.data().data(), g.c, rows);
        MatR dyr(rows, p);
        for (std::size_t n = 0; n < g.n; ++n) {
            const double* dn = dy + n * co * ho * wo;
            for (std::size_t o = 0; o < co; ++o) {
                for (std::size_t a = 0; a < s; ++a) {
                    for (std::size_t bb = 0; bb < s; ++bb) {
                        double* dst = dyr.data() + ((o * s + a) * s + bb) * p;
                        for (std::size_t i = 0; i < g.h; ++i) {
                            const double* src = dn + (o * ho + i * s + a) * wo + bb;
                            for (std::size_t j = 0; j < g.w; ++j) dst[i * g.w + j] = src[j * s];
                        }
                    }
                }
                if (!db.empty()) {
                    const double* plane = dn + o * ho * wo;
                    double acc = 0.0;
                    for (std::size_t q = 0; q < ho * wo; ++q) acc += plane[q];
                    db[o] += acc;
                }
            }
            if (!dw.empty()) {
                MapR(dw.data(), g.c, rows).noalias() +=
                    CMapR(x.data().data() + n * g.c * p, g.c, p) * dyr.transpose();
            }
            if (!dx.empty()) {
                MapR(dx.data() + n * g.c * p, g.c, p).noalias() += wmat * dyr;
            }
        }
    });
}

Var maxpool2d(Tape& tape, const Var& x) {
    require_rank(x, 4, "maxpool2d", "input");
    const Geometry g = nchw(x);
    if (g.h % 2 != 0 || g.w % 2 != 0) {
        throw DimensionError("maxpool2d: spatial axes must be even, got H=" + std::to_string(g.h) +
                             " W=" + std::to_string(g.w));
    }
    const std::size_t ho = g.h / 2, wo = g.w / 2;
    Tensor out(Shape{g.n, g.c, ho, wo});
    std::vector<std::size_t> argmax(out.size());
    const double* xd = x.data().data();
    std::size_t q = 0;
    for (std::size_t nc = 0; nc < g.n * g.c; ++nc) {
        const std::size_t base = nc * g.plane();
        for (std::size_t i = 0; i < ho; ++i) {
            for (std::size_t j = 0; j < wo; ++j, ++q) {
                std::size_t best = base + 2 * i * g.w + 2 * j;
                const std::size_t cand[3] = {best + 1, best + g.w, best + g.w + 1};
                for (std::size_t c : cand) {
                    if (xd[c] > xd[best]) best = c;
                }
                argmax[q] = best;
                out[q] = xd[best];
            }
        }
    }
    return tape.emit(std::move(out), {&x}, [x, argmax = std::move(argmax)](const Node& res) {
        auto dx = grad_sink(x);
        const auto dy = res.value.grad();
        for (std::size_t i = 0; i < argmax.size(); ++i) dx[argmax[i]] += dy[i];
    });
}

Var instance_norm(Tape& tape, const Var& x, const Var& gamma, const Var& beta, double epsilon) {
    require_rank(x, 4, "instance_norm", "input");
    const Geometry g = nchw(x);
    require_channels(gamma, g.c, "instance_norm", "gamma");
    require_channels(beta, g.c, "instance_norm", "beta");
    const std::size_t m = g.plane();
    Tensor out(x.shape());
    std::vector<double> xhat(x.size());
    std::vector<double> inv(g.n * g.c);
    const double* xd = x.data().data();
    for (std::size_t nc = 0; nc < g.n * g.c; ++nc) {
        const std::size_t c = nc % g.c;
        const double* src = xd + nc * m;
        double mu = 0.0;
        for (std::size_t i = 0; i < m; ++i) mu += src[i];
        mu /= static_cast<double>(m);
        double var = 0.0;
        for (std::size_t i = 0; i < m; ++i) var += (src[i] - mu) * (src[i] - mu);
        var /= static_cast<double>(m);
        inv[nc] = 1.0 / std::sqrt(var + epsilon);
        for (std::size_t i = 0; i < m; ++i) {
            const double h = (src[i] - mu) * inv[nc];
            xhat[nc * m + i] = h;
            out[nc * m + i] = gamma.data()[c] * h + beta.data()[c];
        }
    }
    return tape.emit(std::move(out), {&x, &gamma, &beta},
                     [x, gamma, beta, g, m, xhat = std::move(xhat), inv = std::move(inv)](const Node& res) {
                         const double* dy = res.value.grad().data();
                         auto dx = grad_sink(x);
                         auto dg = grad_sink(gamma);
                         auto db = grad_sink(beta);
                         std::vector<double> gx(m);
                         for (std::size_t nc = 0; nc < g.n * g.c; ++nc) {
                             const std::size_t c = nc % g.c;
                             const double* d = dy + nc * m;
                             const double* h = xhat.data() + nc * m;
                             double sum_d = 0.0, sum_dh = 0.0;
                             for (std::size_t i = 0; i < m; ++i) {
                                 sum_d += d[i];
                                 sum_dh += d[i] * h[i];
                             }
                             if (!dg.empty()) dg[c] += sum_dh;
                             if (!db.empty()) db[c] += sum_d;
                             if (!dx.empty()) {
                                 const double gm = gamma.data()[c];
                                 for (std::size_t i = 0; i < m; ++i) gx[i] = d[i] * gm;
                                 norm_backward_group(gx.data(), h, inv[nc], m, gm * sum_d, gm * sum_dh,
                                                     dx.data() + nc * m, 1, m, 0);
                             }
                         }
                     });
}

RunningStats::RunningStats(std::size_t channels)
    : mean(channels ? Tensor(Shape{channels}, 0.0) : Tensor()),
      var(channels ? Tensor(Shape{channels}, 1.0) : Tensor()) {}

Var batch_norm(Tape& tape, const Var& x, const Var& gamma, const Var& beta, RunningStats* stats,
               double momentum, double epsilon, bool training) {
    require_rank(x, 4, "batch_norm", "input");
    const Geometry g = nchw(x);
    require_channels(gamma, g.c, "batch_norm", "gamma");
    require_channels(beta, g.c, "batch_norm", "beta");
    if (momentum < 0.0 || momentum > 1.0) throw ConfigError("batch_norm: momentum must lie in [0, 1]");
    const std::size_t plane = g.plane(), m = g.n * plane;
    const double* xd = x.data().data();
    Tensor out(x.shape());
    std::vector<double> xhat(x.size());
    std::vector<double> inv(g.c);

    if (!training) {
        if (stats == nullptr || !stats->initialized) {
            throw StateError("batch_norm: inference requested before running statistics were populated");
        }
        require_channels(Var(stats->mean), g.c, "batch_norm", "running mean");
    }

    for (std::size_t c = 0; c < g.c; ++c) {
        double mu, var;
        if (training) {
            mu = 0.0;
            for (std::size_t n = 0; n < g.n; ++n) {
                const double* src = xd + (n * g.c + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) mu += src[i];
            }
            mu /= static_cast<double>(m);
            var = 0.0;
            for (std::size_t n = 0; n < g.n; ++n) {
                const double* src = xd + (n * g.c + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) var += (src[i] - mu) * (src[i] - mu);
            }
            var /= static_cast<double>(m);
            if (stats != nullptr) {
                stats->mean[c] = (1.0 - momentum) * stats->mean[c] + momentum * mu;
                stats->var[c] = (1.0 - momentum) * stats->var[c] + momentum * var;
            }
        } else {
            mu = stats->mean[c];
            var = stats->var[c];
        }
        inv[c] = 1.0 / std::sqrt(var + epsilon);
        for (std::size_t n = 0; n < g.n; ++n) {
            const std::size_t base = (n * g.c + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
                const double h = (xd[base + i] - mu) * inv[c];
                xhat[base + i] = h;
                out[base + i] = gamma.data()[c] * h + beta.data()[c];
            }
        }
    }
    if (training && stats != nullptr) stats->initialized = true;

    return tape.emit(std::move(out), {&x, &gamma, &beta},
                     [x, gamma, beta, g, plane, m, training, xhat = std::move(xhat),
                      inv = std::move(inv)](const Node& res) {
                         const double* dy = res.value.grad().data();
                         auto dx = grad_sink(x);
                         auto dg = grad_sink(gamma);
                         auto db = grad_sink(beta);
                         std::vector<double> gx(dx.empty() ? 0 : xhat.size());
                         for (std::size_t c = 0; c < g.c; ++c) {
                             double sum_d = 0.0, sum_dh = 0.0;
                             for (std::size_t n = 0; n < g.n; ++n) {
                                 const std::size_t base = (n * g.c + c) * plane;
                                 for (std::size_t i = 0; i < plane; ++i) {
                                     sum_d += dy[base + i];
                                     sum_dh += dy[base + i] * xhat[base + i];
                                 }
                             }
                             if (!dg.empty()) dg[c] += sum_dh;
                             if (!db.empty()) db[c] += sum_d;
                             if (dx.empty()) continue;
                             const double gm = gamma.data()[c];
                             if (!training) {
                                 for (std::size_t n = 0; n < g.n; ++n) {
                                     const std::size_t base = (n * g.c + c) * plane;
                                     for (std::size_t i = 0; i < plane; ++i) dx[base + i] += dy[base + i] * gm * inv[c];
                                 }
                                 continue;
                             }
                             for (std::size_t n = 0; n < g.n; ++n) {
                                 const std::size_t base = (n * g.c + c) * plane;
                                 for (std::size_t i = 0; i < plane; ++i) gx[base + i] = dy[base + i] * gm;
                             }
                             const std::size_t first = c * plane;
                             norm_backward_group(gx.data() + first, xhat.data() + first, inv[c], m, gm * sum_d,
                                                 gm * sum_dh, dx.data() + first, g.n, plane, g.c * plane);
                         }
                     });
}

Var layer_norm(Tape& tape, const Var& x, const Var& gamma, const Var& beta, double epsilon) {
    if (x.shape().rank() < 2) throw DimensionError("layer_norm: input needs a batch axis and features");
    const std::size_t n = x.shape()[0], f = x.size() / n;
    require_channels(gamma, f, "layer_norm", "gamma");
    require_channels(beta, f, "layer_norm", "beta");
    Tensor out(x.shape());
    std::vector<double> xhat(x.size());
    std::vector<double> inv(n);
    const double* xd = x.data().data();
    for (std::size_t s = 0; s < n; ++s) {
        const double* src = xd + s * f;
        double mu = 0.0;
        for (std::size_t i = 0; i < f; ++i) mu += src[i];
        mu /= static_cast<double>(f);
        double var = 0.0;
        for (std::size_t i = 0; i < f; ++i) var += (src[i] - mu) * (src[i] - mu);
        var /= static_cast<double>(f);
        inv[s] = 1.0 / std::sqrt(var + epsilon);
        for (std::size_t i = 0; i < f; ++i) {
            const double h = (src[i] - mu) * inv[s];
            xhat[s * f + i] = h;
            out[s * f + i] = gamma.data()[i] * h + beta.data()[i];
        }
    }
    return tape.emit(std::move(out), {&x, &gamma, &beta},
                     [x, gamma, beta, n, f, xhat = std::move(xhat), inv = std::move(inv)](const Node& res) {
                         const double* dy = res.value.grad().data();
                         auto dx = grad_sink(x);
                         auto dg = grad_sink(gamma);
                         auto db = grad_sink(beta);
                         std::vector<double> gx(f);
                         for (std::size_t s = 0; s < n; ++s) {
                             const double* d = dy + s * f;
                             const double* h = xhat.data() + s * f;
                             double sum_g = 0.0, sum_gh = 0.0;
                             for (std::size_t i = 0; i < f; ++i) {
                                 if (!dg.empty()) dg[i] += d[i] * h[i];
                                 if (!db.empty()) db[i] += d[i];
                                 gx[i] = d[i] * gamma.data()[i];
                                 sum_g += gx[i];
                                 sum_gh += gx[i] * h[i];
                             }
                             if (!dx.empty()) norm_backward_group(gx.data(), h, inv[s], f, sum_g, sum_gh, dx.data() + s * f, 1, f, 0);
                         }
                     });
}

Var leaky_relu(Tape& tape, const Var& x, double alpha) {
    Tensor out(x.shape());
    const auto xd = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] > 0.0 ? xd[i] : alpha * xd[i];
    return tape.emit(std::move(out), {&x}, [x, alpha](const Node& res) {
        auto dx = grad_sink(x);
        const auto dy = res.value.grad();
        const auto xd = x.data();
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += xd[i] > 0.0 ? dy[i] : alpha * dy[i];
    });
}

Var relu(Tape& tape, const Var& x) { return leaky_relu(tape, x, 0.0); }

Var sigmoid(Tape& tape, const Var& x) {
    // Clamped so that finite inputs never round onto the closed endpoints.
    constexpr double lo = std::numeric_limits<double>::min();
    const double hi = std::nextafter(1.0, 0.0);
    Tensor out(x.shape());
    const auto xd = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = xd[i];
        const double s = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
        out[i] = std::clamp(s, lo, hi);
    }
    return tape.emit(std::move(out), {&x}, [x](const Node& res) {
        auto dx = grad_sink(x);
        const auto dy = res.value.grad();
        const auto y = res.value.data();
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i] * y[i] * (1.0 - y[i]);
    });
}

Var linear(Tape& tape, const Var& x, const Var& w, const Var& b) {
    require_rank(x, 2, "linear", "input");
    require_rank(w, 2, "linear", "weight");
    const std::size_t n = x.shape()[0], fin = x.shape()[1], fout = w.shape()[0];
    if (w.shape()[1] != fin) {
        throw DimensionError("linear: input feature axis (" + std::to_string(fin) + ") does not match weight axis 1 (" +
                             std::to_string(w.shape()[1]) + ")");
    }
    require_channels(b, fout, "linear", "bias");
    Tensor out(Shape{n, fout});
    MapR om(out.data().data(), n, fout);
    om.noalias() = CMapR(x.data().data(), n, fin) * CMapR(w.data().data(), fout, fin).transpose();
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t o = 0; o < fout; ++o) om(r, o) += b.data()[o];
    }
    return tape.emit(std::move(out), {&x, &w, &b}, [x, w, b, n, fin, fout](const Node& res) {
        CMapR dy(res.value.grad().data(), n, fout);
        auto dx = grad_sink(x);
        auto dw = grad_sink(w);
        auto db = grad_sink(b);
        if (!dx.empty()) MapR(dx.data(), n, fin).noalias() += dy * CMapR(w.data().data(), fout, fin);
        if (!dw.empty()) MapR(dw.data(), fout, fin).noalias() += dy.transpose() * CMapR(x.data().data(), n, fin);
        if (!db.empty()) {
            for (std::size_t r = 0; r < n; ++r) {
                for (std::size_t o = 0; o < fout; ++o) db[o] += dy(r, o);
            }
        }
    });
}

Var spatial_softmax(Tape& tape, const Var& logits) {
    require_rank(logits, 4, "spatial_softmax", "logits");
    const Geometry g = nchw(logits);
    if (g.c != 1) throw DimensionError("spatial_softmax: expected a single channel, got " + logits.shape().str());
    const std::size_t m = g.plane();
    Tensor out(logits.shape());
    const double* xd = logits.data().data();
    for (std::size_t n = 0; n < g.n; ++n) {
        const double* src = xd + n * m;
        const double mx = *std::max_element(src, src + m);
        double total = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            out[n * m + i] = std::exp(src[i] - mx);
            total += out[n * m + i];
        }
        for (std::size_t i = 0; i < m; ++i) out[n * m + i] /= total;
    }
    return tape.emit(std::move(out), {&logits}, [logits, g, m](const Node& res) {
        auto dx = grad_sink(logits);
        const auto dy = res.value.grad();
        const auto y = res.value.data();
        for (std::size_t n = 0; n < g.n; ++n) {
            double dot = 0.0;
            for (std::size_t i = 0; i < m; ++i) dot += dy[n * m + i] * y[n * m + i];
            for (std::size_t i = 0; i < m; ++i) dx[n * m + i] += y[n * m + i] * (dy[n * m + i] - dot);
        }
    });
}

Var weighted_pool(Tape& tape, const Var& x, const Var& weights) {
    require_rank(x, 4, "weighted_pool", "input");
    require_rank(weights, 4, "weighted_pool", "weights");
    const Geometry g = nchw(x);
    if (!(weights.shape() == Shape{g.n, 1, g.h, g.w})) {
        throw DimensionError("weighted_pool: weights " + weights.shape().str() + " do not cover input " +
                             x.shape().str());
    }
    const std::size_t m = g.plane();
    Tensor out(Shape{g.n, g.c, 1, 1});
    const double* xd = x.data().data();
    const double* a = weights.data().data();
    for (std::size_t n = 0; n < g.n; ++n) {
        for (std::size_t c = 0; c < g.c; ++c) {
            const double* src = xd + (n * g.c + c) * m;
            double acc = 0.0;
            for (std::size_t i = 0; i < m; ++i) acc += a[n * m + i] * src[i];
            out[n * g.c + c] = acc;
        }
    }
    return tape.emit(std::move(out), {&x, &weights}, [x, weights, g, m](const Node& res) {
        const auto dy = res.value.grad();
        auto dx = grad_sink(x);
        auto da = grad_sink(weights);
        const double* xd = x.data().data();
        const double* a = weights.data().data();
        for (std::size_t n = 0; n < g.n; ++n) {
            for (std::size_t c = 0; c < g.c; ++c) {
                const double d = dy[n * g.c + c];
                const std::size_t base = (n * g.c + c) * m;
                if (!dx.empty()) {
                    for (std::size_t i = 0; i < m; ++i) dx[base + i] += a[n * m + i] * d;
                }
                if (!da.empty()) {
                    for (std::size_t i = 0; i < m; ++i) da[n * m + i] += xd[base + i] * d;
                }
            }
        }
    });
}

Var add_broadcast(Tape& tape, const Var& x, const Var& y) {
    require_rank(x, 4, "add_broadcast", "input");
    const Geometry g = nchw(x);
    if (!(y.shape() == Shape{g.n, g.c, 1, 1})) {
        throw DimensionError("add_broadcast: " + y.shape().str() + " cannot broadcast over " + x.shape().str());
    }
    const std::size_t m = g.plane();
    Tensor out(x.shape());
    for (std::size_t nc = 0; nc < g.n * g.c; ++nc) {
        for (std::size_t i = 0; i < m; ++i) out[nc * m + i] = x.data()[nc * m + i] + y.data()[nc];
    }
    return tape.emit(std::move(out), {&x, &y}, [x, y, g, m](const Node& res) {
        const auto dy = res.value.grad();
        auto dx = grad_sink(x);
        auto dyy = grad_sink(y);
        for (std::size_t nc = 0; nc < g.n * g.c; ++nc) {
            double acc = 0.0;
            for (std::size_t i = 0; i < m; ++i) {
                if (!dx.empty()) dx[nc * m + i] += dy[nc * m + i];
                acc += dy[nc * m + i];
            }
            if (!dyy.empty()) dyy[nc] += acc;
        }
    });
}

Var concat_channels(Tape& tape, const Var& a, const Var& b) {
    require_rank(a, 4, "concat_channels", "first input");
    require_rank(b, 4, "concat_channels", "second input");
    const Geometry ga = nchw(a), gb = nchw(b);
    if (ga.n != gb.n || ga.h != gb.h || ga.w != gb.w) {
        throw DimensionError("concat_channels: batch/spatial axes differ " + a.shape().str() + " vs " + b.shape().str());
    }
    const std::size_t m = ga.plane(), ca = ga.c * m, cb = gb.c * m;
    Tensor out(Shape{ga.n, ga.c + gb.c, ga.h, ga.w});
    for (std::size_t n = 0; n < ga.n; ++n) {
        std::copy_n(a.data().data() + n * ca, ca, out.data().data() + n * (ca + cb));
        std::copy_n(b.data().data() + n * cb, cb, out.data().data() + n * (ca + cb) + ca);
    }
    return tape.emit(std::move(out), {&a, &b}, [a, b, n_ = ga.n, ca, cb](const Node& res) {
        const auto dy = res.value.grad();
        auto da = grad_sink(a);
        auto db = grad_sink(b);
        for (std::size_t n = 0; n < n_; ++n) {
            const double* src = dy.data() + n * (ca + cb);
            if (!da.empty()) {
                for (std::size_t i = 0; i < ca; ++i) da[n * ca + i] += src[i];
            }
            if (!db.empty()) {
                for (std::size_t i = 0; i < cb; ++i) db[n * cb + i] += src[ca + i];
            }
        }
    });
}

Var global_avg_pool(Tape& tape, const Var& x) {
    require_rank(x, 4, "global_avg_pool", "input");
    const Geometry g = nchw(x);
    const std::size_t m = g.plane();
    Tensor out(Shape{g.n, g.c});
    for (std::size_t nc = 0; nc < g.n * g.c; ++nc) {
        double acc = 0.0;
        for (std::size_t i = 0; i < m; ++i) acc += x.data()[nc * m + i];
        out[nc] = acc / static_cast<double>(m);
    }
    return tape.emit(std::move(out), {&x}, [x, g, m](const Node& res) {
        const auto dy = res.value.grad();
        auto dx = grad_sink(x);
        for (std::size_t nc = 0; nc < g.n * g.c; ++nc) {
            const double d = dy[nc] / static_cast<double>(m);
            for (std::size_t i = 0; i < m; ++i) dx[nc * m + i] += d;
        }
    });
}

Var add(Tape& tape, const Var& a, const Var& b) {
    require_same_shape(a, b, "add");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    return tape.emit(std::move(out), {&a, &b}, [a, b](const Node& res) {
        const auto dy = res.value.grad();
        for (auto d : {grad_sink(a), grad_sink(b)}) {
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[i];
        }
    });
}

Var sub(Tape& tape, const Var& a, const Var& b) {
    require_same_shape(a, b, "sub");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
    return tape.emit(std::move(out), {&a, &b}, [a, b](const Node& res) {
        const auto dy = res.value.grad();
        auto da = grad_sink(a);
        auto db = grad_sink(b);
        for (std::size_t i = 0; i < da.size(); ++i) da[i] += dy[i];
        for (std::size_t i = 0; i < db.size(); ++i) db[i] -= dy[i];
    });
}

Var mul(Tape& tape, const Var& a, const Var& b) {
    require_same_shape(a, b, "mul");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    return tape.emit(std::move(out), {&a, &b}, [a, b](const Node& res) {
        const auto dy = res.value.grad();
        auto da = grad_sink(a);
        auto db = grad_sink(b);
        for (std::size_t i = 0; i < da.size(); ++i) da[i] += dy[i] * b.data()[i];
        for (std::size_t i = 0; i < db.size(); ++i) db[i] += dy[i] * a.data()[i];
    });
}

Var affine(Tape& tape, const Var& x, double scale, double shift) {
    Tensor out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = scale * x.data()[i] + shift;
    return tape.emit(std::move(out), {&x}, [x, scale](const Node& res) {
        const auto dy = res.value.grad();
        auto dx = grad_sink(x);
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += scale * dy[i];
    });
}

Var square(Tape& tape, const Var& x) {
    Tensor out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * x.data()[i];
    return tape.emit(std::move(out), {&x}, [x](const Node& res) {
        const auto dy = res.value.grad();
        auto dx = grad_sink(x);
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += 2.0 * x.data()[i] * dy[i];
    });
}

Var log(Tape& tape, const Var& x) {
    Tensor out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (!(x.data()[i] > 0.0)) throw NumericError("log: non-positive argument");
        out[i] = std::log(x.data()[i]);
    }
    return tape.emit(std::move(out), {&x}, [x](const Node& res) {
        const auto dy = res.value.grad();
        auto dx = grad_sink(x);
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i] / x.data()[i];
    });
}

Var clamp(Tape& tape, const Var& x, double lo, double hi) {
    Tensor out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(x.data()[i], lo, hi);
    return tape.emit(std::move(out), {&x}, [x, lo, hi](const Node& res) {
        const auto dy = res.value.grad();
        auto dx = grad_sink(x);
        for (std::size_t i = 0; i < dx.size(); ++i) {
            const double v = x.data()[i];
            if (v >= lo && v <= hi) dx[i] += dy[i];
        }
    });
}

Var smooth_l1(Tape& tape, const Var& x) {
    Tensor out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double d = x.data()[i];
        out[i] = std::abs(d) < 1.0 ? 0.5 * d * d : std::abs(d) - 0.5;
    }
    return tape.emit(std::move(out), {&x}, [x](const Node& res) {
        const auto dy = res.value.grad();
        auto dx = grad_sink(x);
        for (std::size_t i = 0; i < dx.size(); ++i) {
            const double d = x.data()[i];
            const double slope = std::abs(d) < 1.0 ? d : (d > 0.0 ? 1.0 : -1.0);
            dx[i] += slope * dy[i];
        }
    });
}

Var sum(Tape& tape, const Var& x) {
    double acc = 0.0;
    for (double v : x.data()) acc += v;
    return tape.emit(Tensor::scalar(acc), {&x}, [x](const Node& res) {
        const double d = res.value.grad()[0];
        auto dx = grad_sink(x);
        for (double& g : dx) g += d;
    });
}

Var mean(Tape& tape, const Var& x) {
    return affine(tape, sum(tape, x), 1.0 / static_cast<double>(x.size()), 0.0);
}

}  // namespace pamdn::ops
