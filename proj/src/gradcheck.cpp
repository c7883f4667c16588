#include "pamdn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

#include "pamdn/error.hpp"

namespace pamdn {

double grad_check(const ScalarFn& f, const Tensor& x, double h) {
    if (!(h > 0.0)) throw ConfigError("grad_check: step size must be positive");

    Var leaf = Var::parameter(Tensor(x.shape(), std::vector<double>(x.data().begin(), x.data().end())));
    std::vector<double> analytic;
    {
        Tape tape;
        Var loss = f(tape, leaf);
        tape.backward(loss);
        analytic.assign(x.size(), 0.0);
        if (leaf.has_grad()) std::copy(leaf.grad().begin(), leaf.grad().end(), analytic.begin());
    }

    auto evaluate = [&](const Var& v) {
        Tape tape(false);
        return f(tape, v).data()[0];
    };

    Var probe(Tensor(x.shape(), std::vector<double>(x.data().begin(), x.data().end())));
    auto values = probe.mutable_value().data();
    double worst = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double saved = values[i];
        values[i] = saved + h;
        const double up = evaluate(probe);
        values[i] = saved - h;
        const double down = evaluate(probe);
        values[i] = saved;
        const double numeric = (up - down) / (2.0 * h);
        const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-12});
        worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
    return worst;
}

double grad_check_refined(const ScalarFn& f, const Tensor& x, const std::vector<double>& steps) {
    if (steps.empty()) throw ConfigError("grad_check_refined: no step sizes");
    for (double h : steps)
        if (!(h > 0.0)) throw ConfigError("grad_check_refined: step sizes must be positive");

    Var leaf = Var::parameter(Tensor(x.shape(), x.data()));
    std::vector<double> analytic(x.size(), 0.0);
    {
        Tape tape;
        Var loss = f(tape, leaf);
        tape.backward(loss);
        if (leaf.has_grad()) std::copy(leaf.grad().begin(), leaf.grad().end(), analytic.begin());
    }
    auto evaluate = [&](const Var& v) {
        Tape tape(false);
        return f(tape, v).data()[0];
    };

    // For every step: the central difference, plus forward and backward
    // one-sided differences with Richardson correction against the next
    // smaller step (which cancels their first-order error). A straddled kink
    // spoils one side and the central estimates at the larger steps;
    // round-off spoils the smallest steps. The estimate kept is the one
    // where two neighbouring steps of the same sequence agree best.
    std::vector<double> ladder = steps;
    std::sort(ladder.begin(), ladder.end(), std::greater<>());
    const std::size_t m = ladder.size();
    Var probe(Tensor(x.shape(), x.data()));
    auto values = probe.mutable_value().data();
    const double f0 = evaluate(probe);
    std::vector<double> central(m), fwd(m), bwd(m);
    double worst = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double saved = values[i];
        for (std::size_t k = 0; k < m; ++k) {
            values[i] = saved + ladder[k];
            const double up = evaluate(probe);
            values[i] = saved - ladder[k];
            const double down = evaluate(probe);
            values[i] = saved;
            central[k] = (up - down) / (2.0 * ladder[k]);
            fwd[k] = (up - f0) / ladder[k];
            bwd[k] = (f0 - down) / ladder[k];
        }
        double numeric = central[0], best = std::numeric_limits<double>::infinity();
        auto consider = [&](const std::vector<double>& seq) {
            for (std::size_t k = 0; k + 1 < seq.size(); ++k) {
                const double gap = std::abs(seq[k] - seq[k + 1]);
                if (gap < best) {
                    best = gap;
                    numeric = seq[k + 1];
                }
            }
        };
        consider(central);
        for (const auto* side : {&fwd, &bwd}) {
            std::vector<double> rich;
            for (std::size_t k = 0; k + 1 < m; ++k) {
                const double r = ladder[k] / ladder[k + 1];
                rich.push_back((r * (*side)[k + 1] - (*side)[k]) / (r - 1.0));
            }
            consider(rich);
        }
        const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-12});
        worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
    return worst;
}

}  // namespace pamdn
