#include "pamdn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "pamdn/error.hpp"

namespace pamdn {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require_same_shape(const Image& a, const Image& b, const char* what) {
    if (a.height != b.height || a.width != b.width)
        throw DimensionError(std::string(what) + ": image is " + std::to_string(a.height) + "x" +
                             std::to_string(a.width) + ", reference is " + std::to_string(b.height) + "x" +
                             std::to_string(b.width));
}

std::vector<double> gaussian_1d() {
    std::vector<double> g(kSsimWindow);
    const double c = static_cast<double>(kSsimWindow / 2);
    double s = 0.0;
    for (std::size_t i = 0; i < kSsimWindow; ++i) {
        const double d = static_cast<double>(i) - c;
        g[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
        s += g[i];
    }
    for (double& v : g) v /= s;
    return g;
}

// Valid-mode separable filter of a row-major h x w plane.
std::vector<double> filter_valid(const std::vector<double>& in, std::size_t h, std::size_t w,
                                 const std::vector<double>& g) {
    const std::size_t k = g.size(), oh = h - k + 1, ow = w - k + 1;
    std::vector<double> tmp(h * ow, 0.0), out(oh * ow, 0.0);
    for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < ow; ++c) {
            double s = 0.0;
            for (std::size_t i = 0; i < k; ++i) s += g[i] * in[r * w + c + i];
            tmp[r * ow + c] = s;
        }
    for (std::size_t r = 0; r < oh; ++r)
        for (std::size_t c = 0; c < ow; ++c) {
            double s = 0.0;
            for (std::size_t i = 0; i < k; ++i) s += g[i] * tmp[(r + i) * ow + c];
            out[r * ow + c] = s;
        }
    return out;
}

nlohmann::json box_json(const Box& b) { return nlohmann::json::array({b.x, b.y, b.w, b.h}); }

Box box_from_json(const nlohmann::json& j) {
    if (!j.is_array() || j.size() != 4) throw ConfigError("ROI box must be [x, y, w, h], got " + j.dump());
    for (const auto& v : j)
        if (!v.is_number_integer() || v.get<long long>() < 0)
            throw ConfigError("ROI box entries must be non-negative integers, got " + j.dump());
    return {j[0].get<std::size_t>(), j[1].get<std::size_t>(), j[2].get<std::size_t>(), j[3].get<std::size_t>()};
}

std::string box_str(const Box& b) {
    return "[" + std::to_string(b.x) + "," + std::to_string(b.y) + "," + std::to_string(b.w) + "," +
           std::to_string(b.h) + "]";
}

nlohmann::json number_json(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    if (std::isnan(v)) return "nan";
    return v;
}

}  // namespace

// ---------------------------------------------------------------- full reference

double psnr(const Image& x, const Image& ref, double peak) {
    require_same_shape(x, ref, "psnr");
    if (!(peak > 0)) throw RangeError("psnr peak must be positive");
    if (x.size() == 0) throw DimensionError("psnr of an empty image");
    double se = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = x.pixels[i] - ref.pixels[i];
        se += d * d;
    }
    const double mse = se / static_cast<double>(x.size());
    if (mse == 0.0) return kInf;
    return 10.0 * std::log10(peak * peak / mse);
}

std::vector<double> ssim_window() {
    const auto g = gaussian_1d();
    std::vector<double> w(kSsimWindow * kSsimWindow);
    for (std::size_t i = 0; i < kSsimWindow; ++i)
        for (std::size_t j = 0; j < kSsimWindow; ++j) w[i * kSsimWindow + j] = g[i] * g[j];
    return w;
}

double ssim(const Image& x, const Image& ref, double peak) {
    require_same_shape(x, ref, "ssim");
    if (x.height < kSsimWindow || x.width < kSsimWindow)
        throw DimensionError("ssim needs images of at least " + std::to_string(kSsimWindow) + "x" +
                             std::to_string(kSsimWindow) + ", got " + std::to_string(x.height) + "x" +
                             std::to_string(x.width));
    const double c1 = (0.01 * peak) * (0.01 * peak), c2 = (0.03 * peak) * (0.03 * peak);
    const auto g = gaussian_1d();
    const std::size_t n = x.size();
    std::vector<double> xx(n), yy(n), xy(n);
    for (std::size_t i = 0; i < n; ++i) {
        xx[i] = x.pixels[i] * x.pixels[i];
        yy[i] = ref.pixels[i] * ref.pixels[i];
        xy[i] = x.pixels[i] * ref.pixels[i];
    }
    const auto mx = filter_valid(x.pixels, x.height, x.width, g);
    const auto my = filter_valid(ref.pixels, x.height, x.width, g);
    const auto sxx = filter_valid(xx, x.height, x.width, g);
    const auto syy = filter_valid(yy, x.height, x.width, g);
    const auto sxy = filter_valid(xy, x.height, x.width, g);
    double total = 0.0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
        const double vx = sxx[i] - mx[i] * mx[i];
        const double vy = syy[i] - my[i] * my[i];
        const double cov = sxy[i] - mx[i] * my[i];
        total += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2)) /
                 ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
    }
    return total / static_cast<double>(mx.size());
}

// ---------------------------------------------------------------- ROIs

bool Box::intersects(const Box& o) const {
    return x < o.x + o.w && o.x < x + w && y < o.y + o.h && o.y < y + h;
}

void RoiSet::validate(std::size_t height, std::size_t width) const {
    if (signal.empty()) throw ConfigError("ROI set has no signal boxes");
    auto check = [&](const Box& b, const std::string& what) {
        if (b.w < 2 || b.h < 2) throw ConfigError(what + " " + box_str(b) + " is thinner than 2 px");
        if (b.x + b.w > width || b.y + b.h > height)
            throw ConfigError(what + " " + box_str(b) + " leaves the " + std::to_string(height) + "x" +
                              std::to_string(width) + " image");
    };
    for (std::size_t i = 0; i < signal.size(); ++i) {
        check(signal[i], "signal box " + std::to_string(i));
        if (signal[i].intersects(background))
            throw ConfigError("background box overlaps signal box " + std::to_string(i));
    }
    check(background, "background box");
}

nlohmann::json RoiSet::to_json() const {
    nlohmann::json s = nlohmann::json::array();
    for (const auto& b : signal) s.push_back(box_json(b));
    return {{"signal", s}, {"background", box_json(background)}};
}

RoiSet RoiSet::from_json(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("signal") || !j.contains("background") || !j["signal"].is_array())
        throw ConfigError("ROI JSON needs a 'signal' list and a 'background' box");
    RoiSet r;
    for (const auto& b : j["signal"]) r.signal.push_back(box_from_json(b));
    r.background = box_from_json(j["background"]);
    return r;
}

RoiSet RoiSet::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        nlohmann::json j;
        in >> j;
        return from_json(j);
    } catch (const nlohmann::json::exception& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

void RoiSet::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << to_json().dump(2) << "\n";
}

BoxStats box_stats(const Image& img, const Box& b) {
    if (b.x + b.w > img.width || b.y + b.h > img.height || b.w * b.h < 2)
        throw ConfigError("box " + box_str(b) + " does not fit the image");
    double s = 0.0;
    for (std::size_t r = b.y; r < b.y + b.h; ++r)
        for (std::size_t c = b.x; c < b.x + b.w; ++c) s += img.at(r, c);
    const double n = static_cast<double>(b.w * b.h);
    const double mean = s / n;
    double ss = 0.0;
    for (std::size_t r = b.y; r < b.y + b.h; ++r)
        for (std::size_t c = b.x; c < b.x + b.w; ++c) ss += (img.at(r, c) - mean) * (img.at(r, c) - mean);
    return {mean, std::sqrt(ss / (n - 1.0))};
}

double snr(const Image& img, const RoiSet& rois) {
    rois.validate(img.height, img.width);
    double mu = 0.0;
    for (const auto& b : rois.signal) mu += box_stats(img, b).mean;
    mu /= static_cast<double>(rois.signal.size());
    if (mu < 0) throw RangeError("mean signal level is negative; check the ROI placement");
    const double sb = box_stats(img, rois.background).stddev;
    if (sb == 0.0) return kInf;
    return 20.0 * std::log10(mu / sb);
}

double cnr(const Image& img, const RoiSet& rois) {
    rois.validate(img.height, img.width);
    const BoxStats bg = box_stats(img, rois.background);
    double sum = 0.0;
    std::size_t used = 0;
    for (const auto& b : rois.signal) {
        const BoxStats s = box_stats(img, b);
        const double den = std::sqrt(s.stddev * s.stddev + bg.stddev * bg.stddev);
        if (den == 0.0) continue;
        sum += std::abs(s.mean - bg.mean) / den;
        ++used;
    }
    if (used == 0) throw RangeError("every signal box and the background are flat; CNR is undefined");
    return 20.0 * std::log10(sum / static_cast<double>(used));
}

namespace {

struct Rect {
    std::size_t r0 = 0, c0 = 0, h = 0, w = 0;
};

// Largest all-true axis-aligned rectangle of `mask` restricted to the window
// [r0, r0+h) x [c0, c0+w), by the row-histogram stack method.
Rect largest_rect(const std::vector<char>& mask, std::size_t width, std::size_t r0, std::size_t c0, std::size_t h,
                  std::size_t w) {
    std::vector<std::size_t> heights(w, 0);
    Rect best;
    for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < w; ++c) heights[c] = mask[(r0 + r) * width + c0 + c] ? heights[c] + 1 : 0;
        std::vector<std::size_t> stack;
        for (std::size_t c = 0; c <= w; ++c) {
            const std::size_t cur = c < w ? heights[c] : 0;
            while (!stack.empty() && heights[stack.back()] >= cur) {
                const std::size_t top = stack.back();
                stack.pop_back();
                const std::size_t left = stack.empty() ? 0 : stack.back() + 1;
                const std::size_t hh = heights[top], ww = c - left;
                if (hh * ww > best.h * best.w) best = {r0 + r + 1 - hh, c0 + left, hh, ww};
            }
            if (c < w) stack.push_back(c);
        }
    }
    return best;
}

}  // namespace

RoiSet auto_rois(const Image& clean, const AutoRoiOptions& opts) {
    const std::size_t H = clean.height, W = clean.width;
    if (opts.count == 0) throw ConfigError("auto ROI needs at least one signal box");
    const std::size_t s = opts.signal_size ? opts.signal_size : std::max<std::size_t>(2, std::min(H, W) / 16);
    if (s < 2 || H < 4 * s || W < 4 * s) throw ConfigError("image too small for automatic ROI placement");

    // Background: empty pixels with a one-pixel guard band around structure.
    std::vector<char> empty(H * W, 1);
    for (std::size_t r = 0; r < H; ++r)
        for (std::size_t c = 0; c < W; ++c) {
            for (std::size_t rr = r ? r - 1 : 0; rr <= std::min(H - 1, r + 1); ++rr)
                for (std::size_t cc = c ? c - 1 : 0; cc <= std::min(W - 1, c + 1); ++cc)
                    if (clean.at(rr, cc) > opts.empty_threshold) empty[r * W + c] = 0;
        }
    Rect bg;
    const std::size_t hh = H / 2, hw = W / 2;
    const std::size_t qr[4] = {0, 0, hh, hh}, qc[4] = {0, hw, 0, hw};
    for (int q = 0; q < 4; ++q) {
        const Rect r = largest_rect(empty, W, qr[q], qc[q], q < 2 ? hh : H - hh, q % 2 == 0 ? hw : W - hw);
        if (r.h * r.w > bg.h * bg.w) bg = r;
    }
    if (bg.h < 2 || bg.w < 2) throw ConfigError("no empty region of at least 2x2 px for the background box");
    RoiSet out;
    out.background = {bg.c0, bg.r0, bg.w, bg.h};

    // Signal: s x s windows ranked by mean intensity, picked greedily.
    struct Cand {
        double mean;
        std::size_t r, c;
    };
    std::vector<double> integral((H + 1) * (W + 1), 0.0);
    for (std::size_t r = 0; r < H; ++r)
        for (std::size_t c = 0; c < W; ++c)
            integral[(r + 1) * (W + 1) + c + 1] = clean.at(r, c) + integral[r * (W + 1) + c + 1] +
                                                  integral[(r + 1) * (W + 1) + c] - integral[r * (W + 1) + c];
    std::vector<Cand> cands;
    for (std::size_t r = 0; r + s <= H; ++r)
        for (std::size_t c = 0; c + s <= W; ++c) {
            const double sum = integral[(r + s) * (W + 1) + c + s] - integral[r * (W + 1) + c + s] -
                               integral[(r + s) * (W + 1) + c] + integral[r * (W + 1) + c];
            const double mean = sum / static_cast<double>(s * s);
            if (mean > opts.empty_threshold && clean.at(r + s / 2, c + s / 2) > opts.empty_threshold)
                cands.push_back({mean, r, c});
        }
    std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) { return a.mean > b.mean; });

    // Prefer a gap of one box width between picks; fall back to mere
    // non-overlap when the structure is too sparse for that.
    for (std::size_t gap : {s, std::size_t{0}}) {
        out.signal.clear();
        for (const auto& cd : cands) {
            if (out.signal.size() == opts.count) break;
            const Box b{cd.c, cd.r, s, s};
            if (b.intersects(out.background)) continue;
            bool ok = true;
            for (const auto& p : out.signal) {
                const Box grown{p.x >= gap ? p.x - gap : 0, p.y >= gap ? p.y - gap : 0, p.w + 2 * gap, p.h + 2 * gap};
                if (b.intersects(grown)) {
                    ok = false;
                    break;
                }
            }
            if (ok) out.signal.push_back(b);
        }
        if (out.signal.size() == opts.count) break;
    }
    if (out.signal.size() < opts.count)
        throw ConfigError("found only " + std::to_string(out.signal.size()) + " of " + std::to_string(opts.count) +
                          " separable foreground spots for signal boxes");
    out.validate(H, W);
    return out;
}

// ---------------------------------------------------------------- reports

Aggregate aggregate(const std::vector<double>& values) {
    Aggregate a;
    double s = 0.0;
    for (double v : values) {
        if (!std::isfinite(v)) {
            ++a.excluded;
            continue;
        }
        s += v;
        ++a.count;
    }
    if (a.count == 0) return a;
    a.mean = s / static_cast<double>(a.count);
    if (a.count > 1) {
        double ss = 0.0;
        for (double v : values)
            if (std::isfinite(v)) ss += (v - a.mean) * (v - a.mean);
        a.stddev = std::sqrt(ss / static_cast<double>(a.count - 1));
    }
    return a;
}

namespace {

constexpr const char* kMetricNames[] = {"psnr", "ssim", "snr", "cnr"};

const std::optional<double>& metric_of(const MetricRow& r, int k) {
    switch (k) {
        case 0: return r.psnr;
        case 1: return r.ssim;
        case 2: return r.snr;
        default: return r.cnr;
    }
}

AggregateTable table_for(const std::vector<const MetricRow*>& rows, const std::string& group,
                         std::vector<std::string>& warnings) {
    AggregateTable t;
    for (int k = 0; k < 4; ++k) {
        std::vector<double> vals;
        for (const MetricRow* r : rows)
            if (const auto& v = metric_of(*r, k)) {
                vals.push_back(*v);
                if (!std::isfinite(*v))
                    warnings.push_back(std::string(kMetricNames[k]) + " of " + r->name + " is not finite; left out of '" +
                                       group + "' aggregate");
            }
        if (!vals.empty()) t[kMetricNames[k]] = aggregate(vals);
    }
    return t;
}

nlohmann::json table_json(const AggregateTable& t) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [name, a] : t)
        j[name] = {{"mean", a.mean}, {"std", a.stddev}, {"count", a.count}, {"excluded", a.excluded}};
    return j;
}

}  // namespace

void summarize(MetricReport& report, bool group_by_level) {
    std::vector<const MetricRow*> all;
    for (const auto& r : report.rows) all.push_back(&r);
    report.overall = table_for(all, "all", report.warnings);
    report.by_level.clear();
    if (!group_by_level) return;
    for (NoiseLevel lv : {NoiseLevel::kLow, NoiseLevel::kMid, NoiseLevel::kHigh}) {
        std::vector<const MetricRow*> sel;
        for (const auto& r : report.rows)
            if (r.level == lv) sel.push_back(&r);
        if (!sel.empty()) report.by_level[to_string(lv)] = table_for(sel, to_string(lv), report.warnings);
    }
}

nlohmann::json MetricReport::to_json() const {
    nlohmann::json rows_j = nlohmann::json::array();
    for (const auto& r : rows) {
        nlohmann::json j = {{"name", r.name}};
        if (r.level) j["level"] = to_string(*r.level);
        for (int k = 0; k < 4; ++k)
            if (const auto& v = metric_of(r, k)) j[kMetricNames[k]] = number_json(*v);
        rows_j.push_back(std::move(j));
    }
    nlohmann::json groups = nlohmann::json::object();
    for (const auto& [lv, t] : by_level) groups[lv] = table_json(t);
    return {{"rows", rows_j}, {"overall", table_json(overall)}, {"by_level", groups}, {"warnings", warnings}};
}

MetricReport evaluate(const std::vector<EvalItem>& items, const EvalOptions& opts, const Denoiser& model) {
    MetricReport rep;
    for (const auto& it : items) {
        if (!it.reference && !it.rois)
            throw UsageError(it.name + ": neither a reference image nor ROIs are available to score it");
        const Image img = model ? model(it.image) : it.image;
        MetricRow row;
        row.name = it.name;
        row.level = it.level;
        if (it.reference) {
            row.psnr = psnr(img, *it.reference, opts.peak);
            row.ssim = ssim(img, *it.reference, opts.peak);
        }
        if (it.rois) {
            try {
                row.snr = snr(img, *it.rois);
            } catch (const RangeError& e) {
                rep.warnings.push_back(it.name + ": snr skipped, " + e.what());
            }
            try {
                row.cnr = cnr(img, *it.rois);
            } catch (const RangeError& e) {
                rep.warnings.push_back(it.name + ": cnr skipped, " + e.what());
            }
        }
        rep.rows.push_back(std::move(row));
    }
    summarize(rep, opts.group_by_level);
    return rep;
}

std::string format_table(const std::vector<std::pair<std::string, const MetricReport*>>& columns) {
    if (columns.empty()) return "";
    std::vector<std::pair<std::string, const AggregateTable*>> groups;
    // Group keys come from the first report; others are looked up by name.
    const MetricReport& first = *columns.front().second;
    groups.emplace_back("all", &first.overall);
    // Levels in noise order rather than alphabetically; unknown keys last.
    for (const char* lv : {"low", "mid", "high"})
        if (const auto it = first.by_level.find(lv); it != first.by_level.end()) groups.emplace_back(lv, &it->second);
    for (const auto& [lv, t] : first.by_level)
        if (lv != "low" && lv != "mid" && lv != "high") groups.emplace_back(lv, &t);

    auto cell = [](const Aggregate& a, int prec) {
        std::ostringstream s;
        s << std::fixed << std::setprecision(prec) << a.mean << " ± " << a.stddev;
        return s.str();
    };
    std::vector<std::vector<std::string>> lines;
    std::vector<std::string> head = {"group", "metric"};
    for (const auto& c : columns) head.push_back(c.first);
    lines.push_back(head);
    for (const auto& [g, _] : groups) {
        for (const char* m : kMetricNames) {
            std::vector<std::string> line = {g, m};
            bool any = false;
            for (const auto& [label, rep] : columns) {
                const AggregateTable* t = g == "all" ? &rep->overall : nullptr;
                if (!t) {
                    const auto it = rep->by_level.find(g);
                    if (it != rep->by_level.end()) t = &it->second;
                }
                const auto a = t ? t->find(m) : AggregateTable::const_iterator{};
                if (t && a != t->end()) {
                    line.push_back(cell(a->second, std::string(m) == "ssim" ? 4 : 2));
                    any = true;
                } else {
                    line.push_back("-");
                }
            }
            if (any) lines.push_back(std::move(line));
        }
    }
    // "±" is two bytes but one column; pad by display width.
    auto display = [](const std::string& s) {
        std::size_t n = 0;
        for (unsigned char ch : s) n += (ch & 0xC0) != 0x80;
        return n;
    };
    std::vector<std::size_t> width(head.size(), 0);
    for (const auto& l : lines)
        for (std::size_t i = 0; i < l.size(); ++i) width[i] = std::max(width[i], display(l[i]));
    std::ostringstream out;
    for (const auto& l : lines) {
        for (std::size_t i = 0; i < l.size(); ++i) {
            out << l[i];
            if (i + 1 < l.size()) out << std::string(width[i] - display(l[i]) + 2, ' ');
        }
        out << "\n";
    }
    return out.str();
}

}  // namespace pamdn
