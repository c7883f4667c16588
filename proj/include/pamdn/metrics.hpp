#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "pamdn/image.hpp"
#include "pamdn/noise.hpp"

namespace pamdn {

// ---------------------------------------------------------------- full reference

// 10*log10(peak^2 / MSE). Identical images give +infinity.
double psnr(const Image& x, const Image& ref, double peak = 1.0);

inline constexpr std::size_t kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;

// Mean of the local SSIM map over every position where the 11x11 Gaussian
// window fits entirely inside the image (no padding).
double ssim(const Image& x, const Image& ref, double peak = 1.0);

// Normalized 11x11 Gaussian weights, row-major.
std::vector<double> ssim_window();

// ---------------------------------------------------------------- ROIs

struct Box {
    std::size_t x = 0, y = 0;  // column, row of the top-left corner
    std::size_t w = 0, h = 0;

    bool intersects(const Box& o) const;
    friend bool operator==(const Box&, const Box&) = default;
};

struct RoiSet {
    std::vector<Box> signal;
    Box background;

    // Throws ConfigError when a box leaves the image, is thinner than 2 px,
    // or the background overlaps a signal box.
    void validate(std::size_t height, std::size_t width) const;

    nlohmann::json to_json() const;
    static RoiSet from_json(const nlohmann::json& j);
    static RoiSet load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;
    friend bool operator==(const RoiSet&, const RoiSet&) = default;
};

struct BoxStats {
    double mean = 0, stddev = 0;  // sample standard deviation (n - 1)
};
BoxStats box_stats(const Image& img, const Box& b);

// 20*log10(mean of signal means / background std). A flat background gives
// +infinity; a negative mean of means throws RangeError.
double snr(const Image& img, const RoiSet& rois);

// 20*log10 of the mean over signal boxes of |mu_i - mu_b| / sqrt(s_i^2 + s_b^2).
// Boxes with a zero denominator are left out of the mean; if none remain it
// throws RangeError. All contrasts zero gives -infinity.
double cnr(const Image& img, const RoiSet& rois);

struct AutoRoiOptions {
    std::size_t count = 4;
    std::size_t signal_size = 0;     // 0 = max(2, min(h, w) / 16)
    double empty_threshold = 0.02;   // clean pixels at or below count as background
};

// Signal boxes on the brightest well-separated foreground spots of `clean`
// and the background on the largest empty rectangle found inside one of the
// four image quadrants. Throws ConfigError if the image cannot host them.
RoiSet auto_rois(const Image& clean, const AutoRoiOptions& opts = {});

// ---------------------------------------------------------------- reports

struct MetricRow {
    std::string name;
    std::optional<NoiseLevel> level;
    std::optional<double> psnr, ssim, snr, cnr;
};

struct Aggregate {
    double mean = 0, stddev = 0;  // sample standard deviation; 0 for one value
    std::size_t count = 0;
    std::size_t excluded = 0;  // infinite values left out
};

// metric name -> aggregate, for every metric with at least one row.
using AggregateTable = std::map<std::string, Aggregate>;

struct MetricReport {
    std::vector<MetricRow> rows;
    AggregateTable overall;
    std::map<std::string, AggregateTable> by_level;  // keyed by "low"/"mid"/"high"
    std::vector<std::string> warnings;

    nlohmann::json to_json() const;
};

Aggregate aggregate(const std::vector<double>& values);

// Recomputes overall (and per-level when `group_by_level`) aggregates from
// the rows, appending a warning for every infinite value left out.
void summarize(MetricReport& report, bool group_by_level);

struct EvalItem {
    std::string name;
    Image image;
    std::optional<Image> reference;
    std::optional<RoiSet> rois;
    std::optional<NoiseLevel> level;
};

using Denoiser = std::function<Image(const Image&)>;

struct EvalOptions {
    bool group_by_level = false;
    double peak = 1.0;
};

// Scores every item (after `model`, when given). An item with neither a
// reference nor ROIs is a UsageError.
MetricReport evaluate(const std::vector<EvalItem>& items, const EvalOptions& opts = {}, const Denoiser& model = {});

// Aligned text table of mean +/- std, one column per labelled report, one
// row block per group.
std::string format_table(const std::vector<std::pair<std::string, const MetricReport*>>& columns);

}  // namespace pamdn
