#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "pamdn/inference.hpp"
#include "pamdn/losses.hpp"
#include "pamdn/metrics.hpp"
#include "pamdn/model.hpp"
#include "pamdn/noise.hpp"

namespace pamdn::cli {

inline constexpr const char* kToolVersion = "0.3.0";
inline constexpr const char* kRunManifestName = "run_manifest.json";

// Everything needed to replay one command.
struct RunManifest {
    std::string command;
    nlohmann::json config = nlohmann::json::object();  // every option, by long flag name
    nlohmann::json seeds = nlohmann::json::object();
    std::vector<std::string> artifacts;                // paths relative to the output directory
    std::string extractor;                             // perceptual extractor provenance (train only)
    nlohmann::json extra = nlohmann::json::object();

    nlohmann::json to_json() const;
};

// Writes dir/run_manifest.json, replacing any earlier one.
void write_run_manifest(const std::filesystem::path& dir, const RunManifest& m);
RunManifest read_run_manifest(const std::filesystem::path& dir);

struct PhantomOptions {
    PhantomKind kind = PhantomKind::kVeins;
    std::size_t count = 1;
    std::size_t height = 64, width = 64;
    std::uint64_t seed = 0;
    std::filesystem::path out;
};
RunManifest cmd_phantom(const PhantomOptions& o);

struct SynthOptionsCli {
    std::filesystem::path clean_dir;
    std::vector<NoiseLevel> levels = {NoiseLevel::kLow, NoiseLevel::kMid, NoiseLevel::kHigh};
    std::size_t pairs_per_image = 1;
    std::size_t depth = kDefaultDepth;
    double pulse_sigma = kDefaultPulseSigma;
    double norm_percentile = 99.9;
    bool zero_noise = false;
    std::uint64_t seed = 0;
    std::filesystem::path out;
};
RunManifest cmd_synth(const SynthOptionsCli& o);

struct TrainOptionsCli {
    std::filesystem::path data;  // dataset manifest, or the directory holding manifest.json
    std::string scale = "1/8";
    long long steps = 2000;
    std::size_t batch = 8;
    double lr = 1e-4;
    std::uint64_t seed = 0;
    std::filesystem::path out;
    std::filesystem::path resume;
    long long checkpoint_every = 0;
    int d_steps = 1;
    std::filesystem::path extractor;
};
RunManifest cmd_train(const TrainOptionsCli& o, std::ostream& log);

struct DenoiseOptions {
    std::filesystem::path checkpoint;
    std::vector<std::filesystem::path> inputs;  // files or directories of PGMs
    std::filesystem::path out;
    std::size_t tile = 256;
    bool normalize = false;  // divide each input by its own 99.9th percentile first
};
RunManifest cmd_denoise(const DenoiseOptions& o);

struct EvalOptionsCli {
    std::filesystem::path data;          // dataset manifest (noisy + clean)
    std::filesystem::path images;        // or: a directory of images without references
    std::filesystem::path pred_dir;      // predictions named like the manifest's noisy files
    std::filesystem::path checkpoint;    // or: denoise the noisy inputs with this model
    std::filesystem::path rois;          // one RoiSet for every image
    bool auto_rois = false;              // per-image ROIs from the clean reference
    bool group_by_level = false;
    std::size_t tile = 256;
    std::filesystem::path out;
};
RunManifest cmd_eval(const EvalOptionsCli& o, std::ostream& table);

struct GradcheckOptionsCli {
    std::string scale = "1/8";
    std::size_t size = 16;
    std::uint64_t seed = 0;
    std::string corrupt;
    double tolerance = 1e-4;
};
// Prints one line per entry; returns false if any entry exceeds the tolerance.
bool cmd_gradcheck(const GradcheckOptionsCli& o, std::ostream& out);

struct BenchOptions {
    std::filesystem::path checkpoint;  // when empty, a freshly seeded model at `scale`
    std::string scale = "1/8";
    std::size_t size = 256;
    std::size_t repeat = 5;
    std::uint64_t seed = 0;
};
struct BenchResult {
    std::vector<double> seconds;
    double median = 0, min = 0, max = 0;
};
BenchResult cmd_bench(const BenchOptions& o, std::ostream& out);

// Loads every .pgm in a directory (sorted by name) or a single file.
std::vector<std::pair<std::string, Image>> load_images(const std::filesystem::path& path);

// Parses argv-style arguments and runs the chosen command. Returns the exit
// code: 0 on success, 1 for runtime failures (I/O, numerics, a failing
// self-check), 2 for invalid usage or configuration.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace pamdn::cli
