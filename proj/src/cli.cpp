#include "pamdn/cli.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include "CLI11.hpp"
#include "pamdn/error.hpp"
#include "pamdn/hash.hpp"
#include "pamdn/rng.hpp"
#include "pamdn/selfcheck.hpp"
#include "pamdn/trainer.hpp"

namespace pamdn::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string hex(std::uint64_t v) {
    std::ostringstream s;
    s << std::hex << std::setw(16) << std::setfill('0') << v;
    return s.str();
}

std::string indexed(const std::string& stem, std::size_t i) {
    std::ostringstream s;
    s << stem << "_" << std::setw(4) << std::setfill('0') << i << ".pgm";
    return s.str();
}

fs::path manifest_path(const fs::path& data) {
    return fs::is_directory(data) ? data / "manifest.json" : data;
}

json levels_json(const std::vector<NoiseLevel>& levels) {
    json a = json::array();
    for (NoiseLevel l : levels) a.push_back(to_string(l));
    return a;
}

void require_out(const fs::path& out) {
    if (out.empty()) throw UsageError("--out is required");
}

}  // namespace

// ---------------------------------------------------------------- manifest

json RunManifest::to_json() const {
    json j = {{"tool", "pamdn"},
              {"version", kToolVersion},
              {"command", command},
              {"config", config},
              {"seeds", seeds},
              {"artifacts", artifacts}};
    if (!extractor.empty()) j["perceptual_extractor"] = extractor;
    if (!extra.empty()) j["extra"] = extra;
    return j;
}

void write_run_manifest(const fs::path& dir, const RunManifest& m) {
    fs::create_directories(dir);
    std::ofstream out(dir / kRunManifestName);
    if (!out) throw IoError("cannot write " + (dir / kRunManifestName).string());
    out << m.to_json().dump(2) << "\n";
}

RunManifest read_run_manifest(const fs::path& dir) {
    std::ifstream in(dir / kRunManifestName);
    if (!in) throw IoError("cannot open " + (dir / kRunManifestName).string());
    try {
        json j;
        in >> j;
        RunManifest m;
        m.command = j.at("command").get<std::string>();
        m.config = j.at("config");
        m.seeds = j.at("seeds");
        m.artifacts = j.at("artifacts").get<std::vector<std::string>>();
        m.extractor = j.value("perceptual_extractor", "");
        m.extra = j.value("extra", json::object());
        return m;
    } catch (const json::exception& e) {
        throw IoError((dir / kRunManifestName).string() + ": " + e.what());
    }
}

std::vector<std::pair<std::string, Image>> load_images(const fs::path& path) {
    std::vector<std::pair<std::string, Image>> out;
    if (fs::is_directory(path)) {
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(path))
            if (e.is_regular_file() && e.path().extension() == ".pgm") files.push_back(e.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) out.emplace_back(f.filename().string(), read_pgm(f));
    } else if (fs::exists(path)) {
        out.emplace_back(path.filename().string(), read_pgm(path));
    } else {
        throw IoError("no such file or directory: " + path.string());
    }
    return out;
}

// ---------------------------------------------------------------- commands

RunManifest cmd_phantom(const PhantomOptions& o) {
    require_out(o.out);
    if (o.count == 0) throw ConfigError("--count must be positive");
    std::vector<Image> images;
    for (std::size_t i = 0; i < o.count; ++i)
        images.push_back(gen_phantom(PhantomSpec::defaults(o.kind, o.height, o.width, derive_seed(o.seed, i))));
    fs::create_directories(o.out);
    RunManifest m;
    m.command = "phantom";
    m.config = {{"kind", to_string(o.kind)}, {"count", o.count}, {"size", {o.height, o.width}},
                {"seed", o.seed},           {"out", o.out.string()}};
    m.seeds = {{"run", o.seed}, {"per_image", "derive_seed(seed, index)"}};
    for (std::size_t i = 0; i < images.size(); ++i) {
        const std::string name = indexed("phantom", i);
        write_pgm(o.out / name, images[i]);
        m.artifacts.push_back(name);
    }
    write_run_manifest(o.out, m);
    return m;
}

RunManifest cmd_synth(const SynthOptionsCli& o) {
    require_out(o.out);
    if (o.clean_dir.empty()) throw UsageError("--clean-dir is required");
    if (!fs::is_directory(o.clean_dir)) throw IoError("clean directory not found: " + o.clean_dir.string());
    const auto cleans = load_images(o.clean_dir);
    if (cleans.empty()) throw IoError("no .pgm images in " + o.clean_dir.string());
    std::vector<Image> imgs;
    for (const auto& [name, img] : cleans) imgs.push_back(img);

    FromImagesOptions fo;
    fo.levels = o.levels;
    fo.pairs_per_image = o.pairs_per_image;
    fo.seed = o.seed;
    fo.synth.depth = o.depth;
    fo.synth.pulse_sigma = o.pulse_sigma;
    fo.norm_percentile = o.norm_percentile;
    fo.zero_noise = o.zero_noise;
    const Dataset ds = synth_from_images(imgs, fo);
    const auto entries = save_dataset(o.out, ds);

    RunManifest m;
    m.command = "synth";
    m.config = {{"clean-dir", o.clean_dir.string()}, {"levels", levels_json(o.levels)},
                {"pairs-per-image", o.pairs_per_image}, {"depth", o.depth},
                {"pulse-sigma", o.pulse_sigma},       {"norm-percentile", o.norm_percentile},
                {"zero-noise", o.zero_noise},         {"seed", o.seed},
                {"out", o.out.string()}};
    m.seeds = {{"run", o.seed}, {"per_pair", "derive_seed(seed, (image * levels + level) * pairs + pair)"}};
    m.artifacts.push_back("manifest.json");
    json sources = json::array();
    for (const auto& [name, img] : cleans) sources.push_back(name);
    for (const auto& e : entries) {
        m.artifacts.push_back(e.clean_path);
        m.artifacts.push_back(e.noisy_path);
    }
    m.extra = {{"normalization_divisor", ds.norm}, {"clean_sources", sources}, {"pairs", entries.size()}};
    write_run_manifest(o.out, m);
    return m;
}

RunManifest cmd_train(const TrainOptionsCli& o, std::ostream& log) {
    require_out(o.out);
    if (o.data.empty()) throw UsageError("--data is required");
    TrainConfig cfg;
    cfg.adam.lr = o.lr;
    cfg.batch_size = o.batch;
    cfg.total_steps = o.steps;
    cfg.seed = o.seed;
    cfg.scale = Scale::parse(o.scale);
    cfg.manifest = manifest_path(o.data);
    cfg.out_dir = o.out;
    cfg.checkpoint_interval = o.checkpoint_every;
    cfg.d_steps_per_g_step = o.d_steps;
    cfg.extractor_dir = o.extractor;
    cfg.resume_from = o.resume;
    cfg.validate();

    const std::string extractor = make_extractor(cfg).describe();
    const long long every = std::max(1LL, o.steps / 20);
    const TrainState st = train(cfg, [&](const StepRecord& r, const TrainState&) {
        if ((r.step + 1) % every == 0 || r.step + 1 == o.steps)
            log << "step " << r.step + 1 << "/" << o.steps << "  sl1 " << r.smooth_l1 << "  perc " << r.perceptual
                << "  adv " << r.adv_g << "  d " << r.d_loss << "\n";
    });

    RunManifest m;
    m.command = "train";
    m.config = {{"data", o.data.string()},   {"scale", cfg.scale.str()}, {"steps", o.steps},
                {"batch", o.batch},          {"lr", o.lr},               {"seed", o.seed},
                {"out", o.out.string()},     {"resume", o.resume.string()},
                {"checkpoint-every", o.checkpoint_every}, {"d-steps", o.d_steps},
                {"extractor", o.extractor.string()}};
    m.seeds = {{"run", o.seed},
               {"generator", derive_seed(o.seed, 1)},
               {"discriminator", derive_seed(o.seed, 2)},
               {"extractor", o.extractor.empty() ? json(derive_seed(o.seed, 3)) : json(nullptr)},
               {"batches", derive_seed(o.seed, 4)}};
    m.extractor = extractor;
    m.artifacts.push_back("train_log.jsonl");
    if (o.checkpoint_every > 0)
        for (long long s = o.checkpoint_every; s < o.steps; s += o.checkpoint_every)
            if (fs::exists(o.out / ("step_" + std::to_string(s)))) m.artifacts.push_back("step_" + std::to_string(s));
    m.artifacts.push_back("final");
    m.extra = {{"adam", {{"beta1", cfg.adam.beta1}, {"beta2", cfg.adam.beta2}, {"eps", cfg.adam.eps}}},
               {"final_fingerprint", hex(state_fingerprint(st))}};
    write_run_manifest(o.out, m);
    return m;
}

RunManifest cmd_denoise(const DenoiseOptions& o) {
    require_out(o.out);
    if (o.checkpoint.empty()) throw UsageError("--checkpoint is required");
    if (o.inputs.empty()) throw UsageError("--in is required");
    if (!fs::exists(o.checkpoint)) throw IoError("checkpoint not found: " + o.checkpoint.string());
    const TrainState st = load_checkpoint(o.checkpoint);
    TileOptions to;
    to.tile = o.tile;

    std::vector<std::pair<std::string, Image>> images;
    for (const auto& in : o.inputs)
        for (auto& item : load_images(in)) images.push_back(std::move(item));
    fs::create_directories(o.out);

    RunManifest m;
    m.command = "denoise";
    json ins = json::array();
    for (const auto& p : o.inputs) ins.push_back(p.string());
    m.config = {{"checkpoint", o.checkpoint.string()}, {"in", ins},           {"out", o.out.string()},
                {"tile", o.tile},                      {"normalize", o.normalize}};
    m.seeds = {{"generator", st.g.seed()}};
    json divisors = json::object();
    for (auto& [name, img] : images) {
        const fs::path target = o.out / name;
        for (const auto& in : o.inputs)
            if (fs::exists(target) && fs::equivalent(target, fs::is_directory(in) ? in / name : in))
                throw ConfigError("refusing to overwrite input " + target.string());
        if (o.normalize) {
            const double d = percentile(img.pixels, 99.9);
            const double div = d > 0 ? d : 1.0;
            for (double& v : img.pixels) v = std::clamp(v / div, 0.0, 1.0);
            divisors[name] = div;
        }
        write_pgm(target, denoise_tiled(st.g, img, to));
        m.artifacts.push_back(name);
    }
    m.extra = {{"checkpoint_fingerprint", hex(state_fingerprint(st))}, {"scale", st.g.scale().str()}};
    if (o.normalize) m.extra["normalization"] = {{"percentile", 99.9}, {"divisors", divisors}};
    write_run_manifest(o.out, m);
    return m;
}

RunManifest cmd_eval(const EvalOptionsCli& o, std::ostream& table) {
    require_out(o.out);
    if (o.data.empty() && o.images.empty()) throw UsageError("pass --data (with references) or --images");
    if (!o.data.empty() && !o.images.empty()) throw UsageError("--data and --images are exclusive");
    if (!o.pred_dir.empty() && !o.checkpoint.empty()) throw UsageError("--pred-dir and --checkpoint are exclusive");
    if (!o.images.empty() && o.rois.empty())
        throw UsageError("images without references need --rois for SNR/CNR");
    if (o.auto_rois && o.data.empty()) throw UsageError("--auto-rois places boxes from clean references; needs --data");
    if (o.auto_rois && !o.rois.empty()) throw UsageError("--rois and --auto-rois are exclusive");

    std::optional<RoiSet> shared;
    if (!o.rois.empty()) shared = RoiSet::load(o.rois);

    std::vector<EvalItem> items;
    if (!o.data.empty()) {
        const fs::path mf = manifest_path(o.data);
        const fs::path dir = mf.parent_path();
        for (const auto& e : read_manifest(mf)) {
            EvalItem it;
            it.name = e.noisy_path;
            it.image = read_pgm(dir / e.noisy_path);
            it.reference = read_pgm(dir / e.clean_path);
            it.level = e.level;
            if (shared) it.rois = shared;
            if (o.auto_rois) it.rois = auto_rois(*it.reference);
            items.push_back(std::move(it));
        }
    } else {
        for (auto& [name, img] : load_images(o.images)) {
            EvalItem it;
            it.name = name;
            it.image = std::move(img);
            it.rois = shared;
            items.push_back(std::move(it));
        }
    }

    EvalOptions eo;
    eo.group_by_level = o.group_by_level;
    std::vector<std::pair<std::string, MetricReport>> reports;
    reports.emplace_back(o.data.empty() ? "input" : "noisy input", evaluate(items, eo));

    RunManifest m;
    m.command = "eval";
    if (!o.pred_dir.empty()) {
        std::vector<EvalItem> pred = items;
        for (auto& it : pred) it.image = read_pgm(o.pred_dir / fs::path(it.name).filename());
        reports.emplace_back("prediction", evaluate(pred, eo));
    } else if (!o.checkpoint.empty()) {
        const TrainState st = load_checkpoint(o.checkpoint);
        TileOptions to;
        to.tile = o.tile;
        reports.emplace_back("denoised", evaluate(items, eo, [&](const Image& x) { return denoise_tiled(st.g, x, to); }));
        m.extra["checkpoint_fingerprint"] = hex(state_fingerprint(st));
        m.seeds = {{"generator", st.g.seed()}};
    }

    json columns = json::object();
    std::vector<std::pair<std::string, const MetricReport*>> cols;
    for (const auto& [label, rep] : reports) {
        columns[label] = rep.to_json();
        cols.emplace_back(label, &rep);
    }
    const std::string text = format_table(cols);
    fs::create_directories(o.out);
    {
        std::ofstream j(o.out / "report.json");
        if (!j) throw IoError("cannot write " + (o.out / "report.json").string());
        j << json{{"columns", columns}}.dump(2) << "\n";
        std::ofstream t(o.out / "report.txt");
        t << text;
    }
    table << text;
    for (const auto& [label, rep] : reports)
        for (const auto& w : rep.warnings) table << "warning (" << label << "): " << w << "\n";

    m.config = {{"data", o.data.string()},     {"images", o.images.string()},
                {"pred-dir", o.pred_dir.string()}, {"checkpoint", o.checkpoint.string()},
                {"rois", o.rois.string()},     {"auto-rois", o.auto_rois},
                {"group-by-level", o.group_by_level}, {"tile", o.tile},
                {"out", o.out.string()}};
    m.artifacts = {"report.json", "report.txt"};
    write_run_manifest(o.out, m);
    return m;
}

bool cmd_gradcheck(const GradcheckOptionsCli& o, std::ostream& out) {
    GradcheckSuiteOptions so;
    so.scale = Scale::parse(o.scale);
    so.size = o.size;
    so.seed = o.seed;
    so.corrupt = o.corrupt;
    const auto entries = gradcheck_suite(so);
    bool ok = true;
    std::size_t width = 0;
    for (const auto& e : entries) width = std::max(width, e.name.size());
    for (const auto& e : entries) {
        const bool pass = e.max_rel_error < o.tolerance;
        ok = ok && pass;
        out << std::left << std::setw(static_cast<int>(width) + 2) << e.name << std::scientific << std::setprecision(3)
            << e.max_rel_error << (pass ? "  ok" : "  FAIL") << "\n";
    }
    out << std::defaultfloat << entries.size() << " entries, " << (ok ? "all" : "not all") << " below " << o.tolerance
        << "\n";
    return ok;
}

BenchResult cmd_bench(const BenchOptions& o, std::ostream& out) {
    if (o.repeat == 0) throw ConfigError("--repeat must be positive");
    if (o.size == 0) throw ConfigError("--size must be positive");
    const Generator g = o.checkpoint.empty() ? Generator::build(derive_seed(o.seed, 1), Scale::parse(o.scale))
                                             : load_checkpoint(o.checkpoint).g;
    std::mt19937_64 rng(o.seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Image img(o.size, o.size);
    for (double& v : img.pixels) v = u(rng);

    BenchResult r;
    for (std::size_t i = 0; i < o.repeat; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        denoise_whole(g, img);
        r.seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
        out << "run " << i + 1 << "  " << std::fixed << std::setprecision(4) << r.seconds.back() << " s\n";
    }
    std::vector<double> sorted = r.seconds;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();
    r.median = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    r.min = sorted.front();
    r.max = sorted.back();
    out << "median " << r.median << " s  min " << r.min << " s  max " << r.max << " s  (" << o.size << "x" << o.size
        << ", scale " << g.scale().str() << ")\n"
        << std::defaultfloat;
    return r;
}

// ---------------------------------------------------------------- parsing

namespace {

// Reads a flat JSON object of option values. A run manifest works too: its
// "config" member is used, so any output directory can be replayed. CLI11
// only reads config files at the top level, so every key is routed to the
// subcommand that was given on the command line.
class JsonConfig : public CLI::Config {
public:
    explicit JsonConfig(const CLI::App* app) : app_(app) {}

    std::string to_config(const CLI::App*, bool, bool, std::string) const override { return "{}"; }

    std::vector<CLI::ConfigItem> from_config(std::istream& in) const override {
        json j;
        try {
            in >> j;
        } catch (const json::exception& e) {
            throw CLI::ConversionError(std::string("config file is not valid JSON: ") + e.what());
        }
        if (j.is_object() && j.contains("config") && j.contains("command")) j = j["config"];
        if (!j.is_object()) throw CLI::ConversionError("config file must hold a JSON object");
        const auto subs = app_->get_subcommands();
        std::vector<CLI::ConfigItem> items;
        for (const auto& [key, value] : j.items()) {
            CLI::ConfigItem item;
            item.name = key;
            if (!subs.empty()) item.parents = {subs.front()->get_name()};
            auto text = [](const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); };
            if (value.is_null()) continue;
            if (value.is_array()) {
                for (const auto& v : value) item.inputs.push_back(text(v));
                if (item.inputs.empty()) continue;
            } else {
                const std::string s = text(value);
                if (s.empty()) continue;  // an unset path in a replayed manifest
                item.inputs.push_back(s);
            }
            items.push_back(std::move(item));
        }
        return items;
    }

private:
    const CLI::App* app_;
};

std::vector<NoiseLevel> parse_levels(const std::vector<std::string>& names) {
    std::vector<NoiseLevel> out;
    for (const auto& n : names) out.push_back(parse_noise_level(n));
    if (out.empty()) throw ConfigError("--levels needs at least one level");
    return out;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Photoacoustic MAP de-noising: synthesis, training, inference and evaluation", "pamdn"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(kToolVersion));
    app.set_config("--config", "", "JSON file supplying option values; command-line values take precedence");
    app.config_formatter(std::make_shared<JsonConfig>(&app));
    app.allow_config_extras(CLI::config_extras_mode::error);
    app.fallthrough();  // lets --config follow the subcommand name

    PhantomOptions ph;
    std::string ph_kind = "veins";
    std::vector<std::size_t> ph_size = {64, 64};
    auto* s_ph = app.add_subcommand("phantom", "Generate clean vascular phantom images");
    s_ph->add_option("--kind", ph_kind, "veins or vessels")->capture_default_str();
    s_ph->add_option("--count", ph.count, "Number of images")->capture_default_str();
    s_ph->add_option("--size", ph_size, "Height and width (one value for square)")->expected(1, 2);
    s_ph->add_option("--seed", ph.seed)->capture_default_str();
    s_ph->add_option("--out", ph.out, "Output directory");

    SynthOptionsCli sy;
    std::vector<std::string> sy_levels = {"low", "mid", "high"};
    auto* s_sy = app.add_subcommand("synth", "Make noisy/clean pairs from clean images");
    s_sy->add_option("--clean-dir", sy.clean_dir, "Directory of clean PGM images");
    s_sy->add_option("--levels", sy_levels, "Noise levels")->delimiter(',');
    s_sy->add_option("--pairs-per-image", sy.pairs_per_image)->capture_default_str();
    s_sy->add_option("--depth", sy.depth, "A-line samples per pixel")->capture_default_str();
    s_sy->add_option("--pulse-sigma", sy.pulse_sigma)->capture_default_str();
    s_sy->add_option("--norm-percentile", sy.norm_percentile)->capture_default_str();
    s_sy->add_flag("--zero-noise", sy.zero_noise, "Debug: synthesize without any noise");
    s_sy->add_option("--seed", sy.seed)->capture_default_str();
    s_sy->add_option("--out", sy.out);

    TrainOptionsCli tr;
    auto* s_tr = app.add_subcommand("train", "Train the generator and discriminator");
    s_tr->add_option("--data", tr.data, "Dataset manifest or its directory");
    s_tr->add_option("--scale", tr.scale, "Filter-count multiplier, e.g. 1/8")->capture_default_str();
    s_tr->add_option("--steps", tr.steps)->capture_default_str();
    s_tr->add_option("--batch", tr.batch)->capture_default_str();
    s_tr->add_option("--lr", tr.lr)->capture_default_str();
    s_tr->add_option("--seed", tr.seed)->capture_default_str();
    s_tr->add_option("--out", tr.out);
    s_tr->add_option("--resume", tr.resume, "Checkpoint directory to continue from");
    s_tr->add_option("--checkpoint-every", tr.checkpoint_every)->capture_default_str();
    s_tr->add_option("--d-steps", tr.d_steps, "Discriminator updates per generator update")->capture_default_str();
    s_tr->add_option("--extractor", tr.extractor, "Perceptual extractor weights directory");

    DenoiseOptions dn;
    std::vector<std::string> dn_in;
    auto* s_dn = app.add_subcommand("denoise", "De-noise images with a trained checkpoint");
    s_dn->add_option("--checkpoint", dn.checkpoint);
    s_dn->add_option("--in", dn_in, "Input PGM files or directories");
    s_dn->add_option("--out", dn.out);
    s_dn->add_option("--tile", dn.tile)->capture_default_str();
    s_dn->add_flag("--normalize", dn.normalize, "Divide each input by its 99.9th percentile first");

    EvalOptionsCli ev;
    auto* s_ev = app.add_subcommand("eval", "Quality metrics, optionally grouped by noise level");
    s_ev->add_option("--data", ev.data, "Dataset manifest or its directory");
    s_ev->add_option("--images", ev.images, "Directory of images without references");
    s_ev->add_option("--pred-dir", ev.pred_dir, "Predictions named like the noisy inputs");
    s_ev->add_option("--checkpoint", ev.checkpoint, "De-noise the inputs with this checkpoint");
    s_ev->add_option("--rois", ev.rois, "ROI JSON applied to every image");
    s_ev->add_flag("--auto-rois", ev.auto_rois, "Place ROIs from each clean reference");
    s_ev->add_flag("--group-by-level", ev.group_by_level);
    s_ev->add_option("--tile", ev.tile)->capture_default_str();
    s_ev->add_option("--out", ev.out);

    GradcheckOptionsCli gc;
    auto* s_gc = app.add_subcommand("gradcheck", "Finite-difference check of every layer and both networks");
    s_gc->add_option("--scale", gc.scale)->capture_default_str();
    s_gc->add_option("--size", gc.size)->capture_default_str();
    s_gc->add_option("--seed", gc.seed)->capture_default_str();
    s_gc->add_option("--tolerance", gc.tolerance)->capture_default_str();
    s_gc->add_option("--corrupt", gc.corrupt, "Test fixture: break one entry's backward pass")->group("");

    BenchOptions bn;
    auto* s_bn = app.add_subcommand("bench", "Time whole-image inference");
    s_bn->add_option("--checkpoint", bn.checkpoint, "Checkpoint; a seeded model at --scale otherwise");
    s_bn->add_option("--scale", bn.scale)->capture_default_str();
    s_bn->add_option("--size", bn.size)->capture_default_str();
    s_bn->add_option("--repeat", bn.repeat)->capture_default_str();
    s_bn->add_option("--seed", bn.seed)->capture_default_str();

    std::vector<std::string> storage = {"pamdn"};
    storage.insert(storage.end(), args.begin(), args.end());
    std::vector<char*> argv;
    for (auto& s : storage) argv.push_back(s.data());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 2;
    }

    try {
        if (s_ph->parsed()) {
            ph.kind = parse_phantom_kind(ph_kind);
            ph.height = ph_size.at(0);
            ph.width = ph_size.size() > 1 ? ph_size[1] : ph_size[0];
            const auto m = cmd_phantom(ph);
            out << "wrote " << m.artifacts.size() << " phantoms to " << ph.out.string() << "\n";
        } else if (s_sy->parsed()) {
            sy.levels = parse_levels(sy_levels);
            const auto m = cmd_synth(sy);
            out << "wrote " << m.extra["pairs"] << " pairs to " << sy.out.string() << "\n";
        } else if (s_tr->parsed()) {
            cmd_train(tr, out);
            out << "final checkpoint in " << (tr.out / "final").string() << "\n";
        } else if (s_dn->parsed()) {
            for (const auto& p : dn_in) dn.inputs.emplace_back(p);
            const auto m = cmd_denoise(dn);
            out << "wrote " << m.artifacts.size() << " images to " << dn.out.string() << "\n";
        } else if (s_ev->parsed()) {
            cmd_eval(ev, out);
        } else if (s_gc->parsed()) {
            return cmd_gradcheck(gc, out) ? 0 : 1;
        } else if (s_bn->parsed()) {
            cmd_bench(bn, out);
        }
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const RangeError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace pamdn::cli
