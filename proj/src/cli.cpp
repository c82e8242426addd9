#include "voxsr/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "voxsr/gap.hpp"
#include "voxsr/intensity_match.hpp"
#include "voxsr/linear_sr.hpp"
#include "voxsr/log.hpp"
#include "voxsr/metrics.hpp"
#include "voxsr/phantom.hpp"
#include "voxsr/pyramid.hpp"
#include "voxsr/registration.hpp"
#include "voxsr/sampler.hpp"
#include "voxsr/store.hpp"
#include "voxsr/tiled_infer.hpp"
#include "voxsr/types.hpp"
#include "voxsr/volume_io.hpp"
#include "voxsr/volume_ops.hpp"

namespace voxsr {
namespace {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Small parsing helpers. Multi-component values are single comma-separated
// tokens ("--dims 320,160,96") so every option takes exactly one argument and
// the take-last override policy is unambiguous.
// ---------------------------------------------------------------------------

std::vector<std::string> split_commas(const std::string& s) {
    std::vector<std::string> parts;
    std::size_t start = 0;
    while (true) {
        std::size_t pos = s.find(',', start);
        if (pos == std::string::npos) {
            parts.push_back(s.substr(start));
            break;
        }
        parts.push_back(s.substr(start, pos - start));
        start = pos + 1;
    }
    return parts;
}

u64 parse_u64_token(const std::string& s, const char* flag) {
    u64 v = 0;
    const char* b = s.data();
    const char* e = b + s.size();
    auto [p, ec] = std::from_chars(b, e, v);
    if (ec != std::errc() || p != e)
        fail(ErrorKind::config, "cli", std::string(flag) + ": expected a non-negative integer, got \"" + s + "\"");
    return v;
}

double parse_double_token(const std::string& s, const char* flag) {
    double v = 0;
    const char* b = s.data();
    const char* e = b + s.size();
    auto [p, ec] = std::from_chars(b, e, v);
    if (ec != std::errc() || p != e)
        fail(ErrorKind::config, "cli", std::string(flag) + ": expected a number, got \"" + s + "\"");
    return v;
}

// One component replicates to a cube; otherwise exactly three (z,y,x).
Dims3 parse_dims(const std::string& s, const char* flag) {
    auto parts = split_commas(s);
    Dims3 d;
    if (parts.size() == 1) {
        u64 v = parse_u64_token(parts[0], flag);
        d = {v, v, v};
    } else if (parts.size() == 3) {
        d = {parse_u64_token(parts[0], flag), parse_u64_token(parts[1], flag),
             parse_u64_token(parts[2], flag)};
    } else {
        fail(ErrorKind::config, "cli",
             std::string(flag) + ": expected 1 or 3 comma-separated values");
    }
    if (d.z == 0 || d.y == 0 || d.x == 0)
        fail(ErrorKind::config, "cli", std::string(flag) + ": components must be positive");
    return d;
}

Vec3d parse_vec3d(const std::string& s, const char* flag) {
    auto parts = split_commas(s);
    if (parts.size() == 1) {
        double v = parse_double_token(parts[0], flag);
        return {v, v, v};
    }
    if (parts.size() != 3)
        fail(ErrorKind::config, "cli", std::string(flag) + ": expected 1 or 3 comma-separated values");
    return {parse_double_token(parts[0], flag), parse_double_token(parts[1], flag),
            parse_double_token(parts[2], flag)};
}

int scale_to_level(int scale) {
    switch (scale) {
        case 1: return 0;
        case 2: return 1;
        case 4: return 2;
        case 8: return 3;
        default:
            fail(ErrorKind::config, "cli",
                 "--scale must be one of 1, 2, 4, 8 to address a pyramid level (got " +
                     std::to_string(scale) + ")");
    }
}

nlohmann::json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::config, "cli", "cannot open config file " + path);
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::config, "cli", "bad JSON in " + path + ": " + e.what());
    }
}

ordered_json dims_json(const Dims3& d) { return ordered_json::array({d.z, d.y, d.x}); }
ordered_json spacing_json(const Spacing3& s) { return ordered_json::array({s.z, s.y, s.x}); }

void emit_text(const std::string& out_path, std::string text) {
    if (text.empty() || text.back() != '\n') text.push_back('\n');
    if (out_path.empty()) {
        std::fwrite(text.data(), 1, text.size(), stdout);
        std::fflush(stdout);
        return;
    }
    std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::storage, "cli", "cannot write report to " + out_path);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) fail(ErrorKind::storage, "cli", "short write to " + out_path);
}

void emit_json(const std::string& out_path, const ordered_json& j) { emit_text(out_path, j.dump(2)); }

void write_u16_blob(const fs::path& path, const std::vector<u16>& data) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::storage, "cli", "cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size() * sizeof(u16)));
    if (!out) fail(ErrorKind::storage, "cli", "short write to " + path.string());
}

// Prepares an output directory: refuses to reuse a non-empty one unless
// --overwrite, in which case the old contents are removed.
void prepare_out_dir(const fs::path& dir, bool overwrite) {
    if (fs::exists(dir)) {
        if (!fs::is_directory(dir))
            fail(ErrorKind::storage, "cli", dir.string() + " exists and is not a directory");
        if (!fs::is_empty(dir)) {
            if (!overwrite)
                fail(ErrorKind::storage, "cli",
                     dir.string() + " is not empty; pass --overwrite to replace it");
            fs::remove_all(dir);
        }
    }
    fs::create_directories(dir);
}

void require_exists(const std::string& path, const char* what) {
    if (!fs::exists(path))
        fail(ErrorKind::config, "cli", std::string(what) + " not found: " + path);
}

// ---------------------------------------------------------------------------
// Global options shared by every subcommand.
// ---------------------------------------------------------------------------

struct GlobalOpts {
    u64 seed = 0;
    bool seed_set = false;
    int threads = 0;
    bool dry_run = false;
    bool overwrite = false;
    std::string out;  // report destination; empty = stdout
    std::vector<std::string> config_files;
};

void apply_globals(const GlobalOpts& g) {
#ifdef _OPENMP
    if (g.threads > 0) omp_set_num_threads(g.threads);
#endif
    (void)g;
}

bool emit_dry_run(const GlobalOpts& g, const char* command, std::string out_path) {
    if (!g.dry_run) return false;
    emit_json(out_path, ordered_json{{"command", command}, {"dry_run", true}, {"valid", true}});
    return true;
}

// ---------------------------------------------------------------------------
// PhantomSpec / DegradeSpec as JSON (used by --config files for `gap` and by
// the phantom flags below).
// ---------------------------------------------------------------------------

PhantomKind parse_phantom_kind(const std::string& s) {
    if (s == "tubes") return PhantomKind::tubes;
    if (s == "trabecular") return PhantomKind::trabecular;
    fail(ErrorKind::config, "cli", "unknown phantom kind \"" + s + "\" (tubes or trabecular)");
}

Dims3 dims_from_json(const nlohmann::json& j, const char* what) {
    if (j.is_number_unsigned() || j.is_number_integer()) {
        u64 v = j.get<u64>();
        return {v, v, v};
    }
    if (j.is_array() && j.size() == 3)
        return {j[0].get<u64>(), j[1].get<u64>(), j[2].get<u64>()};
    fail(ErrorKind::config, "cli", std::string(what) + ": expected an integer or a [z,y,x] array");
}

PhantomSpec phantom_spec_from_json(const nlohmann::json& j) {
    PhantomSpec s;
    if (!j.is_object()) fail(ErrorKind::config, "cli", "phantom spec must be a JSON object");
    if (j.contains("kind")) s.kind = parse_phantom_kind(j.at("kind").get<std::string>());
    if (j.contains("dims")) s.dims = dims_from_json(j.at("dims"), "phantom dims");
    if (j.contains("seed")) s.seed = j.at("seed").get<u64>();
    if (j.contains("canal_density")) s.canal_density = j.at("canal_density").get<double>();
    if (j.contains("radius_min")) s.radius_min = j.at("radius_min").get<double>();
    if (j.contains("radius_max")) s.radius_max = j.at("radius_max").get<double>();
    if (j.contains("drift_amplitude")) s.drift_amplitude = j.at("drift_amplitude").get<double>();
    if (j.contains("cosine_count")) s.cosine_count = j.at("cosine_count").get<int>();
    if (j.contains("threshold")) s.threshold = j.at("threshold").get<double>();
    if (j.contains("smooth_passes")) s.smooth_passes = j.at("smooth_passes").get<int>();
    return s;
}

DegradeSpec degrade_spec_from_json(const nlohmann::json& j) {
    DegradeSpec s;
    if (!j.is_object()) fail(ErrorKind::config, "cli", "degrade spec must be a JSON object");
    if (j.contains("scale")) s.scale = j.at("scale").get<int>();
    if (j.contains("blur_sigma")) s.blur_sigma = j.at("blur_sigma").get<double>();
    if (j.contains("gamma")) s.gamma = j.at("gamma").get<double>();
    if (j.contains("gain")) s.gain = j.at("gain").get<double>();
    if (j.contains("noise_sigma")) s.noise_sigma = j.at("noise_sigma").get<double>();
    if (j.contains("shift")) {
        const auto& sh = j.at("shift");
        if (!sh.is_array() || sh.size() != 3)
            fail(ErrorKind::config, "cli", "degrade shift: expected a [z,y,x] array");
        s.shift = {sh[0].get<double>(), sh[1].get<double>(), sh[2].get<double>()};
    }
    if (j.contains("drift_amplitude")) s.drift_amplitude = j.at("drift_amplitude").get<double>();
    if (j.contains("drift_cycles")) s.drift_cycles = j.at("drift_cycles").get<double>();
    if (j.contains("seed")) s.seed = j.at("seed").get<u64>();
    return s;
}

// ---------------------------------------------------------------------------
// --config expansion: each config file is a flat JSON object whose entries
// become long-option tokens injected right after the subcommand name, so
// explicit command-line flags always win under the take-last policy.
// ---------------------------------------------------------------------------

std::vector<std::string> config_tokens(const nlohmann::json& obj, const std::string& path) {
    if (!obj.is_object())
        fail(ErrorKind::config, "cli", "config file " + path + " must hold a JSON object");
    std::vector<std::string> tokens;
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        std::string name = "--" + it.key();
        const auto& v = it.value();
        if (v.is_boolean()) {
            if (v.get<bool>()) tokens.push_back(name);
            continue;
        }
        std::string sval;
        if (v.is_string()) {
            sval = v.get<std::string>();
        } else if (v.is_array()) {
            for (std::size_t i = 0; i < v.size(); ++i) {
                if (i) sval += ',';
                sval += v[i].is_string() ? v[i].get<std::string>() : v[i].dump();
            }
        } else {
            sval = v.dump();
        }
        tokens.push_back(std::move(name));
        tokens.push_back(std::move(sval));
    }
    return tokens;
}

std::vector<std::string> expand_config_args(const std::vector<std::string>& args) {
    std::vector<std::string> injected;
    for (std::size_t i = 1; i < args.size(); ++i) {
        std::string path;
        if (args[i] == "--config" && i + 1 < args.size())
            path = args[i + 1];
        else if (args[i].rfind("--config=", 0) == 0)
            path = args[i].substr(9);
        else
            continue;
        auto tokens = config_tokens(load_json_file(path), path);
        injected.insert(injected.end(), tokens.begin(), tokens.end());
    }
    if (injected.empty()) return args;
    std::vector<std::string> full;
    full.reserve(args.size() + injected.size());
    full.push_back(args[0]);
    full.insert(full.end(), injected.begin(), injected.end());
    full.insert(full.end(), args.begin() + 1, args.end());
    return full;
}

// ---------------------------------------------------------------------------
// Shared option blocks.
// ---------------------------------------------------------------------------

struct IngestOpts {
    std::string in, sidecar, store, group = "HR", chunk;
    double clip_low = 0.1, clip_high = 99.9;
    int mask_threshold = -1;
    int deflate = 0;
    int max_factor = 1;  // pack raises this
};

struct SamplerOpts {
    std::string store;
    std::string lr_group = "REG", hr_group = "HR";
    int lr_level = 0, hr_level = 0;
    int scale = 4;
    std::string patch = "32";
    int workers = 1, threads_per_worker = 1;
    std::size_t queue_capacity = 4;
    double foreground_floor = 0.05;
    std::size_t max_rejects = 1000;
    std::size_t epoch_size = 0;  // 0: match the requested pair count
    std::size_t z_begin = 0, z_end = 0;
    bool no_augment = false, no_flips = false, no_rotations = false, no_intensity = false;
};

void add_sampler_options(CLI::App* cmd, SamplerOpts& o) {
    cmd->add_option("--store", o.store, "pyramid store holding the LR/HR groups")->required();
    cmd->add_option("--lr-group", o.lr_group, "LR group name (default REG)");
    cmd->add_option("--lr-level", o.lr_level, "LR pyramid level");
    cmd->add_option("--hr-group", o.hr_group, "HR group name");
    cmd->add_option("--hr-level", o.hr_level, "HR pyramid level");
    cmd->add_option("--scale", o.scale, "SR factor between the two levels");
    cmd->add_option("--patch", o.patch, "LR patch dims, one value or z,y,x");
    cmd->add_option("--workers", o.workers, "producer workers");
    cmd->add_option("--threads-per-worker", o.threads_per_worker, "producer threads per worker");
    cmd->add_option("--queue-capacity", o.queue_capacity, "patches buffered per producer");
    cmd->add_option("--foreground-floor", o.foreground_floor,
                    "min fraction of HR patch voxels above zero");
    cmd->add_option("--max-rejects", o.max_rejects, "rejection attempts per patch");
    cmd->add_option("--epoch-size", o.epoch_size, "descriptor epoch size (0: pair count)");
    cmd->add_option("--z-begin", o.z_begin, "first LR slice of the sampling range");
    cmd->add_option("--z-end", o.z_end, "one past the last LR slice (0: volume depth)");
    cmd->add_flag("--no-augment", o.no_augment, "disable all augmentation");
    cmd->add_flag("--no-flips", o.no_flips, "disable axis flips");
    cmd->add_flag("--no-rotations", o.no_rotations, "disable cube rotations");
    cmd->add_flag("--no-intensity", o.no_intensity, "disable contrast/gain jitter");
}

SamplerConfig make_sampler_config(const SamplerOpts& o, const GlobalOpts& g,
                                  std::size_t pair_count) {
    SamplerConfig cfg;
    cfg.workers = o.workers;
    cfg.threads_per_worker = o.threads_per_worker;
    cfg.queue_capacity = o.queue_capacity;
    cfg.seed = g.seed;
    cfg.scale = o.scale;
    cfg.lr_patch = parse_dims(o.patch, "--patch");
    cfg.foreground_floor = o.foreground_floor;
    cfg.max_rejects = o.max_rejects;
    cfg.augment = !o.no_augment;
    cfg.flips = !o.no_flips;
    cfg.rotations = !o.no_rotations;
    cfg.intensity = !o.no_intensity;
    cfg.epoch_size = o.epoch_size ? o.epoch_size : std::max<std::size_t>(pair_count, 1);
    return cfg;
}

SampleSource make_source(const PyramidStore& store, const SamplerOpts& o) {
    SampleSource src;
    src.store = &store;
    src.lr_group = o.lr_group;
    src.lr_level = o.lr_level;
    src.hr_group = o.hr_group;
    src.hr_level = o.hr_level;
    src.z_begin = o.z_begin;
    src.z_end = o.z_end;
    return src;
}

Dims3 chunk_or_default(const std::string& chunk, const std::string& group) {
    if (!chunk.empty()) return parse_dims(chunk, "--chunk");
    return group == "HR" ? PyramidStore::kDefaultHrChunk : PyramidStore::kDefaultLrChunk;
}

// ---------------------------------------------------------------------------
// Subcommand handlers.
// ---------------------------------------------------------------------------

void run_ingest(const IngestOpts& o, const GlobalOpts& g, const char* command) {
    apply_globals(g);
    require_exists(o.in, "input volume");
    Dims3 chunk = chunk_or_default(o.chunk, o.group);
    if (emit_dry_run(g, command, g.out)) return;

    RawVolume raw;
    if (fs::is_directory(o.in)) {
        raw = read_slice_stack(o.in);
    } else {
        fs::path sidecar = o.sidecar.empty()
                               ? fs::path(o.in).replace_extension(".json")
                               : fs::path(o.sidecar);
        raw = read_raw_volume(o.in, sidecar);
    }
    Volume v = clip_normalize(raw, o.clip_low, o.clip_high);
    if (o.mask_threshold >= 0)
        threshold_mask(v, static_cast<u16>(std::min(o.mask_threshold, 65535)));

    std::vector<Volume> levels;
    if (o.max_factor > 1)
        levels = build_pyramid(v, o.max_factor);
    else
        levels.push_back(std::move(v));

    StoreCompression comp{o.deflate > 0, o.deflate > 0 ? o.deflate : 6};
    PyramidStore store = PyramidStore::create(o.store);
    store.write_group(o.group, levels, chunk, g.overwrite, comp);

    ordered_json rep{{"command", command},
                     {"store", o.store},
                     {"group", o.group},
                     {"levels", levels.size()},
                     {"dims", dims_json(levels[0].dims)},
                     {"spacing_um", spacing_json(levels[0].spacing)}};
    emit_json(g.out, rep);
}

struct PyramidOpts {
    std::string store, group = "HR", chunk;
    int max_factor = 8;
};

void run_pyramid(const PyramidOpts& o, const GlobalOpts& g) {
    apply_globals(g);
    require_exists(o.store, "store");
    if (emit_dry_run(g, "pyramid", g.out)) return;

    PyramidStore store = PyramidStore::open(o.store);
    LevelMeta meta = store.level_meta(o.group, 0);
    Volume base = store.read_level(o.group, 0);
    std::vector<Volume> pyr = build_pyramid(base, o.max_factor);
    Dims3 chunk = o.chunk.empty() ? meta.chunks : parse_dims(o.chunk, "--chunk");
    StoreCompression comp{meta.deflate, meta.deflate_level};
    store.write_group(o.group, pyr, chunk, /*overwrite=*/true, comp);

    ordered_json level_dims = ordered_json::array();
    for (const Volume& v : pyr) level_dims.push_back(dims_json(v.dims));
    emit_json(g.out, ordered_json{{"command", "pyramid"},
                                  {"group", o.group},
                                  {"levels", pyr.size()},
                                  {"level_dims", level_dims}});
}

struct RegisterOpts {
    std::string store, hr_group = "HR", lr_group = "LR", out_group = "REG";
    int scale = 4;
    double radius = 8.0;
    bool affine = false;
    std::string transform, chunk;
    int deflate = 0;
};

void run_register(const RegisterOpts& o, const GlobalOpts& g) {
    apply_globals(g);
    require_exists(o.store, "store");
    int level = scale_to_level(o.scale);
    if (emit_dry_run(g, "register", g.out)) return;

    PyramidStore store = PyramidStore::open(o.store);
    if (store.num_levels(o.hr_group) <= level)
        fail(ErrorKind::config, "cli",
             "group " + o.hr_group + " has no level " + std::to_string(level) +
                 "; run `pyramid --max-factor " + std::to_string(o.scale) + "` first");
    Volume fixed = store.read_level(o.hr_group, level);
    Volume moving = store.read_level(o.lr_group, 0);

    RegistrationResult result = register_translation(fixed, moving, o.radius);
    if (o.affine) result = register_affine(fixed, moving, result.transform);

    Volume reg = resample_affine(moving, result.transform, GridSpec::of(fixed));
    reg = crop_and_mask(reg, fixed.dims);
    StoreCompression comp{o.deflate > 0, o.deflate > 0 ? o.deflate : 6};
    store.write_group(o.out_group, {reg}, chunk_or_default(o.chunk, o.out_group),
                      /*overwrite=*/true, comp);
    if (!o.transform.empty())
        save_transform(o.transform, result, fixed.spacing, moving.spacing);

    ordered_json rep{{"command", "register"},
                     {"out_group", o.out_group},
                     {"affine", o.affine},
                     {"ncc", result.ncc},
                     {"low_confidence", result.low_confidence},
                     {"a", result.transform.a},
                     {"t_um", result.transform.t}};
    emit_json(g.out, rep);
}

struct MatchOpts {
    std::string store, hr_group = "HR", reg_group = "REG";
    int scale = 4;
    int mask_threshold = -1;
};

void run_match(const MatchOpts& o, const GlobalOpts& g) {
    apply_globals(g);
    require_exists(o.store, "store");
    int level = scale_to_level(o.scale);
    if (emit_dry_run(g, "match", g.out)) return;

    PyramidStore store = PyramidStore::open(o.store);
    if (store.num_levels(o.hr_group) <= level)
        fail(ErrorKind::config, "cli",
             "group " + o.hr_group + " has no level " + std::to_string(level));
    Volume ref = store.read_level(o.hr_group, level);
    Volume src = store.read_level(o.reg_group, 0);
    if (o.mask_threshold >= 0) {
        u16 t = static_cast<u16>(std::min(o.mask_threshold, 65535));
        threshold_mask(ref, t);
        threshold_mask(src, t);
    }
    Volume matched = match_volume(src, ref);
    LevelMeta meta = store.level_meta(o.reg_group, 0);
    StoreCompression comp{meta.deflate, meta.deflate_level};
    store.write_group(o.reg_group, {matched}, meta.chunks, /*overwrite=*/true, comp);

    emit_json(g.out, ordered_json{{"command", "match"},
                                  {"group", o.reg_group},
                                  {"dims", dims_json(matched.dims)}});
}

struct SampleOpts {
    SamplerOpts sampler;
    std::size_t count = 16;
    std::string dump;
};

void run_sample(const SampleOpts& o, const GlobalOpts& g) {
    apply_globals(g);
    require_exists(o.sampler.store, "store");
    if (emit_dry_run(g, "sample", g.out)) return;

    PyramidStore store = PyramidStore::open(o.sampler.store);
    SampleSource src = make_source(store, o.sampler);
    SamplerConfig cfg = make_sampler_config(o.sampler, g, o.count);
    prepare_out_dir(o.dump, g.overwrite);

    ordered_json index = ordered_json::array();
    PatchSampler::Stats stats;
    {
        PatchSampler sampler({src}, cfg);
        for (std::size_t i = 0; i < o.count; ++i) {
            PatchPair pair = sampler.next();
            char stem[32];
            std::snprintf(stem, sizeof stem, "patch_%05zu", i);
            std::string lr_file = std::string(stem) + "_lr.u16";
            std::string hr_file = std::string(stem) + "_hr.u16";
            write_u16_blob(fs::path(o.dump) / lr_file, pair.lr.data);
            write_u16_blob(fs::path(o.dump) / hr_file, pair.hr.data);
            index.push_back(ordered_json{
                {"sample_id", pair.sample_id},
                {"source", pair.source},
                {"lr_origin", ordered_json::array({pair.lr_origin.z, pair.lr_origin.y, pair.lr_origin.x})},
                {"hr_origin", ordered_json::array({pair.hr_origin.z, pair.hr_origin.y, pair.hr_origin.x})},
                {"lr_dims", dims_json(pair.lr.dims)},
                {"hr_dims", dims_json(pair.hr.dims)},
                {"aug",
                 ordered_json{{"flip_z", pair.aug.flip_z},
                              {"flip_y", pair.aug.flip_y},
                              {"flip_x", pair.aug.flip_x},
                              {"rotation", pair.aug.rotation},
                              {"contrast", pair.aug.contrast},
                              {"gain", pair.aug.gain}}},
                {"lr_file", lr_file},
                {"hr_file", hr_file}});
        }
        stats = sampler.stats();
    }
    std::ofstream idx(fs::path(o.dump) / "index.json", std::ios::binary | std::ios::trunc);
    if (!idx) fail(ErrorKind::storage, "cli", "cannot write index.json in " + o.dump);
    idx << ordered_json{{"count", o.count}, {"patches", index}}.dump(2) << '\n';

    emit_json(g.out, ordered_json{{"command", "sample"},
                                  {"count", o.count},
                                  {"produced", stats.produced},
                                  {"rejected", stats.rejected},
                                  {"peak_patch_bytes", stats.peak_patch_bytes},
                                  {"dump", o.dump}});
}

struct SrOpts {
    std::string mode;  // fit | apply
    SamplerOpts sampler;
    std::size_t train_pairs = 24;
    int k = 5;
    double lambda = 0.01;
    std::string model;
    // apply side (--store/--lr-group/--lr-level/--scale come from the sampler block)
    std::string op = "linear";
    std::string pred_store, pred_group = "HR";
    std::string tile = "32";
    std::size_t overlap = 4;
    std::string replay_dir, dump_tiles_dir, chunk;
    int deflate = 0;
};

void run_sr_fit(const SrOpts& o, const GlobalOpts& g) {
    require_exists(o.sampler.store, "store");
    if (o.model.empty()) fail(ErrorKind::config, "cli", "sr --mode fit needs --model");
    if (emit_dry_run(g, "sr", g.out)) return;

    PyramidStore store = PyramidStore::open(o.sampler.store);
    SampleSource src = make_source(store, o.sampler);
    SamplerConfig cfg = make_sampler_config(o.sampler, g, o.train_pairs);
    LinearSrModel model;
    {
        PatchSampler sampler({src}, cfg);
        model = fit_linear_sr(sampler, o.train_pairs, o.k, o.lambda);
    }
    save_model(o.model, model);
    emit_json(g.out, ordered_json{{"command", "sr"},
                                  {"mode", "fit"},
                                  {"model", o.model},
                                  {"scale", model.scale},
                                  {"k", model.k},
                                  {"lambda", model.lambda},
                                  {"rows", model.rows},
                                  {"phases", model.phases.size()},
                                  {"rmse", model.rmse}});
}

void run_sr_apply(const SrOpts& o, const GlobalOpts& g) {
    require_exists(o.sampler.store, "store");
    if (o.pred_store.empty() && o.dump_tiles_dir.empty())
        fail(ErrorKind::config, "cli", "sr --mode apply needs --pred-store or --dump-tiles");
    Dims3 tile = parse_dims(o.tile, "--tile");
    if (emit_dry_run(g, "sr", g.out)) return;

    PyramidStore store = PyramidStore::open(o.sampler.store);
    Volume lr = store.read_level(o.sampler.lr_group, o.sampler.lr_level);

    std::unique_ptr<SrOperator> op;
    std::size_t overlap = o.overlap;
    if (o.op == "linear") {
        if (o.model.empty()) fail(ErrorKind::config, "cli", "--op linear needs --model");
        op = std::make_unique<LinearSrOperator>(load_model(o.model), tile);
    } else if (o.op == "nearest" || o.op == "trilinear" || o.op == "tricubic") {
        UpsampleMode mode = o.op == "nearest" ? UpsampleMode::nearest
                          : o.op == "trilinear" ? UpsampleMode::trilinear
                                                : UpsampleMode::tricubic;
        op = std::make_unique<UpsampleOperator>(mode, o.sampler.scale, tile);
    } else if (o.op == "replay") {
        if (o.replay_dir.empty()) fail(ErrorKind::config, "cli", "--op replay needs --replay-dir");
        auto replay = std::make_unique<ReplayOperator>(o.replay_dir);
        overlap = replay->overlap();
        op = std::move(replay);
    } else {
        fail(ErrorKind::config, "cli",
             "unknown --op \"" + o.op + "\" (linear, nearest, trilinear, tricubic, replay)");
    }

    if (!o.dump_tiles_dir.empty()) {
        prepare_out_dir(o.dump_tiles_dir, g.overwrite);
        dump_tiles(lr, *op, overlap, o.dump_tiles_dir);
        Dims3 t = op->lr_tile_dims();
        std::size_t stride_z = t.z - 2 * overlap, stride_y = t.y - 2 * overlap,
                    stride_x = t.x - 2 * overlap;
        std::size_t tiles = tile_origins(lr.dims.z, t.z, stride_z).size() *
                            tile_origins(lr.dims.y, t.y, stride_y).size() *
                            tile_origins(lr.dims.x, t.x, stride_x).size();
        emit_json(g.out, ordered_json{{"command", "sr"},
                                      {"mode", "apply"},
                                      {"op", o.op},
                                      {"tiles", tiles},
                                      {"dump", o.dump_tiles_dir}});
        return;
    }

    Volume pred = tiled_apply(lr, *op, overlap);
    StoreCompression comp{o.deflate > 0, o.deflate > 0 ? o.deflate : 6};
    PyramidStore out = PyramidStore::create(o.pred_store);
    out.write_group(o.pred_group, {pred}, chunk_or_default(o.chunk, o.pred_group), g.overwrite,
                    comp);
    emit_json(g.out, ordered_json{{"command", "sr"},
                                  {"mode", "apply"},
                                  {"op", o.op},
                                  {"scale", op->scale()},
                                  {"pred_store", o.pred_store},
                                  {"dims", dims_json(pred.dims)}});
}

void run_sr(const SrOpts& o, const GlobalOpts& g) {
    apply_globals(g);
    if (o.mode == "fit")
        run_sr_fit(o, g);
    else if (o.mode == "apply")
        run_sr_apply(o, g);
    else
        fail(ErrorKind::config, "cli", "--mode must be fit or apply");
}

struct EvalOpts {
    std::string pred, ref;
    std::string pred_group = "HR", ref_group = "HR";
    int pred_level = 0, ref_level = 0;
    int scale = 1;
    std::string mode = "every-slice";
    std::string csv;
};

void run_eval(const EvalOpts& o, const GlobalOpts& g) {
    apply_globals(g);
    require_exists(o.pred, "prediction store");
    require_exists(o.ref, "reference store");
    EvalMode mode;
    if (o.mode == "every-slice")
        mode = EvalMode::every_slice;
    else if (o.mode == "every-sth")
        mode = EvalMode::every_sth;
    else
        fail(ErrorKind::config, "cli", "--mode must be every-slice or every-sth");
    if (emit_dry_run(g, "eval", g.out)) return;

    PyramidStore pred_store = PyramidStore::open(o.pred);
    PyramidStore ref_store = PyramidStore::open(o.ref);
    Volume pred = pred_store.read_level(o.pred_group, o.pred_level);
    Volume ref = ref_store.read_level(o.ref_group, o.ref_level);
    MetricsReport report = evaluate_volume(pred, ref, o.scale, mode);
    if (!o.csv.empty()) {
        std::ofstream csv(o.csv, std::ios::binary | std::ios::trunc);
        if (!csv) fail(ErrorKind::storage, "cli", "cannot write " + o.csv);
        write_report_csv(report, csv);
    }
    emit_text(g.out, report_to_json(report));
}

struct TvOpts {
    std::string store, group = "HR";
    int level = 0;
};

void run_tv(const TvOpts& o, const GlobalOpts& g) {
    apply_globals(g);
    require_exists(o.store, "store");
    if (emit_dry_run(g, "tv", g.out)) return;

    PyramidStore store = PyramidStore::open(o.store);
    Volume v = store.read_level(o.group, o.level);
    std::size_t hw = v.dims.y * v.dims.x;
    ordered_json slices = ordered_json::array();
    double mean = 0.0;
    for (std::size_t z = 0; z < v.dims.z; ++z) {
        double t = tv_slice({v.data.data() + z * hw, hw}, v.dims.y, v.dims.x);
        slices.push_back(ordered_json{{"index", z}, {"tv", t}});
        mean += t;
    }
    if (v.dims.z) mean /= static_cast<double>(v.dims.z);
    emit_json(g.out, ordered_json{{"command", "tv"},
                                  {"group", o.group},
                                  {"level", o.level},
                                  {"slices", slices},
                                  {"mean", mean}});
}

struct SpectrumOpts {
    std::string store, group = "HR";
    int level = 0;
    i64 slice = -1;
    std::size_t rings = 0;
};

void run_spectrum(const SpectrumOpts& o, const GlobalOpts& g) {
    apply_globals(g);
    require_exists(o.store, "store");
    if (emit_dry_run(g, "spectrum", g.out)) return;

    PyramidStore store = PyramidStore::open(o.store);
    LevelMeta meta = store.level_meta(o.group, o.level);
    i64 z = o.slice < 0 ? static_cast<i64>(meta.shape.z / 2) : o.slice;
    if (z < 0 || z >= static_cast<i64>(meta.shape.z))
        fail(ErrorKind::range, "cli", "--slice out of range");
    Volume s = store.read_region(o.group, o.level, {z, 0, 0}, {1, meta.shape.y, meta.shape.x});
    std::vector<double> profile =
        radial_power_profile({s.data.data(), s.data.size()}, s.dims.x, o.rings);
    double sum = 0.0;
    for (double p : profile) sum += p;
    emit_json(g.out, ordered_json{{"command", "spectrum"},
                                  {"group", o.group},
                                  {"level", o.level},
                                  {"slice", z},
                                  {"side", s.dims.x},
                                  {"rings", profile},
                                  {"sum", sum}});
}

struct PhantomOpts {
    std::string kind = "tubes", dims = "128", out, chunk, with_lr = "none";
    double canal_density = 4.0, radius_min = 1.5, radius_max = 3.0, drift_amplitude = 2.0;
    int cosine_count = 24, smooth_passes = 2;
    double threshold = 0.0;
    int max_factor = 8;
    int scale = 4;
    double blur_sigma = 1.0, gamma = 0.9, gain = 1.2, noise_sigma = 2000.0;
    std::string shift = "0.3,-0.2,0.4";
    double lr_drift = 0.02, lr_drift_cycles = 2.0;
    int deflate = 0;
};

void run_phantom(const PhantomOpts& o, const GlobalOpts& g) {
    apply_globals(g);
    if (o.out.empty()) fail(ErrorKind::config, "cli", "phantom needs --out <store>");
    PhantomSpec spec;
    spec.kind = parse_phantom_kind(o.kind);
    spec.dims = parse_dims(o.dims, "--dims");
    spec.seed = g.seed;
    spec.canal_density = o.canal_density;
    spec.radius_min = o.radius_min;
    spec.radius_max = o.radius_max;
    spec.drift_amplitude = o.drift_amplitude;
    spec.cosine_count = o.cosine_count;
    spec.threshold = o.threshold;
    spec.smooth_passes = o.smooth_passes;
    // --out names the generated store here, so the summary goes to stdout.
    if (emit_dry_run(g, "phantom", "")) return;

    Volume hr = generate_phantom(spec);
    std::vector<Volume> pyr = build_pyramid(hr, o.max_factor);
    StoreCompression comp{o.deflate > 0, o.deflate > 0 ? o.deflate : 6};
    PyramidStore store = PyramidStore::create(o.out);
    store.write_group("HR", pyr, chunk_or_default(o.chunk, "HR"), g.overwrite, comp);

    ordered_json groups = ordered_json::array({"HR"});
    if (o.with_lr != "none") {
        Volume lr;
        if (o.with_lr == "down") {
            lr = degrade_downsample(hr, o.scale);
        } else if (o.with_lr == "real") {
            DegradeSpec ds;
            ds.scale = o.scale;
            ds.blur_sigma = o.blur_sigma;
            ds.gamma = o.gamma;
            ds.gain = o.gain;
            ds.noise_sigma = o.noise_sigma;
            ds.shift = parse_vec3d(o.shift, "--shift");
            ds.drift_amplitude = o.lr_drift;
            ds.drift_cycles = o.lr_drift_cycles;
            ds.seed = g.seed;
            lr = degrade_realistic(hr, ds);
        } else {
            fail(ErrorKind::config, "cli", "--with-lr must be none, down or real");
        }
        store.write_group("LR", {lr}, chunk_or_default(o.chunk, "LR"), g.overwrite, comp);
        groups.push_back("LR");
    }

    emit_json("", ordered_json{{"command", "phantom"},
                               {"kind", o.kind},
                               {"dims", dims_json(spec.dims)},
                               {"store", o.out},
                               {"groups", groups},
                               {"levels", pyr.size()}});
}

struct GapOpts {
    std::string phantom, degrade;
    int scale = 0;  // 0: keep the degrade spec's scale
    int k = 5;
    double lambda = 0.01;
    std::size_t train_pairs = 24;
    std::string patch = "16";
    std::size_t overlap = 4;
    double test_fraction = 0.1;
    std::string workdir = "gap.work";
};

void run_gap(const GapOpts& o, const GlobalOpts& g) {
    apply_globals(g);
    GapConfig cfg;
    if (!o.phantom.empty()) cfg.phantom = phantom_spec_from_json(load_json_file(o.phantom));
    if (!o.degrade.empty()) cfg.degrade = degrade_spec_from_json(load_json_file(o.degrade));
    if (o.scale > 0) cfg.degrade.scale = o.scale;
    cfg.k = o.k;
    cfg.lambda = o.lambda;
    cfg.train_pairs = o.train_pairs;
    cfg.lr_patch = parse_dims(o.patch, "--patch");
    cfg.overlap = o.overlap;
    cfg.test_fraction = o.test_fraction;
    cfg.seed = g.seed;
    if (g.seed_set) {
        cfg.phantom.seed = g.seed;
        cfg.degrade.seed = g.seed;
    }
    cfg.workdir = o.workdir;
    if (emit_dry_run(g, "gap", g.out)) return;

    GapReport report = run_domain_gap(cfg);
    emit_text(g.out, report.to_json());
}

void print_error_json(const std::string& stage, const std::string& kind,
                      const std::string& detail) {
    ordered_json inner;
    inner["stage"] = stage;
    inner["kind"] = kind;
    inner["detail"] = detail;
    ordered_json j;
    j["error"] = inner;
    std::string s = j.dump();
    s.push_back('\n');
    std::fwrite(s.data(), 1, s.size(), stdout);
    std::fflush(stdout);
}

void add_global_options(CLI::App& app, GlobalOpts& g) {
    app.add_option("--seed", g.seed, "seed for all randomness")
        ->each([&g](const std::string&) { g.seed_set = true; });
    app.add_option("--threads", g.threads, "cap the global thread pool (0: default)");
    app.add_flag("--dry-run", g.dry_run, "validate the configuration and exit");
    app.add_flag("--overwrite", g.overwrite, "allow replacing existing outputs");
    app.add_option("--out", g.out, "report destination (default: stdout)");
    app.add_option("--config", g.config_files,
                   "JSON config file merged with flags (flags win); repeatable");
}

}  // namespace

int run_command(const std::vector<std::string>& args) {
    GlobalOpts g;
    IngestOpts ingest_o, pack_o;
    PyramidOpts pyramid_o;
    RegisterOpts register_o;
    MatchOpts match_o;
    SampleOpts sample_o;
    SrOpts sr_o;
    EvalOpts eval_o;
    TvOpts tv_o;
    SpectrumOpts spectrum_o;
    PhantomOpts phantom_o;
    GapOpts gap_o;

    CLI::App app{"volumetric micro-CT super-resolution pipeline"};
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    app.require_subcommand(1);
    add_global_options(app, g);

    auto* c_ingest = app.add_subcommand("ingest", "normalize a raw volume into a store group");
    c_ingest->add_option("--in", ingest_o.in, "raw volume (.raw + sidecar) or slice directory")
        ->required();
    c_ingest->add_option("--sidecar", ingest_o.sidecar, "sidecar JSON (default: input with .json)");
    c_ingest->add_option("--store", ingest_o.store, "output store")->required();
    c_ingest->add_option("--group", ingest_o.group, "output group (default HR)");
    c_ingest->add_option("--clip-low", ingest_o.clip_low, "lower clip percentile");
    c_ingest->add_option("--clip-high", ingest_o.clip_high, "upper clip percentile");
    c_ingest->add_option("--mask-threshold", ingest_o.mask_threshold,
                         "attach mask = intensity >= threshold (-1: none)");
    c_ingest->add_option("--chunk", ingest_o.chunk, "chunk dims, one value or z,y,x");
    c_ingest->add_option("--deflate", ingest_o.deflate, "zlib level for chunks (0: raw)");
    c_ingest->callback([&] { run_ingest(ingest_o, g, "ingest"); });

    auto* c_pyramid = app.add_subcommand("pyramid", "build the multiscale pyramid in place");
    c_pyramid->add_option("--store", pyramid_o.store, "store to update")->required();
    c_pyramid->add_option("--group", pyramid_o.group, "group to rebuild (default HR)");
    c_pyramid->add_option("--max-factor", pyramid_o.max_factor, "coarsest factor: 1, 2, 4 or 8");
    c_pyramid->add_option("--chunk", pyramid_o.chunk, "chunk dims (default: keep level 0's)");
    c_pyramid->callback([&] { run_pyramid(pyramid_o, g); });

    auto* c_register = app.add_subcommand("register", "register LR onto the matched HR level");
    c_register->add_option("--store", register_o.store, "store holding both groups")->required();
    c_register->add_option("--hr-group", register_o.hr_group, "fixed group (default HR)");
    c_register->add_option("--lr-group", register_o.lr_group, "moving group (default LR)");
    c_register->add_option("--out-group", register_o.out_group, "registered output (default REG)");
    c_register->add_option("--scale", register_o.scale, "HR/LR factor: 1, 2, 4 or 8");
    c_register->add_option("--radius", register_o.radius, "translation search radius in voxels");
    c_register->add_flag("--affine", register_o.affine, "refine with a full affine");
    c_register->add_option("--transform", register_o.transform, "save the transform JSON here");
    c_register->add_option("--chunk", register_o.chunk, "chunk dims for the output group");
    c_register->add_option("--deflate", register_o.deflate, "zlib level for chunks (0: raw)");
    c_register->callback([&] { run_register(register_o, g); });

    auto* c_match = app.add_subcommand("match", "histogram-match REG to the downsampled HR");
    c_match->add_option("--store", match_o.store, "store holding both groups")->required();
    c_match->add_option("--hr-group", match_o.hr_group, "reference group (default HR)");
    c_match->add_option("--reg-group", match_o.reg_group, "group matched in place (default REG)");
    c_match->add_option("--scale", match_o.scale, "HR/LR factor: 1, 2, 4 or 8");
    c_match->add_option("--mask-threshold", match_o.mask_threshold,
                        "mask both sides at this intensity first (-1: none)");
    c_match->callback([&] { run_match(match_o, g); });

    auto* c_pack = app.add_subcommand("pack", "ingest and build the pyramid in one pass");
    c_pack->add_option("--in", pack_o.in, "raw volume (.raw + sidecar) or slice directory")
        ->required();
    c_pack->add_option("--sidecar", pack_o.sidecar, "sidecar JSON (default: input with .json)");
    c_pack->add_option("--store", pack_o.store, "output store")->required();
    c_pack->add_option("--group", pack_o.group, "output group (default HR)");
    c_pack->add_option("--clip-low", pack_o.clip_low, "lower clip percentile");
    c_pack->add_option("--clip-high", pack_o.clip_high, "upper clip percentile");
    c_pack->add_option("--mask-threshold", pack_o.mask_threshold,
                       "attach mask = intensity >= threshold (-1: none)");
    c_pack->add_option("--chunk", pack_o.chunk, "chunk dims, one value or z,y,x");
    c_pack->add_option("--deflate", pack_o.deflate, "zlib level for chunks (0: raw)");
    pack_o.max_factor = 8;
    c_pack->add_option("--max-factor", pack_o.max_factor, "coarsest factor: 1, 2, 4 or 8");
    c_pack->callback([&] { run_ingest(pack_o, g, "pack"); });

    auto* c_sample = app.add_subcommand("sample", "dump paired patches drawn by the sampler");
    add_sampler_options(c_sample, sample_o.sampler);
    c_sample->add_option("--count", sample_o.count, "patch pairs to dump");
    c_sample->add_option("--dump", sample_o.dump, "output directory")->required();
    c_sample->callback([&] { run_sample(sample_o, g); });

    auto* c_sr = app.add_subcommand("sr", "fit or apply the linear SR model");
    c_sr->add_option("--mode", sr_o.mode, "fit or apply")->required();
    add_sampler_options(c_sr, sr_o.sampler);
    c_sr->add_option("--train-pairs", sr_o.train_pairs, "pairs pulled for the fit");
    c_sr->add_option("--k", sr_o.k, "LR neighborhood side");
    c_sr->add_option("--lambda", sr_o.lambda, "ridge strength");
    c_sr->add_option("--model", sr_o.model, "model JSON path (fit output, apply input)");
    c_sr->add_option("--op", sr_o.op, "apply operator: linear, nearest, trilinear, tricubic, replay");
    c_sr->add_option("--pred-store", sr_o.pred_store, "output store for the prediction");
    c_sr->add_option("--pred-group", sr_o.pred_group, "output group (default HR)");
    c_sr->add_option("--tile", sr_o.tile, "LR tile dims, one value or z,y,x");
    c_sr->add_option("--overlap", sr_o.overlap, "LR tile overlap");
    c_sr->add_option("--replay-dir", sr_o.replay_dir, "tile directory for --op replay");
    c_sr->add_option("--dump-tiles", sr_o.dump_tiles_dir, "record tiles here instead of blending");
    c_sr->add_option("--chunk", sr_o.chunk, "chunk dims for the prediction store");
    c_sr->add_option("--deflate", sr_o.deflate, "zlib level for chunks (0: raw)");
    c_sr->callback([&] { run_sr(sr_o, g); });

    auto* c_eval = app.add_subcommand("eval", "slice-wise metrics of prediction vs reference");
    c_eval->add_option("--pred", eval_o.pred, "prediction store")->required();
    c_eval->add_option("--ref", eval_o.ref, "reference store")->required();
    c_eval->add_option("--pred-group", eval_o.pred_group, "prediction group (default HR)");
    c_eval->add_option("--ref-group", eval_o.ref_group, "reference group (default HR)");
    c_eval->add_option("--pred-level", eval_o.pred_level, "prediction level");
    c_eval->add_option("--ref-level", eval_o.ref_level, "reference level");
    c_eval->add_option("--scale", eval_o.scale, "SR factor (stride for every-sth)");
    c_eval->add_option("--mode", eval_o.mode, "every-slice or every-sth");
    c_eval->add_option("--csv", eval_o.csv, "also write the per-slice table here");
    c_eval->callback([&] { run_eval(eval_o, g); });

    auto* c_tv = app.add_subcommand("tv", "per-slice total variation of a store level");
    c_tv->add_option("--store", tv_o.store, "store")->required();
    c_tv->add_option("--group", tv_o.group, "group (default HR)");
    c_tv->add_option("--level", tv_o.level, "pyramid level");
    c_tv->callback([&] { run_tv(tv_o, g); });

    auto* c_spectrum = app.add_subcommand("spectrum", "radial power profile of one z-slice");
    c_spectrum->add_option("--store", spectrum_o.store, "store")->required();
    c_spectrum->add_option("--group", spectrum_o.group, "group (default HR)");
    c_spectrum->add_option("--level", spectrum_o.level, "pyramid level");
    c_spectrum->add_option("--slice", spectrum_o.slice, "z index (-1: middle slice)");
    c_spectrum->add_option("--rings", spectrum_o.rings, "ring count (0: side/2)");
    c_spectrum->callback([&] { run_spectrum(spectrum_o, g); });

    auto* c_phantom = app.add_subcommand("phantom", "generate a synthetic sample into a store");
    c_phantom->add_option("--kind", phantom_o.kind, "tubes or trabecular");
    c_phantom->add_option("--dims", phantom_o.dims, "volume dims, one value or z,y,x");
    c_phantom->add_option("--canal-density", phantom_o.canal_density, "tubes: canals per 1000 voxels");
    c_phantom->add_option("--radius-min", phantom_o.radius_min, "tubes: min canal radius");
    c_phantom->add_option("--radius-max", phantom_o.radius_max, "tubes: max canal radius");
    c_phantom->add_option("--drift-amplitude", phantom_o.drift_amplitude, "tubes: canal drift");
    c_phantom->add_option("--cosine-count", phantom_o.cosine_count, "trabecular: wave count");
    c_phantom->add_option("--threshold", phantom_o.threshold, "trabecular: cut threshold");
    c_phantom->add_option("--smooth-passes", phantom_o.smooth_passes, "trabecular: box passes");
    c_phantom->add_option("--max-factor", phantom_o.max_factor, "pyramid depth for HR");
    c_phantom->add_option("--with-lr", phantom_o.with_lr, "also write an LR group: none, down, real");
    c_phantom->add_option("--scale", phantom_o.scale, "LR downsampling factor");
    c_phantom->add_option("--blur-sigma", phantom_o.blur_sigma, "real LR: blur sigma, HR voxels");
    c_phantom->add_option("--gamma", phantom_o.gamma, "real LR: gamma");
    c_phantom->add_option("--gain", phantom_o.gain, "real LR: gain");
    c_phantom->add_option("--noise-sigma", phantom_o.noise_sigma, "real LR: noise sigma, u16 units");
    c_phantom->add_option("--shift", phantom_o.shift, "real LR: sub-voxel shift z,y,x");
    c_phantom->add_option("--lr-drift", phantom_o.lr_drift, "real LR: brightness drift amplitude");
    c_phantom->add_option("--lr-drift-cycles", phantom_o.lr_drift_cycles, "real LR: drift cycles");
    c_phantom->add_option("--chunk", phantom_o.chunk, "chunk dims");
    c_phantom->add_option("--deflate", phantom_o.deflate, "zlib level for chunks (0: raw)");
    c_phantom->add_option("--out", phantom_o.out, "output store path")->required();
    c_phantom->callback([&] { run_phantom(phantom_o, g); });

    auto* c_gap = app.add_subcommand("gap", "domain-gap experiment on a synthetic sample");
    c_gap->add_option("--phantom", gap_o.phantom, "phantom spec JSON (default: tubes 128)");
    c_gap->add_option("--degrade", gap_o.degrade, "degrade spec JSON (default: realistic x4)");
    c_gap->add_option("--scale", gap_o.scale, "override the degrade scale");
    c_gap->add_option("--k", gap_o.k, "LR neighborhood side");
    c_gap->add_option("--lambda", gap_o.lambda, "ridge strength");
    c_gap->add_option("--train-pairs", gap_o.train_pairs, "pairs per model fit");
    c_gap->add_option("--patch", gap_o.patch, "LR patch dims for the fit");
    c_gap->add_option("--overlap", gap_o.overlap, "LR tile overlap for prediction");
    c_gap->add_option("--test-fraction", gap_o.test_fraction, "held-out slice fraction");
    c_gap->add_option("--workdir", gap_o.workdir, "scratch store location");
    c_gap->callback([&] { run_gap(gap_o, g); });

    for (CLI::App* sub : {c_ingest, c_pyramid, c_register, c_match, c_pack, c_sample, c_sr,
                          c_eval, c_tv, c_spectrum, c_phantom, c_gap})
        sub->fallthrough();

    try {
        std::vector<std::string> full = expand_config_args(args);
        std::reverse(full.begin(), full.end());
        app.parse(full);
        return 0;
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e, std::cout, std::cerr);
        return code == 0 ? 0 : 2;
    } catch (const Error& e) {
        print_error_json(e.stage(), error_kind_name(e.kind()), e.detail());
        return 1;
    } catch (const std::exception& e) {
        print_error_json("cli", "invalid-input", e.what());
        return 1;
    }
}

}  // namespace voxsr
