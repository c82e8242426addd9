#include "voxsr/gap.hpp"

#include <cstring>

#include <nlohmann/json.hpp>

#include "voxsr/linear_sr.hpp"
#include "voxsr/metrics.hpp"
#include "voxsr/pyramid.hpp"
#include "voxsr/store.hpp"
#include "voxsr/volume_ops.hpp"

namespace voxsr {

namespace {

Volume crop_z(const Volume& v, std::size_t z0, std::size_t z1) {
    if (z0 >= z1 || z1 > v.dims.z) fail(ErrorKind::invalid_input, "gap", "bad z-crop range");
    Volume out;
    out.dims = {z1 - z0, v.dims.y, v.dims.x};
    out.spacing = v.spacing;
    out.origin = {v.origin.z + static_cast<double>(z0) * v.spacing.z, v.origin.y, v.origin.x};
    const std::size_t slice = v.dims.y * v.dims.x;
    out.data.assign(v.data.begin() + static_cast<std::ptrdiff_t>(z0 * slice),
                    v.data.begin() + static_cast<std::ptrdiff_t>(z1 * slice));
    if (v.has_mask())
        out.mask.assign(v.mask.begin() + static_cast<std::ptrdiff_t>(z0 * slice),
                        v.mask.begin() + static_cast<std::ptrdiff_t>(z1 * slice));
    return out;
}

double mean_tv(const Volume& v) {
    const std::size_t slice = v.dims.y * v.dims.x;
    double sum = 0.0;
    for (std::size_t z = 0; z < v.dims.z; ++z)
        sum += tv_slice({v.data.data() + z * slice, slice}, v.dims.y, v.dims.x);
    return sum / static_cast<double>(v.dims.z);
}

GapReport::Condition summarize(const MetricsReport& r) {
    return {r.mean_psnr, r.mean_ssim, r.mean_nrmse};
}

nlohmann::ordered_json condition_json(const GapReport::Condition& c) {
    nlohmann::ordered_json j;
    j["psnr_db"] = c.psnr_db;
    j["ssim"] = c.ssim;
    j["nrmse"] = c.nrmse;
    j["row"] = format_metrics_row(c.psnr_db, c.ssim, c.nrmse);
    return j;
}

}  // namespace

GapReport run_domain_gap(const GapConfig& cfg) {
    if (cfg.workdir.empty())
        fail(ErrorKind::config, "gap", "a working directory for the sample store is required");
    const int s = cfg.degrade.scale;

    Volume hr = generate_phantom(cfg.phantom);
    Volume lr_real = degrade_realistic(hr, cfg.degrade);
    std::vector<Volume> pyr = build_pyramid(hr, s);
    const int lr_level = static_cast<int>(pyr.size()) - 1;

    // The split is decided in LR slices and mapped to HR by the scale so no
    // patch can straddle the boundary in either resolution.
    const std::size_t lr_depth = hr.dims.z / static_cast<std::size_t>(s);
    const SliceSplit split = split_slices(lr_depth, cfg.test_fraction, true);
    if (split.train_count() < cfg.lr_patch.z)
        fail(ErrorKind::config, "gap",
             "train slices cannot fit the patch; enlarge the phantom or reduce test_fraction");

    PyramidStore store = PyramidStore::create(cfg.workdir);
    store.write_group("HR", pyr, PyramidStore::kDefaultHrChunk, true);
    store.write_group("REG", {lr_real}, PyramidStore::kDefaultLrChunk, true);

    SamplerConfig scfg;
    scfg.seed = cfg.seed;
    scfg.scale = s;
    scfg.lr_patch = cfg.lr_patch;
    scfg.augment = false;
    scfg.epoch_size = std::max<std::size_t>(1, cfg.train_pairs);

    LinearSrModel model_d, model_r;
    {
        SampleSource src{&store, "HR", lr_level, "HR", 0, split.train_begin, split.train_end};
        PatchSampler sampler({src}, scfg);
        model_d = fit_linear_sr(sampler, cfg.train_pairs, cfg.k, cfg.lambda);
    }
    {
        SampleSource src{&store, "REG", 0, "HR", 0, split.train_begin, split.train_end};
        PatchSampler sampler({src}, scfg);
        model_r = fit_linear_sr(sampler, cfg.train_pairs, cfg.k, cfg.lambda);
    }

    // Predict the full LR volumes, then evaluate the held-out z-range only.
    const Volume& lr_down = pyr[static_cast<std::size_t>(lr_level)];
    const LinearSrOperator op_d(model_d, cfg.lr_patch);
    const LinearSrOperator op_r(model_r, cfg.lr_patch);
    const Volume pred_dd = tiled_apply(lr_down, op_d, cfg.overlap);
    const Volume pred_dr = tiled_apply(lr_real, op_d, cfg.overlap);
    const Volume pred_rr = tiled_apply(lr_real, op_r, cfg.overlap);
    const Volume pred_rd = tiled_apply(lr_down, op_r, cfg.overlap);

    const std::size_t z0 = split.test_begin * static_cast<std::size_t>(s);
    const Volume hr_test = crop_z(hr, z0, hr.dims.z);

    GapReport report;
    report.down_on_down = summarize(
        evaluate_volume(crop_z(pred_dd, z0, hr.dims.z), hr_test, s, EvalMode::every_slice));
    report.real_on_real = summarize(
        evaluate_volume(crop_z(pred_rr, z0, hr.dims.z), hr_test, s, EvalMode::every_slice));
    report.down_on_real = summarize(
        evaluate_volume(crop_z(pred_dr, z0, hr.dims.z), hr_test, s, EvalMode::every_slice));
    report.real_on_down = summarize(
        evaluate_volume(crop_z(pred_rd, z0, hr.dims.z), hr_test, s, EvalMode::every_slice));
    report.tv_hr = mean_tv(hr_test);
    report.tv_down_pred = mean_tv(crop_z(pred_dd, z0, hr.dims.z));
    report.tv_real_pred = mean_tv(crop_z(pred_rr, z0, hr.dims.z));
    return report;
}

std::string GapReport::to_json() const {
    nlohmann::ordered_json j;
    j["conditions"]["d_down"] = condition_json(down_on_down);
    j["conditions"]["r_real"] = condition_json(real_on_real);
    j["conditions"]["d_real"] = condition_json(down_on_real);
    j["conditions"]["r_down"] = condition_json(real_on_down);
    j["tv"]["hr"] = tv_hr;
    j["tv"]["d_pred"] = tv_down_pred;
    j["tv"]["r_pred"] = tv_real_pred;
    return j.dump(2);
}

}  // namespace voxsr
