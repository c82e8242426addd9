#pragma once

#include <filesystem>

#include "voxsr/sampler.hpp"
#include "voxsr/tiled_infer.hpp"
#include "voxsr/types.hpp"

namespace voxsr {

// Per-phase ridge regression from a k^3 LR neighborhood (plus bias) to one HR
// voxel, in [0,1] intensity units. HR voxel h has parent LR voxel h/s and
// phase (h mod s); neighborhoods reflect at volume borders so every HR voxel
// yields a training row.
struct LinearSrModel {
    int scale = 4;
    int k = 5;
    double lambda = 0.0;
    struct Phase {
        std::vector<double> w;  // k^3 weights
        double bias = 0.0;
    };
    std::vector<Phase> phases;  // s^3
    u64 rows = 0;               // training rows per phase
    double rmse = 0.0;          // fit residual, [0,1] units
};

void save_model(const std::filesystem::path& path, const LinearSrModel& model);
LinearSrModel load_model(const std::filesystem::path& path);

// Streaming normal-equation accumulator: Gram matrix and right-hand side per
// phase. add_pair is deterministic given the pair order; solve() applies the
// ridge to the weight diagonal only (the bias is unpenalized) and factors via
// Cholesky. A rank-deficient system with lambda == 0 is an error advising a
// positive lambda.
class RidgeAccumulator {
public:
    RidgeAccumulator(int scale, int k);
    void add_pair(const Volume& lr, const Volume& hr);
    LinearSrModel solve(double lambda) const;
    u64 rows() const { return rows_; }

private:
    int s_, k_, d_;  // d = k^3 + 1 (bias column)
    // Every phase sees the same design rows (one neighborhood per LR parent
    // voxel), so the Gram matrix is shared; only the targets differ per phase.
    std::vector<double> gram_;               // d*d row-major, upper triangle filled
    std::vector<std::vector<double>> gty_;   // per phase
    std::vector<double> yy_;                 // per phase
    u64 rows_ = 0;                           // rows per phase
};

// Pulls n_pairs from the sampler and fits.
LinearSrModel fit_linear_sr(PatchSampler& sampler, std::size_t n_pairs, int k, double lambda);

// Applies the model to a whole LR volume (reflection padding at the borders),
// producing scale times the dims. Predictions round half to even and clamp.
Volume apply_linear_sr(const LinearSrModel& model, const Volume& lr);

// SrOperator adapter for tiled inference.
class LinearSrOperator : public SrOperator {
public:
    LinearSrOperator(LinearSrModel model, Dims3 tile_dims)
        : model_(std::move(model)), tile_(tile_dims) {}
    int scale() const override { return model_.scale; }
    Dims3 lr_tile_dims() const override { return tile_; }
    Volume apply(const Volume& lr_tile, const Vec3i& lr_origin) const override;

private:
    LinearSrModel model_;
    Dims3 tile_;
};

}  // namespace voxsr
