#pragma once

#include <filesystem>

#include "voxsr/phantom.hpp"
#include "voxsr/types.hpp"

namespace voxsr {

// Domain-gap experiment: fit one linear SR model on (plain-downsampled LR, HR)
// pairs and one on (realistically degraded LR, HR) pairs from the train
// slices of a phantom, then evaluate both on both LR variants over the test
// slices. Also reports per-slice TV of the in-domain predictions against HR.
struct GapConfig {
    PhantomSpec phantom;
    DegradeSpec degrade;
    int k = 5;
    double lambda = 0.01;
    std::size_t train_pairs = 24;
    Dims3 lr_patch{16, 16, 16};
    std::size_t overlap = 4;
    double test_fraction = 0.1;
    u64 seed = 0;
    std::filesystem::path workdir;  // sample store location (pipeline runs on disk)
};

struct GapReport {
    struct Condition {
        double psnr_db = 0, ssim = 0, nrmse = 0;
    };
    Condition down_on_down;  // model fit on downsampled LR, applied to downsampled LR
    Condition real_on_real;
    Condition down_on_real;  // cross-domain
    Condition real_on_down;
    double tv_hr = 0;
    double tv_down_pred = 0;  // in-domain prediction of the downsampled-LR model
    double tv_real_pred = 0;
    std::string to_json() const;
};

GapReport run_domain_gap(const GapConfig& cfg);

}  // namespace voxsr
