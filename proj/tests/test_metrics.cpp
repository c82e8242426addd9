#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "doctest.h"
#include "test_util.hpp"
#include "voxsr/metrics.hpp"
#include "voxsr/reference.hpp"
#include "voxsr/types.hpp"

using namespace voxsr;
using testutil::catch_kind;

namespace {

std::vector<u16> random_slice(std::size_t n, u64 seed, u64 hi = 65536) {
    SplitMix64 rng(seed);
    std::vector<u16> s(n);
    for (auto& v : s) v = static_cast<u16>(rng.below(hi));
    return s;
}

}  // namespace

TEST_CASE("psnr trivial values") {
    std::vector<u16> ref = random_slice(256, 1, 60000);  // headroom for the +655 offset
    CHECK(psnr_slice(ref, ref) == 100.0);

    // A uniform offset of ~0.01 of the range gives ~40 dB.
    std::vector<u16> pred = ref;
    for (auto& v : pred) v = static_cast<u16>(std::min(65535, v + 655));
    double expect = 10.0 * std::log10(1.0 / ((655.0 / 65535.0) * (655.0 / 65535.0)));
    CHECK(psnr_slice(pred, ref) == doctest::Approx(expect).epsilon(1e-12));
    CHECK(std::abs(psnr_slice(pred, ref) - 40.0) < 0.01);

    auto [threw, kind] = catch_kind([&] {
        std::vector<u16> small(128);
        psnr_slice(small, ref);
    });
    CHECK(threw);
    CHECK(kind == ErrorKind::invalid_input);
}

TEST_CASE("psnr agrees with the double-loop oracle") {
    for (u64 seed : {2ull, 3ull, 4ull}) {
        std::vector<u16> pred = random_slice(24 * 24, seed);
        std::vector<u16> ref = random_slice(24 * 24, seed + 10);
        CHECK(psnr_slice(pred, ref) ==
              doctest::Approx(reference::psnr_loop(pred, ref)).epsilon(1e-11));
        CHECK(std::abs(psnr_slice(pred, ref) - reference::psnr_loop(pred, ref)) <= 1e-9);
    }
}

TEST_CASE("psnr decreases monotonically with noise amplitude") {
    std::vector<u16> ref = random_slice(32 * 32, 5, 30000);
    double last = 101.0;
    for (double amp : {0.001, 0.01, 0.1}) {
        SplitMix64 rng(77);
        std::vector<u16> pred = ref;
        for (auto& v : pred) {
            double noisy = v + amp * 65535.0 * (2.0 * rng.uniform() - 1.0);
            v = quantize_u16(noisy);
        }
        double p = psnr_slice(pred, ref);
        CHECK(p < last);
        last = p;
    }
}

TEST_CASE("ssim trivial values") {
    std::vector<u16> ref = random_slice(16 * 16, 7);
    CHECK(ssim_slice(ref, ref, 16, 16) == doctest::Approx(1.0).epsilon(1e-12));

    // Constant 0.2 vs constant 0.4: closed form (2*0.08 +able C1)/(0.2 + C1).
    std::vector<u16> a(16 * 16, 13107), b(16 * 16, 26214);
    double got = ssim_slice(a, b, 16, 16);
    CHECK(std::abs(got - 0.8001) < 1e-4);

    auto [threw, kind] = catch_kind([&] {
        std::vector<u16> tiny(8 * 8);
        ssim_slice(tiny, tiny, 8, 8);
    });
    CHECK(threw);
    CHECK(kind == ErrorKind::invalid_input);
}

TEST_CASE("ssim agrees with the per-window loop oracle") {
    for (u64 seed : {8ull, 9ull}) {
        std::vector<u16> pred = random_slice(20 * 17, seed);
        std::vector<u16> ref = random_slice(20 * 17, seed + 10);
        double fast = ssim_slice(pred, ref, 20, 17);
        double slow = reference::ssim_loop(pred, ref, 20, 17);
        CHECK(std::abs(fast - slow) <= 1e-6);
    }
}

TEST_CASE("pointwise metrics are invariant under a shared pixel permutation") {
    std::vector<u16> pred = random_slice(15 * 15, 11);
    std::vector<u16> ref = random_slice(15 * 15, 12);
    SplitMix64 rng(13);
    std::vector<std::size_t> perm(pred.size());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    for (std::size_t i = perm.size(); i-- > 1;) std::swap(perm[i], perm[rng.below(i + 1)]);
    std::vector<u16> pred2(pred.size()), ref2(ref.size());
    for (std::size_t i = 0; i < perm.size(); ++i) {
        pred2[i] = pred[perm[i]];
        ref2[i] = ref[perm[i]];
    }
    CHECK(psnr_slice(pred2, ref2) == doctest::Approx(psnr_slice(pred, ref)).epsilon(1e-12));
    CHECK(nrmse_slice(pred2, ref2) == doctest::Approx(nrmse_slice(pred, ref)).epsilon(1e-12));
}

TEST_CASE("ssim is invariant under a shared flip") {
    std::vector<u16> pred = random_slice(14 * 18, 15);
    std::vector<u16> ref = random_slice(14 * 18, 16);
    auto flip = [](const std::vector<u16>& s, std::size_t h, std::size_t w) {
        std::vector<u16> out(s.size());
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) out[y * w + x] = s[(h - 1 - y) * w + (w - 1 - x)];
        return out;
    };
    double base = ssim_slice(pred, ref, 14, 18);
    double flipped = ssim_slice(flip(pred, 14, 18), flip(ref, 14, 18), 14, 18);
    CHECK(flipped == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("nrmse trivial values and the loop oracle") {
    std::vector<u16> ref = random_slice(128, 17, 5000);
    for (auto& v : ref) v = static_cast<u16>(v * 10);  // multiples of 10 so 1.1x is exact
    CHECK(nrmse_slice(ref, ref) == 0.0);

    std::vector<u16> scaled = ref;
    for (auto& v : scaled) v = static_cast<u16>(v + v / 10);  // exactly 1.1 * v
    CHECK(nrmse_slice(scaled, ref) == doctest::Approx(0.1).epsilon(1e-12));

    std::vector<u16> pred = random_slice(128, 18);
    CHECK(std::abs(nrmse_slice(pred, ref) - reference::nrmse_loop(pred, ref)) <= 1e-12);

    std::vector<u16> zeros(128, 0);
    auto [threw, kind] = catch_kind([&] { nrmse_slice(pred, zeros); });
    CHECK(threw);
    CHECK(kind == ErrorKind::invalid_input);
}

TEST_CASE("tv trivial values") {
    std::vector<u16> constant(6 * 6, 4321);
    CHECK(tv_slice(constant, 6, 6) == 0.0);

    // [[0,1],[0,1]] in unit intensities: two horizontal jumps of 1, two
    // vertical of 0, four difference terms in total.
    std::vector<u16> cols = {0, 65535, 0, 65535};
    CHECK(tv_slice(cols, 2, 2) == doctest::Approx(0.5).epsilon(1e-12));

    // [[0,.5,1],[0,.5,1]]: four horizontal terms of 0.5, three vertical of 0.
    std::vector<u16> ramp = {0, 32768, 65535, 0, 32768, 65535};
    CHECK(tv_slice(ramp, 2, 3) == doctest::Approx(2.0 / 7.0).epsilon(1e-4));
}

TEST_CASE("tv is absolutely homogeneous and matches the loop oracle") {
    std::vector<u16> base = random_slice(12 * 12, 19, 6000);
    std::vector<u16> scaled = base;
    for (auto& v : scaled) v = static_cast<u16>(v * 10);
    CHECK(tv_slice(scaled, 12, 12) == doctest::Approx(10.0 * tv_slice(base, 12, 12)).epsilon(1e-12));

    for (u64 seed : {20ull, 21ull}) {
        std::vector<u16> s = random_slice(16 * 13, seed);
        CHECK(tv_slice(s, 16, 13) == doctest::Approx(reference::tv_loop(s, 16, 13)).epsilon(1e-12));
    }
}

TEST_CASE("radial power profile trivial spectra") {
    std::vector<u16> constant(16 * 16, 9999);
    auto prof = radial_power_profile(constant, 16);
    REQUIRE(prof.size() == 8);
    CHECK(prof[0] == doctest::Approx(1.0).epsilon(1e-12));
    for (std::size_t k = 1; k < prof.size(); ++k) CHECK(prof[k] == 0.0);

    // Pure cosine along x at integer frequency 3 -> nearly all non-DC power
    // in ring 3.
    std::vector<u16> cosx(16 * 16);
    for (std::size_t y = 0; y < 16; ++y)
        for (std::size_t x = 0; x < 16; ++x)
            cosx[y * 16 + x] =
                quantize_u16(30000.0 + 20000.0 * std::cos(2.0 * M_PI * 3.0 * x / 16.0));
    auto pc = radial_power_profile(cosx, 16);
    double non_dc = 0.0;
    for (std::size_t k = 1; k < pc.size(); ++k) non_dc += pc[k];
    CHECK(pc[3] >= 0.99 * non_dc);

    auto [threw, kind] = catch_kind([&] {
        std::vector<u16> rect(16 * 8, 1);
        radial_power_profile(rect, 16);
    });
    CHECK(threw);
    CHECK(kind == ErrorKind::invalid_input);
}

TEST_CASE("radial power profile matches the naive DFT oracle on white noise") {
    std::vector<u16> s = random_slice(16 * 16, 23);
    auto fast = radial_power_profile(s, 16);
    auto slow = reference::radial_profile_dft(s, 16, 8);
    REQUIRE(fast.size() == slow.size());
    for (std::size_t k = 0; k < fast.size(); ++k) {
        double denom = std::max(std::abs(slow[k]), 1e-30);
        CHECK(std::abs(fast[k] - slow[k]) / denom <= 1e-9);
    }
}

TEST_CASE("radial power profile is a sub-partition of total power") {
    std::vector<u16> s = random_slice(16 * 16, 29);
    auto prof = radial_power_profile(s, 16);
    double sum = std::accumulate(prof.begin(), prof.end(), 0.0);
    CHECK(sum <= 1.0 + 1e-12);

    // Enough rings to reach the spectrum corners: sums to exactly 1.
    auto full = radial_power_profile(s, 16, 13);
    double total = std::accumulate(full.begin(), full.end(), 0.0);
    CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("evaluate_volume on identical volumes hits the caps") {
    Volume v = testutil::random_volume({6, 16, 16}, 31);
    MetricsReport r = evaluate_volume(v, v, 4, EvalMode::every_slice);
    CHECK(r.slice_index.size() == 6);
    CHECK(r.mean_psnr == 100.0);
    CHECK(r.mean_ssim == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r.mean_nrmse == 0.0);
}

TEST_CASE("evaluate_volume excludes all-zero reference slices") {
    Volume ref = testutil::random_volume({10, 16, 16}, 37);
    for (auto& v : ref.data) v = static_cast<u16>(1 + v % 30000);  // no accidental zero slice
    const std::size_t hw = 16 * 16;
    for (std::size_t z : {2u, 5u, 9u})
        std::fill(ref.data.begin() + static_cast<std::ptrdiff_t>(z * hw),
                  ref.data.begin() + static_cast<std::ptrdiff_t>((z + 1) * hw), u16{0});
    Volume pred = testutil::random_volume({10, 16, 16}, 38);

    MetricsReport r = evaluate_volume(pred, ref, 2, EvalMode::every_slice);
    CHECK(r.slice_index.size() == 7);
    for (std::size_t z : {2u, 5u, 9u})
        CHECK(std::find(r.slice_index.begin(), r.slice_index.end(), z) == r.slice_index.end());

    // Aggregate equals the arithmetic mean of the included slices.
    double m = std::accumulate(r.psnr_db.begin(), r.psnr_db.end(), 0.0) /
               static_cast<double>(r.psnr_db.size());
    CHECK(r.mean_psnr == doctest::Approx(m).epsilon(1e-12));
}

TEST_CASE("evaluate_volume every-s-th mode picks the stride lattice") {
    Volume ref = testutil::random_volume({12, 16, 16}, 41);
    for (auto& v : ref.data) v = static_cast<u16>(1 + v % 30000);
    Volume pred = testutil::random_volume({12, 16, 16}, 42);
    MetricsReport r = evaluate_volume(pred, ref, 4, EvalMode::every_sth);
    CHECK(r.slice_index == std::vector<std::size_t>{0, 4, 8});
    CHECK(r.mode == EvalMode::every_sth);
    CHECK(r.scale == 4);
}

TEST_CASE("evaluate_volume error contracts") {
    Volume a = testutil::random_volume({4, 16, 16}, 43);
    Volume b = testutil::random_volume({5, 16, 16}, 44);
    auto [threw, kind] = catch_kind([&] { evaluate_volume(a, b, 2, EvalMode::every_slice); });
    CHECK(threw);
    CHECK(kind == ErrorKind::invalid_input);

    Volume zeros = Volume::filled({4, 16, 16}, {1, 1, 1}, 0);
    auto [threw2, kind2] =
        catch_kind([&] { evaluate_volume(a, zeros, 2, EvalMode::every_slice); });
    CHECK(threw2);
    CHECK(kind2 == ErrorKind::invalid_input);
}

TEST_CASE("metric rows render in the table style") {
    CHECK(format_metrics_row(19.083, 0.67791, 0.27457) == "19.08 / .6779 / .2746");
    CHECK(format_metrics_row(100.0, 1.0, 0.0) == "100.00 / 1.0000 / .0000");
    CHECK(format_metrics_row(26.297, 0.75434, 0.12317) == "26.30 / .7543 / .1232");
}

TEST_CASE("csv report has the documented columns and a trailing mean row") {
    Volume ref = testutil::random_volume({4, 16, 16}, 47);
    for (auto& v : ref.data) v = static_cast<u16>(1 + v % 30000);
    Volume pred = testutil::random_volume({4, 16, 16}, 48);
    MetricsReport r = evaluate_volume(pred, ref, 2, EvalMode::every_slice);

    std::ostringstream os;
    write_report_csv(r, os);
    std::istringstream is(os.str());
    std::string line;
    std::getline(is, line);
    CHECK(line == "slice_index,psnr_db,ssim,nrmse,tv");
    std::vector<std::string> rows;
    while (std::getline(is, line)) rows.push_back(line);
    REQUIRE(rows.size() == 5);
    CHECK(rows.back().substr(0, 5) == "mean,");
    for (std::size_t i = 0; i + 1 < rows.size(); ++i)
        CHECK(rows[i].substr(0, 2) == std::to_string(i) + ",");
}

TEST_CASE("json report round-trips the per-slice arrays") {
    Volume ref = testutil::random_volume({4, 16, 16}, 49);
    for (auto& v : ref.data) v = static_cast<u16>(1 + v % 30000);
    Volume pred = testutil::random_volume({4, 16, 16}, 50);
    MetricsReport r = evaluate_volume(pred, ref, 2, EvalMode::every_slice);

    auto j = nlohmann::json::parse(report_to_json(r));
    CHECK(j.at("scale") == 2);
    CHECK(j.at("mode") == "every_slice");
    REQUIRE(j.at("slices").size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(j["slices"][i].at("index") == r.slice_index[i]);
        CHECK(j["slices"][i].at("psnr_db").get<double>() ==
              doctest::Approx(r.psnr_db[i]).epsilon(1e-12));
    }
    CHECK(j.at("mean").at("psnr_db").get<double>() ==
          doctest::Approx(r.mean_psnr).epsilon(1e-12));
    CHECK(j.at("row") == format_metrics_row(r.mean_psnr, r.mean_ssim, r.mean_nrmse));
}
