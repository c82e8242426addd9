#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <chrono>
#include <set>
#include <thread>
#include <tuple>
#include <vector>

#include "doctest.h"
#include "test_util.hpp"
#include "voxsr/phantom.hpp"
#include "voxsr/pyramid.hpp"
#include "voxsr/sampler.hpp"
#include "voxsr/store.hpp"

using namespace voxsr;
using namespace voxsr::testutil;

namespace {

// Store with an HR level 0 of the given dims and an LR level 0 that is its
// 4x local-mean downsample. make_data fills the HR volume.
template <typename F>
PyramidStore make_store(const TempDir& dir, Dims3 hr_dims, F make_data) {
    Volume hr;
    hr.dims = hr_dims;
    hr.spacing = {1.0, 1.0, 1.0};
    hr.data.resize(hr_dims.total());
    make_data(hr);
    const Volume lr = degrade_downsample(hr, 4);
    PyramidStore store = PyramidStore::create(dir.path / "store");
    store.write_group("HR", {hr}, {8, 8, 8});
    store.write_group("LR", {lr}, {8, 8, 8});
    return store;
}

void fill_random(Volume& v, u64 seed, u16 lo = 1000, u16 hi = 60000) {
    SplitMix64 rng(seed);
    for (auto& d : v.data)
        d = static_cast<u16>(lo + rng.below(static_cast<u64>(hi - lo) + 1));
}

SampleSource full_source(const PyramidStore& store) {
    SampleSource src;
    src.store = &store;
    src.lr_group = "LR";
    src.lr_level = 0;
    src.hr_group = "HR";
    src.hr_level = 0;
    return src;
}

using DescKey = std::tuple<u64, std::size_t, i64, i64, i64, int, bool, bool, bool, double, double>;

DescKey key_of(const PatchDescriptor& d) {
    return {d.sample_id, d.source,       d.lr_origin.z, d.lr_origin.y,
            d.lr_origin.x, d.aug.rotation, d.aug.flip_z, d.aug.flip_y,
            d.aug.flip_x, d.aug.contrast, d.aug.gain};
}

}  // namespace

TEST_CASE("draw_descriptor is pure and respects bounds") {
    TempDir dir("sampler_desc");
    PyramidStore store = make_store(dir, {64, 48, 40}, [](Volume& v) { fill_random(v, 1); });
    std::vector<SampleSource> sources{full_source(store)};

    SamplerConfig cfg;
    cfg.seed = 99;
    cfg.scale = 4;
    cfg.lr_patch = {8, 8, 8};

    // Purity: the same coordinates give the same descriptor.
    const PatchDescriptor a = draw_descriptor(cfg, sources, 2, 17, 3);
    const PatchDescriptor b = draw_descriptor(cfg, sources, 2, 17, 3);
    CHECK(key_of(a) == key_of(b));
    CHECK(a.sample_id == ((u64(2) << 32) | 17));

    // Bounds, pairing law, and augmentation ranges over many draws. LR level
    // dims are {16, 12, 10}.
    for (u64 index = 0; index < 200; ++index) {
        const PatchDescriptor d = draw_descriptor(cfg, sources, 0, index, index % 3);
        CHECK(d.lr_origin.z >= 0);
        CHECK(d.lr_origin.z <= 16 - 8);
        CHECK(d.lr_origin.y >= 0);
        CHECK(d.lr_origin.y <= 12 - 8);
        CHECK(d.lr_origin.x >= 0);
        CHECK(d.lr_origin.x <= 10 - 8);
        CHECK(d.hr_origin.z == d.lr_origin.z * 4);
        CHECK(d.hr_origin.y == d.lr_origin.y * 4);
        CHECK(d.hr_origin.x == d.lr_origin.x * 4);
        CHECK(d.aug.rotation >= 0);
        CHECK(d.aug.rotation < 24);
        CHECK(d.aug.contrast >= 0.9);
        CHECK(d.aug.contrast <= 1.1);
        CHECK(d.aug.gain >= 0.9);
        CHECK(d.aug.gain <= 1.1);
    }

    // Toggles: no flips / no rotations / no intensity jitter.
    cfg.flips = false;
    cfg.intensity = false;
    for (u64 index = 0; index < 50; ++index) {
        const PatchDescriptor d = draw_descriptor(cfg, sources, 0, index, 0);
        CHECK_FALSE(d.aug.flip_z);
        CHECK_FALSE(d.aug.flip_y);
        CHECK_FALSE(d.aug.flip_x);
        CHECK(d.aug.contrast == 1.0);
        CHECK(d.aug.gain == 1.0);
    }
    cfg.flips = true;
    cfg.intensity = true;
    cfg.lr_patch = {4, 8, 8};  // non-cubic patches cannot rotate
    for (u64 index = 0; index < 50; ++index)
        CHECK(draw_descriptor(cfg, sources, 0, index, 0).aug.rotation == 0);
}

TEST_CASE("patches never leave their configured z-range") {
    TempDir dir("sampler_split");
    PyramidStore store = make_store(dir, {64, 48, 40}, [](Volume& v) { fill_random(v, 2); });

    // Train takes LR slices [0, 8), test takes [8, 16); patches of z-depth 4
    // drawn from either source must stay on their own side of the boundary.
    SampleSource train = full_source(store);
    train.z_begin = 0;
    train.z_end = 8;
    SampleSource test = full_source(store);
    test.z_begin = 8;
    test.z_end = 16;
    std::vector<SampleSource> sources{train, test};

    SamplerConfig cfg;
    cfg.seed = 5;
    cfg.lr_patch = {4, 8, 8};

    for (u64 index = 0; index < 300; ++index) {
        const PatchDescriptor d = draw_descriptor(cfg, sources, 0, index, 0);
        if (d.source == 0) {
            CHECK(d.lr_origin.z >= 0);
            CHECK(d.lr_origin.z + 4 <= 8);
        } else {
            CHECK(d.lr_origin.z >= 8);
            CHECK(d.lr_origin.z + 4 <= 16);
        }
    }

    PatchSampler sampler(sources, cfg);
    std::set<std::size_t> seen;
    for (int i = 0; i < 40; ++i) {
        const PatchPair p = sampler.next();
        seen.insert(p.source);
        const i64 lo = p.source == 0 ? 0 : 8;
        CHECK(p.lr_origin.z >= lo);
        CHECK(p.lr_origin.z + 4 <= lo + 8);
    }
    CHECK(seen.size() == 2);  // both sides get sampled
}

TEST_CASE("single-producer stream is a pure function of the seed") {
    TempDir dir("sampler_seq");
    PyramidStore store = make_store(dir, {64, 48, 40}, [](Volume& v) { fill_random(v, 3); });
    std::vector<SampleSource> sources{full_source(store)};

    SamplerConfig cfg;
    cfg.seed = 1234;
    cfg.lr_patch = {8, 8, 8};
    cfg.augment = false;  // compare raw store content below

    std::vector<DescKey> run1, run2;
    std::vector<std::vector<u16>> lr1;
    {
        PatchSampler s(sources, cfg);
        for (int i = 0; i < 20; ++i) {
            PatchPair p = s.next();
            PatchDescriptor d;
            d.sample_id = p.sample_id;
            d.source = p.source;
            d.lr_origin = p.lr_origin;
            d.aug = p.aug;
            run1.push_back(key_of(d));
            lr1.push_back(p.lr.data);

            // PatchPair invariants: dims pairing, origin pairing, content.
            CHECK(p.hr.dims.z == p.lr.dims.z * 4);
            CHECK(p.hr.dims.y == p.lr.dims.y * 4);
            CHECK(p.hr.dims.x == p.lr.dims.x * 4);
            CHECK(p.hr_origin.z == p.lr_origin.z * 4);
            const Volume direct = store.read_region("LR", 0, p.lr_origin, {8, 8, 8});
            CHECK(p.lr.data == direct.data);
        }
    }
    {
        PatchSampler s(sources, cfg);
        for (int i = 0; i < 20; ++i) {
            PatchPair p = s.next();
            PatchDescriptor d;
            d.sample_id = p.sample_id;
            d.source = p.source;
            d.lr_origin = p.lr_origin;
            d.aug = p.aug;
            run2.push_back(key_of(d));
            CHECK(p.lr.data == lr1[static_cast<std::size_t>(i)]);
        }
    }
    CHECK(run1 == run2);
}

TEST_CASE("multi-producer epoch multiset is seed-deterministic") {
    TempDir dir("sampler_multi");
    PyramidStore store = make_store(dir, {64, 48, 40}, [](Volume& v) { fill_random(v, 4); });
    std::vector<SampleSource> sources{full_source(store)};

    SamplerConfig cfg;
    cfg.seed = 777;
    cfg.workers = 2;
    cfg.threads_per_worker = 2;
    cfg.queue_capacity = 2;
    cfg.lr_patch = {8, 8, 8};
    cfg.epoch_size = 16;

    auto epoch_multiset = [&] {
        PatchSampler s(sources, cfg);
        CHECK(s.producer_count() == 4);
        std::vector<DescKey> keys;
        for (int i = 0; i < 16; ++i) {
            PatchPair p = s.next();
            CHECK((p.sample_id >> 32) == 0);  // first epoch only
            PatchDescriptor d;
            d.sample_id = p.sample_id;
            d.source = p.source;
            d.lr_origin = p.lr_origin;
            d.aug = p.aug;
            keys.push_back(key_of(d));
        }
        std::sort(keys.begin(), keys.end());
        return keys;
    };

    const auto a = epoch_multiset();
    const auto b = epoch_multiset();
    CHECK(a == b);
    CHECK(std::adjacent_find(a.begin(), a.end()) == a.end());  // ids unique
}

TEST_CASE("foreground floor rejects empty patches") {
    TempDir dir("sampler_fg");
    // HR slices z < 32 are empty, z >= 32 are bright; the LR downsample
    // inherits the same split at z = 8.
    PyramidStore store = make_store(dir, {64, 48, 40}, [](Volume& v) {
        fill_random(v, 5, 5000, 60000);
        std::fill(v.data.begin(), v.data.begin() + static_cast<std::ptrdiff_t>(32 * 48 * 40), 0);
    });
    std::vector<SampleSource> sources{full_source(store)};

    SamplerConfig cfg;
    cfg.seed = 6;
    cfg.lr_patch = {8, 8, 8};
    cfg.foreground_floor = 0.5;

    PatchSampler sampler(sources, cfg);
    for (int i = 0; i < 40; ++i) {
        const PatchPair p = sampler.next();
        std::size_t fg = 0;
        for (u16 v : p.hr.data) fg += v > 0;
        CHECK(static_cast<double>(fg) >= 0.5 * static_cast<double>(p.hr.data.size()));
    }
    CHECK(sampler.stats().rejected > 0);
    // The producer counts a pair after pushing it, so the count may lag the
    // consumer by one per producer.
    CHECK(sampler.stats().produced >= 39);
}

TEST_CASE("an unattainable foreground floor surfaces a config error") {
    TempDir dir("sampler_fg_err");
    PyramidStore store = make_store(dir, {32, 32, 32}, [](Volume& v) {
        std::fill(v.data.begin(), v.data.end(), 0);
    });
    std::vector<SampleSource> sources{full_source(store)};

    SamplerConfig cfg;
    cfg.lr_patch = {8, 8, 8};
    cfg.foreground_floor = 0.05;
    cfg.max_rejects = 5;

    PatchSampler sampler(sources, cfg);
    auto [threw, kind] = catch_kind([&] { (void)sampler.next(); });
    CHECK(threw);
    CHECK(kind == ErrorKind::config);
}

TEST_CASE("store read failures surface with the chunk key and do not deadlock") {
    TempDir dir("sampler_corrupt");
    PyramidStore store = make_store(dir, {64, 48, 40}, [](Volume& v) { fill_random(v, 7); });
    // Truncate one LR chunk; the only possible patch covers it.
    std::filesystem::resize_file(dir.path / "store" / "LR" / "0" / "0.0.0", 3);

    std::vector<SampleSource> sources{full_source(store)};
    SamplerConfig cfg;
    cfg.lr_patch = {16, 12, 10};  // the whole LR level

    PatchSampler sampler(sources, cfg);
    try {
        (void)sampler.next();
        FAIL("expected a storage error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::storage);
        CHECK(e.detail().find("0.0.0") != std::string::npos);
    }
}

TEST_CASE("queues stay bounded while the consumer stalls and resume afterwards") {
    TempDir dir("sampler_stall");
    PyramidStore store = make_store(dir, {64, 48, 40}, [](Volume& v) { fill_random(v, 8); });
    std::vector<SampleSource> sources{full_source(store)};

    SamplerConfig cfg;
    cfg.lr_patch = {8, 8, 8};
    cfg.queue_capacity = 2;

    const i64 pair_bytes = static_cast<i64>((8 * 8 * 8 + 32 * 32 * 32) * sizeof(u16));

    PatchSampler sampler(sources, cfg);
    std::this_thread::sleep_for(std::chrono::milliseconds(200));
    // One producer: at most queue_capacity queued plus one pair in flight.
    CHECK(sampler.stats().live_patch_bytes <= (2 + 1) * pair_bytes);
    CHECK(sampler.stats().peak_patch_bytes <= (2 + 1) * pair_bytes);
    CHECK(sampler.stats().produced >= 1);

    for (int i = 0; i < 10; ++i) {
        const PatchPair p = sampler.next();
        CHECK(p.lr.data.size() == 8 * 8 * 8);
    }
    CHECK(sampler.stats().produced >= 9);  // counted after the push
    // Consumed pairs released their leases; the counter stays bounded.
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
    CHECK(sampler.stats().live_patch_bytes <= (2 + 2) * pair_bytes);
}

TEST_CASE("cube rotation table holds exactly the 24 proper rotations") {
    const auto& rots = cube_rotations();
    REQUIRE(rots.size() == 24);

    std::set<std::pair<std::array<int, 3>, std::array<bool, 3>>> unique;
    for (const CubeRotation& r : rots) {
        unique.insert({r.perm, r.flip});
        int inversions = 0;
        for (int i = 0; i < 3; ++i)
            for (int j = i + 1; j < 3; ++j)
                if (r.perm[static_cast<std::size_t>(i)] > r.perm[static_cast<std::size_t>(j)])
                    ++inversions;
        const int perm_sign = inversions % 2 == 0 ? 1 : -1;
        int flip_sign = 1;
        for (bool f : r.flip)
            if (f) flip_sign = -flip_sign;
        CHECK(perm_sign * flip_sign == 1);  // determinant +1
    }
    CHECK(unique.size() == 24);

    // Index 0 is the identity.
    CHECK(rots[0].perm == std::array<int, 3>{0, 1, 2});
    CHECK(rots[0].flip == std::array<bool, 3>{false, false, false});

    // On an asymmetric cube the 24 rotations give 24 distinct images, all
    // permutations of the same voxels.
    Volume v;
    v.dims = {2, 2, 2};
    v.spacing = {1.0, 1.0, 1.0};
    v.data = {10, 20, 30, 40, 50, 60, 70, 80};
    std::set<std::vector<u16>> images;
    for (const CubeRotation& r : rots) {
        Volume out = remap_patch(v, r, false, false, false);
        std::vector<u16> sorted = out.data;
        std::sort(sorted.begin(), sorted.end());
        CHECK(sorted == v.data);
        images.insert(out.data);
    }
    CHECK(images.size() == 24);
}

TEST_CASE("remap_patch permutes dims, spacing and voxels consistently") {
    Volume v;
    v.dims = {2, 3, 4};
    v.spacing = {1.0, 2.0, 3.0};
    v.data.resize(v.dims.total());
    v.mask.resize(v.dims.total());
    for (std::size_t i = 0; i < v.data.size(); ++i) {
        v.data[i] = static_cast<u16>(100 + i);
        v.mask[i] = i % 2;
    }

    for (const CubeRotation& rot : cube_rotations()) {
        for (bool fx : {false, true}) {
            const Volume out = remap_patch(v, rot, false, false, fx);
            const std::array<std::size_t, 3> in_dims{v.dims.z, v.dims.y, v.dims.x};
            const std::array<double, 3> in_spc{v.spacing.z, v.spacing.y, v.spacing.x};
            CHECK(out.dims.z == in_dims[static_cast<std::size_t>(rot.perm[0])]);
            CHECK(out.dims.y == in_dims[static_cast<std::size_t>(rot.perm[1])]);
            CHECK(out.dims.x == in_dims[static_cast<std::size_t>(rot.perm[2])]);
            CHECK(out.spacing.z == in_spc[static_cast<std::size_t>(rot.perm[0])]);

            // Re-derive the source coordinate for a few output voxels.
            const std::array<bool, 3> extra{false, false, fx};
            const std::array<std::size_t, 3> od{out.dims.z, out.dims.y, out.dims.x};
            for (std::size_t oz = 0; oz < od[0]; ++oz)
                for (std::size_t oy = 0; oy < od[1]; ++oy)
                    for (std::size_t ox = 0; ox < od[2]; ++ox) {
                        const std::array<std::size_t, 3> o{oz, oy, ox};
                        std::array<std::size_t, 3> in{};
                        for (int i = 0; i < 3; ++i) {
                            const auto axis = static_cast<std::size_t>(rot.perm[i]);
                            const bool f = rot.flip[axis] != extra[axis];
                            in[axis] = f ? in_dims[axis] - 1 - o[static_cast<std::size_t>(i)]
                                         : o[static_cast<std::size_t>(i)];
                        }
                        CHECK(out.at(oz, oy, ox) == v.at(in[0], in[1], in[2]));
                    }
        }
    }
}

TEST_CASE("block mean commutes with cube rotations") {
    Volume hr;
    hr.dims = {16, 16, 16};
    hr.spacing = {1.0, 1.0, 1.0};
    hr.data.resize(hr.dims.total());
    fill_random(hr, 31);

    for (const CubeRotation& rot : cube_rotations()) {
        const Volume a = degrade_downsample(remap_patch(hr, rot, false, false, false), 4);
        const Volume b = remap_patch(degrade_downsample(hr, 4), rot, false, false, false);
        CHECK(a.data == b.data);
    }
    // And with extra flips on top of a rotation.
    const CubeRotation& rot = cube_rotations()[13];
    const Volume a = degrade_downsample(remap_patch(hr, rot, true, false, true), 4);
    const Volume b = remap_patch(degrade_downsample(hr, 4), rot, true, false, true);
    CHECK(a.data == b.data);
}

TEST_CASE("augment_pair identity, involution and shared intensity law") {
    auto make_pair = [] {
        PatchPair p;
        p.lr.dims = {4, 4, 4};
        p.lr.spacing = {1.0, 1.0, 1.0};
        p.lr.data.resize(64);
        SplitMix64 rng(17);
        for (auto& d : p.lr.data) d = static_cast<u16>(rng.below(65536));
        p.hr.dims = {8, 8, 8};
        p.hr.spacing = {0.5, 0.5, 0.5};
        p.hr.data.resize(512);
        for (auto& d : p.hr.data) d = static_cast<u16>(rng.below(65536));
        return p;
    };

    SUBCASE("all toggles off is the identity") {
        PatchPair p = make_pair();
        const std::vector<u16> lr0 = p.lr.data, hr0 = p.hr.data;
        augment_pair(p, AugmentRecord{});
        CHECK(p.lr.data == lr0);
        CHECK(p.hr.data == hr0);
    }
    SUBCASE("double x-flip is the identity") {
        PatchPair p = make_pair();
        const std::vector<u16> lr0 = p.lr.data, hr0 = p.hr.data;
        AugmentRecord aug;
        aug.flip_x = true;
        augment_pair(p, aug);
        CHECK(p.lr.data != lr0);
        augment_pair(p, aug);
        CHECK(p.lr.data == lr0);
        CHECK(p.hr.data == hr0);
    }
    SUBCASE("geometric transform is shared by both members") {
        PatchPair p;
        p.hr.dims = {8, 8, 8};
        p.hr.spacing = {1.0, 1.0, 1.0};
        p.hr.data.resize(512);
        SplitMix64 rng(23);
        for (auto& d : p.hr.data) d = static_cast<u16>(rng.below(65536));
        p.lr = degrade_downsample(p.hr, 2);
        AugmentRecord aug;
        aug.rotation = 7;
        aug.flip_y = true;
        augment_pair(p, aug);
        // The LR member stays the exact downsample of the HR member.
        CHECK(p.lr.data == degrade_downsample(p.hr, 2).data);
    }
    SUBCASE("contrast and gain follow the pivot law on both members") {
        PatchPair p;
        p.lr.dims = {2, 2, 2};
        p.lr.spacing = {1.0, 1.0, 1.0};
        p.lr.data.assign(8, 20000);
        p.hr.dims = {4, 4, 4};
        p.hr.spacing = {0.5, 0.5, 0.5};
        p.hr.data.assign(64, 20000);
        AugmentRecord aug;
        aug.contrast = 1.05;
        aug.gain = 0.95;
        augment_pair(p, aug);
        const u16 want = quantize_u16(0.95 * (32767.5 + 1.05 * (20000.0 - 32767.5)));
        CHECK(std::all_of(p.lr.data.begin(), p.lr.data.end(),
                          [&](u16 x) { return x == want; }));
        CHECK(std::all_of(p.hr.data.begin(), p.hr.data.end(),
                          [&](u16 x) { return x == want; }));
        CHECK(p.aug.contrast == 1.05);
    }
}

TEST_CASE("sampler configuration validation") {
    TempDir dir("sampler_cfg");
    PyramidStore store = make_store(dir, {64, 48, 40}, [](Volume& v) { fill_random(v, 9); });
    std::vector<SampleSource> sources{full_source(store)};

    auto expect_config = [&](auto mutate_cfg, std::vector<SampleSource> srcs) {
        SamplerConfig cfg;
        cfg.lr_patch = {8, 8, 8};
        mutate_cfg(cfg);
        auto [threw, kind] = catch_kind([&] { PatchSampler s(std::move(srcs), cfg); });
        CHECK(threw);
        CHECK(kind == ErrorKind::config);
    };

    expect_config([](SamplerConfig& c) { c.workers = 0; }, sources);
    expect_config([](SamplerConfig& c) { c.threads_per_worker = 0; }, sources);
    expect_config([](SamplerConfig& c) { c.queue_capacity = 0; }, sources);
    expect_config([](SamplerConfig& c) { c.scale = 3; }, sources);
    expect_config([](SamplerConfig& c) { c.foreground_floor = -0.1; }, sources);
    expect_config([](SamplerConfig& c) { c.foreground_floor = 1.5; }, sources);
    expect_config([](SamplerConfig& c) { c.epoch_size = 0; }, sources);
    expect_config([](SamplerConfig&) {}, {});

    // Patch larger than the level.
    expect_config([](SamplerConfig& c) { c.lr_patch = {32, 32, 32}; }, sources);

    // Bad z-ranges.
    {
        SampleSource bad = full_source(store);
        bad.z_begin = 12;
        bad.z_end = 10;
        expect_config([](SamplerConfig&) {}, {bad});
        bad.z_begin = 0;
        bad.z_end = 99;
        expect_config([](SamplerConfig&) {}, {bad});
        bad.z_begin = 4;
        bad.z_end = 8;  // shorter than the patch depth
        expect_config([](SamplerConfig&) {}, {bad});
    }

    // A level pair the store does not expose is a config error.
    {
        SampleSource missing = full_source(store);
        missing.hr_level = 3;
        expect_config([](SamplerConfig&) {}, {missing});
    }
}
