#pragma once

#include <atomic>
#include <memory>
#include <optional>
#include <thread>

#include "voxsr/store.hpp"
#include "voxsr/types.hpp"

namespace voxsr {

struct AugmentRecord {
    bool flip_z = false, flip_y = false, flip_x = false;
    int rotation = 0;  // index into the 24 axis-aligned cube rotations
    double contrast = 1.0;
    double gain = 1.0;
};

// Accounting token: subtracts its byte count from the sampler's live counter
// on destruction.
class ByteLease {
public:
    ByteLease() = default;
    ByteLease(std::atomic<i64>* counter, i64 bytes);
    ByteLease(ByteLease&& other) noexcept;
    ByteLease& operator=(ByteLease&& other) noexcept;
    ByteLease(const ByteLease&) = delete;
    ByteLease& operator=(const ByteLease&) = delete;
    ~ByteLease();

private:
    std::atomic<i64>* counter_ = nullptr;
    i64 bytes_ = 0;
};

struct PatchPair {
    Volume lr;
    Volume hr;
    u64 sample_id = 0;
    std::size_t source = 0;
    Vec3i lr_origin, hr_origin;
    AugmentRecord aug;
    ByteLease lease;
};

// One store-backed (LR level, HR level) pairing with a sampling z-range in LR
// slices. hr dims must cover scale times the LR sampling box.
struct SampleSource {
    const PyramidStore* store = nullptr;
    std::string lr_group;
    int lr_level = 0;
    std::string hr_group;
    int hr_level = 0;
    std::size_t z_begin = 0, z_end = 0;  // half-open, LR slices
};

struct SamplerConfig {
    int workers = 1;
    int threads_per_worker = 1;
    std::size_t queue_capacity = 4;
    u64 seed = 0;
    int scale = 4;
    Dims3 lr_patch{32, 32, 32};
    double foreground_floor = 0.05;  // min fraction of HR voxels > 0
    std::size_t max_rejects = 1000;  // per descriptor before giving up
    bool augment = true;
    bool flips = true;
    bool rotations = true;
    bool intensity = true;
    std::size_t epoch_size = 1024;  // rounded up to a multiple of workers*threads
};

// Pre-rejection candidate geometry plus augmentation, a pure function of
// (config, sources, epoch, index, attempt).
struct PatchDescriptor {
    u64 sample_id = 0;
    std::size_t source = 0;
    Vec3i lr_origin;
    Vec3i hr_origin;
    AugmentRecord aug;
};

PatchDescriptor draw_descriptor(const SamplerConfig& cfg,
                                const std::vector<SampleSource>& sources, u64 epoch, u64 index,
                                u64 attempt);

// The 24 proper axis-aligned cube rotations as (axis permutation, per-axis
// flip) pairs; rotate_patch applies one plus optional extra flips.
struct CubeRotation {
    std::array<int, 3> perm;   // output axis i reads input axis perm[i]
    std::array<bool, 3> flip;  // flip along input axis
};
const std::array<CubeRotation, 24>& cube_rotations();
Volume remap_patch(const Volume& v, const CubeRotation& rot, bool flip_z, bool flip_y,
                   bool flip_x);

void augment_pair(PatchPair& pair, const AugmentRecord& aug);

// Out-of-core paired-patch stream: workers*threads_per_worker producer
// threads, each with a private bounded queue, merged by a strict round-robin
// collator. With one producer the pair sequence is a pure function of the
// seed; with several, the multiset of each epoch is.
class PatchSampler {
public:
    PatchSampler(std::vector<SampleSource> sources, SamplerConfig cfg);
    ~PatchSampler();
    PatchSampler(const PatchSampler&) = delete;
    PatchSampler& operator=(const PatchSampler&) = delete;

    // Blocking; rethrows producer errors (store read failures and the like).
    PatchPair next();

    struct Stats {
        i64 live_patch_bytes = 0;
        i64 peak_patch_bytes = 0;
        u64 produced = 0;
        u64 rejected = 0;
    };
    Stats stats() const;

    std::size_t producer_count() const { return queues_.size(); }

private:
    struct Queue;
    struct Producer;

    void producer_loop(std::size_t thread_index);

    std::vector<SampleSource> sources_;
    SamplerConfig cfg_;
    std::size_t epoch_size_ = 0;

    std::vector<std::unique_ptr<Queue>> queues_;
    std::vector<std::thread> threads_;
    std::size_t next_queue_ = 0;
    std::atomic<bool> stop_{false};

    std::atomic<i64> live_bytes_{0};
    std::atomic<i64> peak_bytes_{0};
    std::atomic<u64> produced_{0};
    std::atomic<u64> rejected_{0};
};

}  // namespace voxsr
