#include "voxsr/sampler.hpp"

#include <algorithm>
#include <condition_variable>
#include <deque>
#include <mutex>
#include <variant>

#include "voxsr/rng.hpp"

namespace voxsr {

ByteLease::ByteLease(std::atomic<i64>* counter, i64 bytes) : counter_(counter), bytes_(bytes) {}

ByteLease::ByteLease(ByteLease&& other) noexcept : counter_(other.counter_), bytes_(other.bytes_) {
    other.counter_ = nullptr;
    other.bytes_ = 0;
}

ByteLease& ByteLease::operator=(ByteLease&& other) noexcept {
    if (this != &other) {
        if (counter_) counter_->fetch_sub(bytes_, std::memory_order_relaxed);
        counter_ = other.counter_;
        bytes_ = other.bytes_;
        other.counter_ = nullptr;
        other.bytes_ = 0;
    }
    return *this;
}

ByteLease::~ByteLease() {
    if (counter_) counter_->fetch_sub(bytes_, std::memory_order_relaxed);
}

namespace {

struct SourceBounds {
    Dims3 lr_dims;   // usable LR dims (limited by floor(hr/scale))
    Dims3 hr_dims;   // HR level dims
    std::size_t z_begin = 0, z_end = 0;
};

SourceBounds source_bounds(const SampleSource& src, const SamplerConfig& cfg) {
    if (!src.store) fail(ErrorKind::config, "sample", "source without a store");
    LevelMeta lr, hr;
    try {
        lr = src.store->level_meta(src.lr_group, src.lr_level);
        hr = src.store->level_meta(src.hr_group, src.hr_level);
    } catch (const Error& e) {
        // A source naming a level pair the store does not expose is a
        // configuration mistake, not a storage fault.
        fail(ErrorKind::config, "sample", e.detail());
    }
    const auto s = static_cast<std::size_t>(cfg.scale);

    SourceBounds b;
    b.hr_dims = hr.shape;
    b.lr_dims = {std::min(lr.shape.z, hr.shape.z / s), std::min(lr.shape.y, hr.shape.y / s),
                 std::min(lr.shape.x, hr.shape.x / s)};
    if (b.lr_dims.z < cfg.lr_patch.z || b.lr_dims.y < cfg.lr_patch.y ||
        b.lr_dims.x < cfg.lr_patch.x)
        fail(ErrorKind::config, "sample",
             "level pair " + src.lr_group + "/" + std::to_string(src.lr_level) + " vs " +
                 src.hr_group + "/" + std::to_string(src.hr_level) +
                 " cannot fit the patch at scale " + std::to_string(cfg.scale));

    b.z_begin = src.z_begin;
    b.z_end = src.z_end == 0 && src.z_begin == 0 ? b.lr_dims.z : src.z_end;
    if (b.z_end > b.lr_dims.z || b.z_begin >= b.z_end)
        fail(ErrorKind::config, "sample", "bad sampling z-range for " + src.lr_group);
    if (b.z_end - b.z_begin < cfg.lr_patch.z)
        fail(ErrorKind::config, "sample",
             "sampling z-range of " + src.lr_group + " is shorter than the patch");
    return b;
}

}  // namespace

PatchDescriptor draw_descriptor(const SamplerConfig& cfg,
                                const std::vector<SampleSource>& sources, u64 epoch, u64 index,
                                u64 attempt) {
    if (sources.empty()) fail(ErrorKind::config, "sample", "no sources");
    SplitMix64 rng(hash_combine(hash_combine(hash_combine(cfg.seed, epoch), index), attempt));

    PatchDescriptor d;
    d.sample_id = (epoch << 32) | (index & 0xFFFFFFFFull);
    d.source = sources.size() == 1 ? 0 : static_cast<std::size_t>(rng.below(sources.size()));
    const SampleSource& src = sources[d.source];
    const SourceBounds b = source_bounds(src, cfg);

    const std::size_t z_lo = b.z_begin;
    const std::size_t z_hi = b.z_end - cfg.lr_patch.z;  // inclusive
    d.lr_origin.z = static_cast<i64>(z_lo + rng.below(z_hi - z_lo + 1));
    d.lr_origin.y = static_cast<i64>(rng.below(b.lr_dims.y - cfg.lr_patch.y + 1));
    d.lr_origin.x = static_cast<i64>(rng.below(b.lr_dims.x - cfg.lr_patch.x + 1));
    d.hr_origin = {d.lr_origin.z * cfg.scale, d.lr_origin.y * cfg.scale,
                   d.lr_origin.x * cfg.scale};

    if (cfg.augment) {
        const bool cubic = cfg.lr_patch.z == cfg.lr_patch.y && cfg.lr_patch.y == cfg.lr_patch.x;
        if (cfg.flips) {
            d.aug.flip_z = rng.below(2) != 0;
            d.aug.flip_y = rng.below(2) != 0;
            d.aug.flip_x = rng.below(2) != 0;
        }
        if (cfg.rotations && cubic) d.aug.rotation = static_cast<int>(rng.below(24));
        if (cfg.intensity) {
            d.aug.contrast = rng.uniform(0.9, 1.1);
            d.aug.gain = rng.uniform(0.9, 1.1);
        }
    }
    return d;
}

const std::array<CubeRotation, 24>& cube_rotations() {
    static const std::array<CubeRotation, 24> table = [] {
        std::array<CubeRotation, 24> out{};
        std::array<std::array<int, 3>, 6> perms{
            {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}}};
        std::size_t n = 0;
        for (const auto& perm : perms) {
            // permutation parity via inversion count
            int inversions = 0;
            for (int i = 0; i < 3; ++i)
                for (int j = i + 1; j < 3; ++j)
                    if (perm[i] > perm[j]) ++inversions;
            const int perm_sign = inversions % 2 == 0 ? 1 : -1;
            for (int bits = 0; bits < 8; ++bits) {
                const std::array<bool, 3> flip{(bits & 4) != 0, (bits & 2) != 0, (bits & 1) != 0};
                const int flip_sign = ((bits & 4) ? -1 : 1) * ((bits & 2) ? -1 : 1) *
                                      ((bits & 1) ? -1 : 1);
                if (perm_sign * flip_sign != 1) continue;  // proper rotations only
                out[n++] = CubeRotation{perm, flip};
            }
        }
        return out;
    }();
    return table;
}

Volume remap_patch(const Volume& v, const CubeRotation& rot, bool flip_z, bool flip_y,
                   bool flip_x) {
    const std::array<std::size_t, 3> in_dims{v.dims.z, v.dims.y, v.dims.x};
    const std::array<double, 3> in_spacing{v.spacing.z, v.spacing.y, v.spacing.x};
    const std::array<bool, 3> extra{flip_z, flip_y, flip_x};
    std::array<bool, 3> flip{};
    for (int a = 0; a < 3; ++a) flip[a] = rot.flip[a] != extra[a];

    Volume out;
    out.dims = {in_dims[static_cast<std::size_t>(rot.perm[0])],
                in_dims[static_cast<std::size_t>(rot.perm[1])],
                in_dims[static_cast<std::size_t>(rot.perm[2])]};
    out.spacing = {in_spacing[static_cast<std::size_t>(rot.perm[0])],
                   in_spacing[static_cast<std::size_t>(rot.perm[1])],
                   in_spacing[static_cast<std::size_t>(rot.perm[2])]};
    out.origin = v.origin;
    out.data.resize(out.dims.total());
    if (v.has_mask()) out.mask.resize(out.dims.total());

    const std::size_t in_sy = v.dims.x;
    const std::size_t in_sz = v.dims.y * v.dims.x;
    const std::array<std::size_t, 3> in_stride{in_sz, in_sy, 1};

    std::array<std::size_t, 3> o{};
    std::size_t dst = 0;
    for (o[0] = 0; o[0] < out.dims.z; ++o[0])
        for (o[1] = 0; o[1] < out.dims.y; ++o[1])
            for (o[2] = 0; o[2] < out.dims.x; ++o[2], ++dst) {
                std::size_t src = 0;
                for (int i = 0; i < 3; ++i) {
                    const auto axis = static_cast<std::size_t>(rot.perm[i]);
                    const std::size_t coord = flip[axis] ? in_dims[axis] - 1 - o[static_cast<std::size_t>(i)]
                                                         : o[static_cast<std::size_t>(i)];
                    src += coord * in_stride[axis];
                }
                out.data[dst] = v.data[src];
                if (v.has_mask()) out.mask[dst] = v.mask[src];
            }
    return out;
}

void augment_pair(PatchPair& pair, const AugmentRecord& aug) {
    const CubeRotation& rot = cube_rotations()[static_cast<std::size_t>(aug.rotation)];
    const bool geometric = aug.rotation != 0 || aug.flip_z || aug.flip_y || aug.flip_x;
    if (geometric) {
        pair.lr = remap_patch(pair.lr, rot, aug.flip_z, aug.flip_y, aug.flip_x);
        pair.hr = remap_patch(pair.hr, rot, aug.flip_z, aug.flip_y, aug.flip_x);
    }
    if (aug.contrast != 1.0 || aug.gain != 1.0) {
        constexpr double pivot = 32767.5;
        auto adjust = [&](Volume& v) {
            for (u16& d : v.data)
                d = quantize_u16(aug.gain * (pivot + aug.contrast * (d - pivot)));
        };
        adjust(pair.lr);
        adjust(pair.hr);
    }
    pair.aug = aug;
}

struct PatchSampler::Queue {
    std::mutex m;
    std::condition_variable cv_push, cv_pop;
    std::deque<std::variant<PatchPair, std::exception_ptr>> items;
    bool done = false;
};

PatchSampler::PatchSampler(std::vector<SampleSource> sources, SamplerConfig cfg)
    : sources_(std::move(sources)), cfg_(cfg) {
    if (cfg_.workers < 1 || cfg_.threads_per_worker < 1 || cfg_.queue_capacity < 1)
        fail(ErrorKind::config, "sample", "workers, threads and queue capacity must be >= 1");
    if (cfg_.scale != 2 && cfg_.scale != 4 && cfg_.scale != 8)
        fail(ErrorKind::config, "sample", "scale must be 2, 4 or 8");
    if (cfg_.lr_patch.total() == 0) fail(ErrorKind::config, "sample", "empty patch dims");
    if (cfg_.foreground_floor < 0.0 || cfg_.foreground_floor > 1.0)
        fail(ErrorKind::config, "sample", "foreground floor must be in [0,1]");
    if (cfg_.epoch_size == 0) fail(ErrorKind::config, "sample", "epoch size must be positive");
    if (sources_.empty()) fail(ErrorKind::config, "sample", "no sources");
    for (const SampleSource& src : sources_) source_bounds(src, cfg_);  // validate early

    const auto producers =
        static_cast<std::size_t>(cfg_.workers) * static_cast<std::size_t>(cfg_.threads_per_worker);
    epoch_size_ = (cfg_.epoch_size + producers - 1) / producers * producers;

    queues_.reserve(producers);
    for (std::size_t i = 0; i < producers; ++i) queues_.push_back(std::make_unique<Queue>());
    threads_.reserve(producers);
    for (std::size_t i = 0; i < producers; ++i)
        threads_.emplace_back([this, i] { producer_loop(i); });
}

PatchSampler::~PatchSampler() {
    stop_.store(true, std::memory_order_relaxed);
    for (auto& q : queues_) {
        std::lock_guard<std::mutex> lk(q->m);
        q->cv_push.notify_all();
        q->cv_pop.notify_all();
    }
    for (std::thread& t : threads_) t.join();
}

void PatchSampler::producer_loop(std::size_t thread_index) {
    Queue& q = *queues_[thread_index];
    const std::size_t producers = queues_.size();
    try {
        for (u64 epoch = 0;; ++epoch) {
            for (u64 index = thread_index; index < epoch_size_; index += producers) {
                if (stop_.load(std::memory_order_relaxed)) return;

                // Reserve queue space before building: this queue has a single
                // producer, so the check cannot race with another push, and
                // queued patch bytes stay below capacity * pair bytes.
                {
                    std::unique_lock<std::mutex> lk(q.m);
                    q.cv_push.wait(lk, [&] {
                        return q.items.size() < cfg_.queue_capacity ||
                               stop_.load(std::memory_order_relaxed);
                    });
                    if (stop_.load(std::memory_order_relaxed)) return;
                }

                PatchPair pair;
                bool accepted = false;
                for (u64 attempt = 0; attempt <= cfg_.max_rejects; ++attempt) {
                    PatchDescriptor d = draw_descriptor(cfg_, sources_, epoch, index, attempt);
                    const SampleSource& src = sources_[d.source];
                    const auto s = static_cast<std::size_t>(cfg_.scale);
                    const Dims3 hr_dims{cfg_.lr_patch.z * s, cfg_.lr_patch.y * s,
                                        cfg_.lr_patch.x * s};

                    Volume hr = src.store->read_region(src.hr_group, src.hr_level, d.hr_origin,
                                                       hr_dims);
                    std::size_t fg = 0;
                    for (u16 v : hr.data) fg += v > 0;
                    if (static_cast<double>(fg) <
                        cfg_.foreground_floor * static_cast<double>(hr.data.size())) {
                        rejected_.fetch_add(1, std::memory_order_relaxed);
                        continue;
                    }

                    pair.lr = src.store->read_region(src.lr_group, src.lr_level, d.lr_origin,
                                                     cfg_.lr_patch);
                    pair.hr = std::move(hr);
                    pair.sample_id = d.sample_id;
                    pair.source = d.source;
                    pair.lr_origin = d.lr_origin;
                    pair.hr_origin = d.hr_origin;
                    if (cfg_.augment) augment_pair(pair, d.aug);
                    accepted = true;
                    break;
                }
                if (!accepted)
                    fail(ErrorKind::config, "sample",
                         "no patch above the foreground floor after " +
                             std::to_string(cfg_.max_rejects + 1) + " attempts");

                const auto bytes = static_cast<i64>(
                    (pair.lr.data.size() + pair.hr.data.size()) * sizeof(u16) +
                    pair.lr.mask.size() + pair.hr.mask.size());
                const i64 live = live_bytes_.fetch_add(bytes, std::memory_order_relaxed) + bytes;
                i64 peak = peak_bytes_.load(std::memory_order_relaxed);
                while (live > peak &&
                       !peak_bytes_.compare_exchange_weak(peak, live, std::memory_order_relaxed)) {
                }
                pair.lease = ByteLease(&live_bytes_, bytes);

                {
                    std::unique_lock<std::mutex> lk(q.m);
                    if (stop_.load(std::memory_order_relaxed)) return;
                    q.items.emplace_back(std::move(pair));
                }
                q.cv_pop.notify_one();
                produced_.fetch_add(1, std::memory_order_relaxed);
            }
        }
    } catch (...) {
        // Surface the error through the queue; ignore the capacity bound so a
        // stalled consumer cannot deadlock the report.
        std::unique_lock<std::mutex> lk(q.m);
        q.items.emplace_back(std::current_exception());
        q.done = true;
        lk.unlock();
        q.cv_pop.notify_all();
    }
}

PatchPair PatchSampler::next() {
    for (;;) {
        Queue& q = *queues_[next_queue_];
        std::unique_lock<std::mutex> lk(q.m);
        q.cv_pop.wait(lk, [&] { return !q.items.empty() || q.done; });
        if (q.items.empty())
            fail(ErrorKind::contract, "sample", "producer exited without an item");
        auto item = std::move(q.items.front());
        q.items.pop_front();
        lk.unlock();
        q.cv_push.notify_one();
        next_queue_ = (next_queue_ + 1) % queues_.size();

        if (std::holds_alternative<std::exception_ptr>(item))
            std::rethrow_exception(std::get<std::exception_ptr>(item));
        return std::move(std::get<PatchPair>(item));
    }
}

PatchSampler::Stats PatchSampler::stats() const {
    Stats s;
    s.live_patch_bytes = live_bytes_.load(std::memory_order_relaxed);
    s.peak_patch_bytes = peak_bytes_.load(std::memory_order_relaxed);
    s.produced = produced_.load(std::memory_order_relaxed);
    s.rejected = rejected_.load(std::memory_order_relaxed);
    return s;
}

}  // namespace voxsr
