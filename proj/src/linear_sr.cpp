#include "voxsr/linear_sr.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

namespace voxsr {

namespace {

void check_scale_k(int s, int k) {
    if (s != 2 && s != 4 && s != 8) fail(ErrorKind::config, "sr-fit", "scale must be 2, 4 or 8");
    if (k < 1 || k % 2 == 0) fail(ErrorKind::config, "sr-fit", "neighborhood side must be odd");
}

// Flattened k^3 neighborhood of LR voxel (lz,ly,lx) in [0,1] units, reflected
// at the volume borders, followed by the bias entry 1.
void gather_features(const Volume& lr, int k, i64 lz, i64 ly, i64 lx, double* f) {
    const int r = k / 2;
    std::size_t n = 0;
    for (int a = -r; a <= r; ++a) {
        const std::size_t z = reflect_index(lz + a, static_cast<i64>(lr.dims.z));
        for (int b = -r; b <= r; ++b) {
            const std::size_t y = reflect_index(ly + b, static_cast<i64>(lr.dims.y));
            for (int c = -r; c <= r; ++c) {
                const std::size_t x = reflect_index(lx + c, static_cast<i64>(lr.dims.x));
                f[n++] = lr.at(z, y, x) / 65535.0;
            }
        }
    }
    f[n] = 1.0;
}

// Dense symmetric positive-definite solve via Cholesky; returns false when a
// pivot collapses (rank deficiency).
bool cholesky_solve(std::vector<double> a, std::vector<double>& b, int d) {
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < i; ++j) a[static_cast<std::size_t>(i) * d + j] =
            a[static_cast<std::size_t>(j) * d + i];

    for (int i = 0; i < d; ++i) {
        for (int j = 0; j <= i; ++j) {
            double sum = a[static_cast<std::size_t>(i) * d + j];
            for (int m = 0; m < j; ++m)
                sum -= a[static_cast<std::size_t>(i) * d + m] *
                       a[static_cast<std::size_t>(j) * d + m];
            if (i == j) {
                if (sum <= 1e-12) return false;
                a[static_cast<std::size_t>(i) * d + j] = std::sqrt(sum);
            } else {
                a[static_cast<std::size_t>(i) * d + j] =
                    sum / a[static_cast<std::size_t>(j) * d + j];
            }
        }
    }
    // forward then backward substitution
    for (int i = 0; i < d; ++i) {
        double sum = b[static_cast<std::size_t>(i)];
        for (int m = 0; m < i; ++m)
            sum -= a[static_cast<std::size_t>(i) * d + m] * b[static_cast<std::size_t>(m)];
        b[static_cast<std::size_t>(i)] = sum / a[static_cast<std::size_t>(i) * d + i];
    }
    for (int i = d - 1; i >= 0; --i) {
        double sum = b[static_cast<std::size_t>(i)];
        for (int m = i + 1; m < d; ++m)
            sum -= a[static_cast<std::size_t>(m) * d + i] * b[static_cast<std::size_t>(m)];
        b[static_cast<std::size_t>(i)] = sum / a[static_cast<std::size_t>(i) * d + i];
    }
    return true;
}

}  // namespace

RidgeAccumulator::RidgeAccumulator(int scale, int k) : s_(scale), k_(k), d_(k * k * k + 1) {
    check_scale_k(scale, k);
    const std::size_t phases = static_cast<std::size_t>(s_) * s_ * s_;
    gram_.assign(static_cast<std::size_t>(d_) * d_, 0.0);
    gty_.assign(phases, std::vector<double>(static_cast<std::size_t>(d_), 0.0));
    yy_.assign(phases, 0.0);
}

void RidgeAccumulator::add_pair(const Volume& lr, const Volume& hr) {
    const auto s = static_cast<std::size_t>(s_);
    if (hr.dims.z != lr.dims.z * s || hr.dims.y != lr.dims.y * s || hr.dims.x != lr.dims.x * s)
        fail(ErrorKind::contract, "sr-fit", "hr dims are not scale times lr dims");

    const auto d = static_cast<std::size_t>(d_);
    std::vector<double> f(d);
    for (std::size_t lz = 0; lz < lr.dims.z; ++lz)
        for (std::size_t ly = 0; ly < lr.dims.y; ++ly)
            for (std::size_t lx = 0; lx < lr.dims.x; ++lx) {
                gather_features(lr, k_, static_cast<i64>(lz), static_cast<i64>(ly),
                                static_cast<i64>(lx), f.data());
                for (std::size_t i = 0; i < d; ++i) {
                    const double fi = f[i];
                    double* row = gram_.data() + i * d;
                    for (std::size_t j = i; j < d; ++j) row[j] += fi * f[j];
                }
                std::size_t phase = 0;
                for (std::size_t dz = 0; dz < s; ++dz)
                    for (std::size_t dy = 0; dy < s; ++dy)
                        for (std::size_t dx = 0; dx < s; ++dx, ++phase) {
                            const double y =
                                hr.at(lz * s + dz, ly * s + dy, lx * s + dx) / 65535.0;
                            double* g = gty_[phase].data();
                            for (std::size_t i = 0; i < d; ++i) g[i] += f[i] * y;
                            yy_[phase] += y * y;
                        }
                ++rows_;
            }
}

LinearSrModel RidgeAccumulator::solve(double lambda) const {
    if (lambda < 0) fail(ErrorKind::config, "sr-fit", "lambda must be non-negative");
    const auto d = static_cast<std::size_t>(d_);
    if (rows_ < d)
        fail(ErrorKind::config, "sr-fit",
             "need at least " + std::to_string(d_) + " rows per phase, have " +
                 std::to_string(rows_));

    LinearSrModel model;
    model.scale = s_;
    model.k = k_;
    model.lambda = lambda;
    model.rows = rows_;
    const std::size_t phases = gty_.size();
    model.phases.resize(phases);

    // The ridge solves min mean((x'w - y)^2) + lambda*|w|^2, so the normal
    // equations are normalized by the row count; lambda then means the same
    // thing no matter how many pairs were accumulated.
    const double inv_n = 1.0 / static_cast<double>(rows_);
    std::vector<double> reg(d * d);
    for (std::size_t i = 0; i < d * d; ++i) reg[i] = gram_[i] * inv_n;
    for (std::size_t i = 0; i + 1 < d; ++i) reg[i * d + i] += lambda;  // bias unpenalized

    std::vector<double> residuals(phases, 0.0);
    std::exception_ptr error;
#pragma omp parallel for schedule(static)
    for (i64 p = 0; p < static_cast<i64>(phases); ++p) {
        try {
            const auto up = static_cast<std::size_t>(p);
            std::vector<double> w(d);
            for (std::size_t i = 0; i < d; ++i) w[i] = gty_[up][i] * inv_n;
            if (!cholesky_solve(reg, w, d_)) {
                if (lambda == 0.0)
                    fail(ErrorKind::singular, "sr-fit",
                         "normal matrix is rank deficient; refit with lambda > 0");
                fail(ErrorKind::singular, "sr-fit", "normal matrix is not positive definite");
            }
            // residual^2 = y'y - 2 w'g + w'Gw against the unregularized Gram
            double wgw = 0.0, wg = 0.0;
            for (std::size_t i = 0; i < d; ++i) {
                double row = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    const double gij = j >= i ? gram_[i * d + j] : gram_[j * d + i];
                    row += gij * w[j];
                }
                wgw += w[i] * row;
                wg += w[i] * gty_[up][i];
            }
            residuals[up] = std::max(0.0, yy_[up] - 2.0 * wg + wgw);

            model.phases[up].w.assign(w.begin(), w.end() - 1);
            model.phases[up].bias = w.back();
        } catch (...) {
#pragma omp critical(voxsr_srfit_error)
            if (!error) error = std::current_exception();
        }
    }
    if (error) std::rethrow_exception(error);

    double residual = 0.0;
    for (double r : residuals) residual += r;  // fixed order regardless of thread count
    model.rmse = std::sqrt(residual / (static_cast<double>(rows_) * static_cast<double>(phases)));
    return model;
}

LinearSrModel fit_linear_sr(PatchSampler& sampler, std::size_t n_pairs, int k, double lambda) {
    if (n_pairs == 0) fail(ErrorKind::config, "sr-fit", "need at least one training pair");
    std::unique_ptr<RidgeAccumulator> acc;
    for (std::size_t i = 0; i < n_pairs; ++i) {
        PatchPair pair = sampler.next();
        if (!acc) {
            if (pair.lr.dims.z == 0 || pair.hr.dims.z % pair.lr.dims.z != 0)
                fail(ErrorKind::contract, "sr-fit", "pair dims do not define a scale");
            const auto scale = static_cast<int>(pair.hr.dims.z / pair.lr.dims.z);
            acc = std::make_unique<RidgeAccumulator>(scale, k);
        }
        acc->add_pair(pair.lr, pair.hr);
    }
    return acc->solve(lambda);
}

Volume apply_linear_sr(const LinearSrModel& model, const Volume& lr) {
    check_scale_k(model.scale, model.k);
    const auto s = static_cast<std::size_t>(model.scale);
    const auto k3 = static_cast<std::size_t>(model.k) * model.k * model.k;
    if (model.phases.size() != s * s * s)
        fail(ErrorKind::invalid_input, "sr-apply", "model phase count does not match the scale");
    for (const auto& ph : model.phases)
        if (ph.w.size() != k3)
            fail(ErrorKind::invalid_input, "sr-apply", "model weight length does not match k");
    if (lr.dims.z < static_cast<std::size_t>(model.k) ||
        lr.dims.y < static_cast<std::size_t>(model.k) ||
        lr.dims.x < static_cast<std::size_t>(model.k))
        fail(ErrorKind::invalid_input, "sr-apply", "volume smaller than the neighborhood");

    Volume out;
    out.dims = {lr.dims.z * s, lr.dims.y * s, lr.dims.x * s};
    out.spacing = {lr.spacing.z / model.scale, lr.spacing.y / model.scale,
                   lr.spacing.x / model.scale};
    out.origin = {lr.origin.z + lr.spacing.z * (0.5 / model.scale - 0.5),
                  lr.origin.y + lr.spacing.y * (0.5 / model.scale - 0.5),
                  lr.origin.x + lr.spacing.x * (0.5 / model.scale - 0.5)};
    out.data.resize(out.dims.total());

#pragma omp parallel for schedule(static)
    for (i64 lz = 0; lz < static_cast<i64>(lr.dims.z); ++lz) {
        std::vector<double> f(k3 + 1);
        for (std::size_t ly = 0; ly < lr.dims.y; ++ly)
            for (std::size_t lx = 0; lx < lr.dims.x; ++lx) {
                gather_features(lr, model.k, lz, static_cast<i64>(ly), static_cast<i64>(lx),
                                f.data());
                std::size_t phase = 0;
                for (std::size_t dz = 0; dz < s; ++dz)
                    for (std::size_t dy = 0; dy < s; ++dy)
                        for (std::size_t dx = 0; dx < s; ++dx, ++phase) {
                            const LinearSrModel::Phase& ph = model.phases[phase];
                            double acc = ph.bias;
                            for (std::size_t i = 0; i < k3; ++i) acc += ph.w[i] * f[i];
                            out.at(static_cast<std::size_t>(lz) * s + dz, ly * s + dy,
                                   lx * s + dx) = quantize_u16(acc * 65535.0);
                        }
            }
    }
    return out;
}

Volume LinearSrOperator::apply(const Volume& lr_tile, const Vec3i&) const {
    if (!(lr_tile.dims == tile_))
        fail(ErrorKind::contract, "sr-apply", "tile dims do not match the operator");
    return apply_linear_sr(model_, lr_tile);
}

void save_model(const std::filesystem::path& path, const LinearSrModel& model) {
    nlohmann::ordered_json j;
    j["s"] = model.scale;
    j["k"] = model.k;
    j["lambda"] = model.lambda;
    j["rows"] = model.rows;
    j["rmse"] = model.rmse;
    j["phases"] = nlohmann::ordered_json::array();
    for (const auto& ph : model.phases) {
        nlohmann::ordered_json p;
        p["weights"] = ph.w;
        p["bias"] = ph.bias;
        j["phases"].push_back(std::move(p));
    }
    std::ofstream out(path);
    if (!out) fail(ErrorKind::storage, "sr-fit", "cannot create " + path.string());
    out << j.dump(2) << "\n";
}

LinearSrModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::storage, "sr-apply", "cannot open " + path.string());
    nlohmann::json j;
    try {
        in >> j;
        LinearSrModel m;
        m.scale = j.at("s").get<int>();
        m.k = j.at("k").get<int>();
        m.lambda = j.at("lambda").get<double>();
        m.rows = j.value("rows", u64{0});
        m.rmse = j.value("rmse", 0.0);
        for (const auto& p : j.at("phases")) {
            LinearSrModel::Phase ph;
            ph.w = p.at("weights").get<std::vector<double>>();
            ph.bias = p.at("bias").get<double>();
            m.phases.push_back(std::move(ph));
        }
        return m;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::invalid_input, "sr-apply", path.string() + ": " + e.what());
    }
}

}  // namespace voxsr
