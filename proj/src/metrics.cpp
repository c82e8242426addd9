#include "voxsr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <mutex>
#include <ostream>
#include <vector>

#include <fftw3.h>
#include <nlohmann/json.hpp>

namespace voxsr {

namespace {

// Separable 11-tap Gaussian blur with symmetric boundary padding.
void gauss11(const std::vector<double>& src, std::size_t h, std::size_t w,
             std::vector<double>& tmp, std::vector<double>& dst) {
    constexpr int R = 5;
    static const std::array<double, 11> kern = [] {
        std::array<double, 11> k{};
        double sum = 0.0;
        for (int i = -R; i <= R; ++i) {
            k[i + R] = std::exp(-(i * i) / (2.0 * 1.5 * 1.5));
            sum += k[i + R];
        }
        for (double& v : k) v /= sum;
        return k;
    }();

    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int j = -R; j <= R; ++j)
                acc += kern[j + R] * src[y * w + reflect_index(static_cast<i64>(x) + j,
                                                             static_cast<i64>(w))];
            tmp[y * w + x] = acc;
        }
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int j = -R; j <= R; ++j)
                acc += kern[j + R] *
                       tmp[reflect_index(static_cast<i64>(y) + j, static_cast<i64>(h)) * w + x];
            dst[y * w + x] = acc;
        }
}

std::mutex fftw_plan_mutex;

struct FftwBuffer {
    fftw_complex* p = nullptr;
    explicit FftwBuffer(std::size_t n) : p(fftw_alloc_complex(n)) {
        if (!p) fail(ErrorKind::storage, "spectrum", "fftw allocation failed");
    }
    ~FftwBuffer() { fftw_free(p); }
    FftwBuffer(const FftwBuffer&) = delete;
    FftwBuffer& operator=(const FftwBuffer&) = delete;
};

bool slice_all_zero(const u16* p, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i)
        if (p[i] != 0) return false;
    return true;
}

std::string strip_leading_zero(double v, const char* fmt) {
    char buf[48];
    std::snprintf(buf, sizeof buf, fmt, v);
    std::string s(buf);
    if (s.rfind("0.", 0) == 0)
        s.erase(0, 1);
    else if (s.rfind("-0.", 0) == 0)
        s.erase(1, 1);
    return s;
}

}  // namespace

double psnr_slice(std::span<const u16> pred, std::span<const u16> ref) {
    if (pred.size() != ref.size() || pred.empty())
        fail(ErrorKind::invalid_input, "psnr", "slice dims mismatch");
    double se = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = (static_cast<double>(pred[i]) - static_cast<double>(ref[i])) / 65535.0;
        se += d * d;
    }
    const double mse = se / static_cast<double>(pred.size());
    if (mse == 0.0) return 100.0;
    return std::min(100.0, 10.0 * std::log10(1.0 / mse));
}

double ssim_slice(std::span<const u16> pred, std::span<const u16> ref, std::size_t height,
                  std::size_t width) {
    if (pred.size() != ref.size() || pred.size() != height * width)
        fail(ErrorKind::invalid_input, "ssim", "slice dims mismatch");
    if (height < 11 || width < 11)
        fail(ErrorKind::invalid_input, "ssim", "slice smaller than the 11x11 window");

    const std::size_t n = height * width;
    std::vector<double> a(n), b(n), aa(n), bb(n), ab(n);
    for (std::size_t i = 0; i < n; ++i) {
        a[i] = pred[i] / 65535.0;
        b[i] = ref[i] / 65535.0;
        aa[i] = a[i] * a[i];
        bb[i] = b[i] * b[i];
        ab[i] = a[i] * b[i];
    }

    std::vector<double> tmp(n), m1(n), m2(n), e11(n), e22(n), e12(n);
    gauss11(a, height, width, tmp, m1);
    gauss11(b, height, width, tmp, m2);
    gauss11(aa, height, width, tmp, e11);
    gauss11(bb, height, width, tmp, e22);
    gauss11(ab, height, width, tmp, e12);

    constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double v1 = e11[i] - m1[i] * m1[i];
        const double v2 = e22[i] - m2[i] * m2[i];
        const double cov = e12[i] - m1[i] * m2[i];
        total += ((2.0 * m1[i] * m2[i] + c1) * (2.0 * cov + c2)) /
                 ((m1[i] * m1[i] + m2[i] * m2[i] + c1) * (v1 + v2 + c2));
    }
    return total / static_cast<double>(n);
}

double nrmse_slice(std::span<const u16> pred, std::span<const u16> ref) {
    if (pred.size() != ref.size() || pred.empty())
        fail(ErrorKind::invalid_input, "nrmse", "slice dims mismatch");
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double p = pred[i] / 65535.0, r = ref[i] / 65535.0;
        num += (p - r) * (p - r);
        den += r * r;
    }
    if (den == 0.0) fail(ErrorKind::invalid_input, "nrmse", "all-zero reference slice");
    return std::sqrt(num) / std::sqrt(den);
}

double tv_slice(std::span<const u16> slice, std::size_t height, std::size_t width) {
    if (height < 2 || width < 2 || slice.size() != height * width)
        fail(ErrorKind::invalid_input, "tv", "slice must be at least 2x2");
    double sum = 0.0;
    for (std::size_t y = 0; y < height; ++y)
        for (std::size_t x = 0; x + 1 < width; ++x)
            sum += std::fabs(slice[y * width + x + 1] / 65535.0 - slice[y * width + x] / 65535.0);
    for (std::size_t y = 0; y + 1 < height; ++y)
        for (std::size_t x = 0; x < width; ++x)
            sum += std::fabs(slice[(y + 1) * width + x] / 65535.0 - slice[y * width + x] / 65535.0);
    const std::size_t terms = height * (width - 1) + (height - 1) * width;
    return sum / static_cast<double>(terms);
}

std::vector<double> radial_power_profile(std::span<const u16> slice, std::size_t side,
                                         std::size_t num_rings) {
    if (side < 8) fail(ErrorKind::invalid_input, "spectrum", "side must be at least 8");
    if (slice.size() != side * side)
        fail(ErrorKind::invalid_input, "spectrum", "slice is not square");
    if (num_rings == 0) num_rings = side / 2;

    const i64 n = static_cast<i64>(side);
    FftwBuffer in(side * side), out(side * side);
    for (std::size_t i = 0; i < side * side; ++i) {
        in.p[i][0] = slice[i] / 65535.0;
        in.p[i][1] = 0.0;
    }
    fftw_plan plan;
    {
        // Plan creation and destruction are not thread-safe in FFTW.
        std::lock_guard<std::mutex> lock(fftw_plan_mutex);
        plan = fftw_plan_dft_2d(static_cast<int>(n), static_cast<int>(n), in.p, out.p,
                                FFTW_FORWARD, FFTW_ESTIMATE);
    }
    if (!plan) fail(ErrorKind::storage, "spectrum", "fftw plan failed");
    fftw_execute(plan);
    {
        std::lock_guard<std::mutex> lock(fftw_plan_mutex);
        fftw_destroy_plan(plan);
    }

    std::vector<double> profile(num_rings, 0.0);
    double total = 0.0;
    for (i64 u = 0; u < n; ++u)
        for (i64 v = 0; v < n; ++v) {
            const fftw_complex& c = out.p[static_cast<std::size_t>(u * n + v)];
            const double power = c[0] * c[0] + c[1] * c[1];
            total += power;
            const i64 fu = u <= n / 2 ? u : u - n;
            const i64 fv = v <= n / 2 ? v : v - n;
            const auto ring = static_cast<std::size_t>(
                std::lround(std::sqrt(static_cast<double>(fu * fu + fv * fv))));
            if (ring < num_rings) profile[ring] += power;
        }
    if (total > 0.0)
        for (double& p : profile) p /= total;
    return profile;
}

MetricsReport evaluate_volume(const Volume& pred, const Volume& ref, int scale, EvalMode mode) {
    if (!(pred.dims == ref.dims)) fail(ErrorKind::invalid_input, "eval", "volumes must share dims");
    if (scale < 1) fail(ErrorKind::invalid_input, "eval", "scale must be positive");
    if (pred.dims.total() == 0) fail(ErrorKind::invalid_input, "eval", "empty volume");

    const std::size_t step = mode == EvalMode::every_sth ? static_cast<std::size_t>(scale) : 1;
    std::vector<std::size_t> candidates;
    for (std::size_t z = 0; z < pred.dims.z; z += step) candidates.push_back(z);

    const std::size_t slice = pred.dims.y * pred.dims.x;
    struct Row {
        bool included = false;
        double psnr = 0, ssim = 0, nrmse = 0, tv = 0;
    };
    std::vector<Row> rows(candidates.size());

    std::exception_ptr error;
#pragma omp parallel for schedule(dynamic)
    for (i64 c = 0; c < static_cast<i64>(candidates.size()); ++c) {
        try {
            const std::size_t z = candidates[static_cast<std::size_t>(c)];
            const u16* p = pred.data.data() + z * slice;
            const u16* r = ref.data.data() + z * slice;
            if (slice_all_zero(r, slice)) continue;
            Row& row = rows[static_cast<std::size_t>(c)];
            std::span<const u16> ps(p, slice), rs(r, slice);
            row.psnr = psnr_slice(ps, rs);
            row.ssim = ssim_slice(ps, rs, pred.dims.y, pred.dims.x);
            row.nrmse = nrmse_slice(ps, rs);
            row.tv = tv_slice(ps, pred.dims.y, pred.dims.x);
            row.included = true;
        } catch (...) {
#pragma omp critical(voxsr_eval_error)
            if (!error) error = std::current_exception();
        }
    }
    if (error) std::rethrow_exception(error);

    MetricsReport report;
    report.scale = scale;
    report.mode = mode;
    for (std::size_t c = 0; c < candidates.size(); ++c) {
        if (!rows[c].included) continue;
        report.slice_index.push_back(candidates[c]);
        report.psnr_db.push_back(rows[c].psnr);
        report.ssim.push_back(rows[c].ssim);
        report.nrmse.push_back(rows[c].nrmse);
        report.tv.push_back(rows[c].tv);
    }
    const std::size_t n = report.slice_index.size();
    if (n == 0) fail(ErrorKind::invalid_input, "eval", "no slices included in the report");
    for (std::size_t i = 0; i < n; ++i) {
        report.mean_psnr += report.psnr_db[i];
        report.mean_ssim += report.ssim[i];
        report.mean_nrmse += report.nrmse[i];
        report.mean_tv += report.tv[i];
    }
    report.mean_psnr /= static_cast<double>(n);
    report.mean_ssim /= static_cast<double>(n);
    report.mean_nrmse /= static_cast<double>(n);
    report.mean_tv /= static_cast<double>(n);
    return report;
}

std::string format_metrics_row(double psnr_db, double ssim, double nrmse) {
    char psnr[48];
    std::snprintf(psnr, sizeof psnr, "%.2f", psnr_db);
    return std::string(psnr) + " / " + strip_leading_zero(ssim, "%.4f") + " / " +
           strip_leading_zero(nrmse, "%.4f");
}

void write_report_csv(const MetricsReport& report, std::ostream& os) {
    os << "slice_index,psnr_db,ssim,nrmse,tv\n";
    char buf[256];
    for (std::size_t i = 0; i < report.slice_index.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%zu,%.6f,%.6f,%.6f,%.6f\n", report.slice_index[i],
                      report.psnr_db[i], report.ssim[i], report.nrmse[i], report.tv[i]);
        os << buf;
    }
    std::snprintf(buf, sizeof buf, "mean,%.6f,%.6f,%.6f,%.6f\n", report.mean_psnr,
                  report.mean_ssim, report.mean_nrmse, report.mean_tv);
    os << buf;
}

std::string report_to_json(const MetricsReport& report) {
    nlohmann::ordered_json j;
    j["scale"] = report.scale;
    j["mode"] = report.mode == EvalMode::every_slice ? "every_slice" : "every_sth";
    j["slices"] = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < report.slice_index.size(); ++i) {
        nlohmann::ordered_json row;
        row["index"] = report.slice_index[i];
        row["psnr_db"] = report.psnr_db[i];
        row["ssim"] = report.ssim[i];
        row["nrmse"] = report.nrmse[i];
        row["tv"] = report.tv[i];
        j["slices"].push_back(std::move(row));
    }
    j["mean"]["psnr_db"] = report.mean_psnr;
    j["mean"]["ssim"] = report.mean_ssim;
    j["mean"]["nrmse"] = report.mean_nrmse;
    j["mean"]["tv"] = report.mean_tv;
    j["row"] = format_metrics_row(report.mean_psnr, report.mean_ssim, report.mean_nrmse);
    return j.dump(2);
}

}  // namespace voxsr
