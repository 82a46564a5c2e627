// Copyright 2026 The restora Authors
// SPDX-License-Identifier: Apache-2.0
//
// Full-reference quality metrics. PSNR over [0,1] RGB; SSIM on BT.601 luma
// with the original 11x11 Gaussian window (sigma 1.5, K1=0.01, K2=0.03,
// L=1) and valid-region convolution. Both computed in double.

#ifndef RESTORA_METRICS_HPP_
#define RESTORA_METRICS_HPP_

#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "restora/image.hpp"

namespace restora {

// 10*log10(1/MSE); +inf when the images are identical.
inline double psnr(const ImageBuffer& a, const ImageBuffer& b) {
    if (!a.same_size(b)) throw ContractError("psnr: dimension mismatch");
    double se = 0.0;
    for (std::size_t i = 0; i < a.data().size(); ++i) {
        const double d = static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i]);
        se += d * d;
    }
    const double mse = se / static_cast<double>(a.data().size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

namespace detail {

inline const std::vector<double>& ssim_window() {
    static const std::vector<double> win = [] {
        std::vector<double> w(11);
        double sum = 0.0;
        for (int i = 0; i < 11; ++i) {
            const double d = static_cast<double>(i - 5);
            w[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
            sum += w[static_cast<std::size_t>(i)];
        }
        for (auto& v : w) v /= sum;
        return w;
    }();
    return win;
}

inline std::vector<double> luma_plane(const ImageBuffer& img) {
    std::vector<double> y(static_cast<std::size_t>(img.height()) * img.width());
    for (int yy = 0; yy < img.height(); ++yy)
        for (int xx = 0; xx < img.width(); ++xx)
            y[static_cast<std::size_t>(yy) * img.width() + xx] = static_cast<double>(luma601(img, yy, xx));
    return y;
}

// separable valid-region filter with the SSIM window
inline std::vector<double> filter_valid(const std::vector<double>& p, int h, int w, int& oh, int& ow) {
    const auto& win = ssim_window();
    oh = h - 10;
    ow = w - 10;
    std::vector<double> mid(static_cast<std::size_t>(h) * ow);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (int t = 0; t < 11; ++t) acc += win[static_cast<std::size_t>(t)] * p[static_cast<std::size_t>(y) * w + x + t];
            mid[static_cast<std::size_t>(y) * ow + x] = acc;
        }
    std::vector<double> out(static_cast<std::size_t>(oh) * ow);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (int t = 0; t < 11; ++t) acc += win[static_cast<std::size_t>(t)] * mid[static_cast<std::size_t>(y + t) * ow + x];
            out[static_cast<std::size_t>(y) * ow + x] = acc;
        }
    return out;
}

} // namespace detail

inline double ssim(const ImageBuffer& a, const ImageBuffer& b) {
    if (!a.same_size(b)) throw ContractError("ssim: dimension mismatch");
    if (a.height() < 11 || a.width() < 11) throw ContractError("ssim: image smaller than the 11x11 window");
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    const int h = a.height(), w = a.width();
    const auto ya = detail::luma_plane(a);
    const auto yb = detail::luma_plane(b);
    std::vector<double> aa(ya.size()), bb(ya.size()), ab(ya.size());
    for (std::size_t i = 0; i < ya.size(); ++i) {
        aa[i] = ya[i] * ya[i];
        bb[i] = yb[i] * yb[i];
        ab[i] = ya[i] * yb[i];
    }
    int oh = 0, ow = 0;
    const auto mu_a = detail::filter_valid(ya, h, w, oh, ow);
    const auto mu_b = detail::filter_valid(yb, h, w, oh, ow);
    const auto m_aa = detail::filter_valid(aa, h, w, oh, ow);
    const auto m_bb = detail::filter_valid(bb, h, w, oh, ow);
    const auto m_ab = detail::filter_valid(ab, h, w, oh, ow);

    double total = 0.0;
    for (std::size_t i = 0; i < mu_a.size(); ++i) {
        const double va = m_aa[i] - mu_a[i] * mu_a[i];
        const double vb = m_bb[i] - mu_b[i] * mu_b[i];
        const double cov = m_ab[i] - mu_a[i] * mu_b[i];
        total += ((2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2)) /
                 ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2));
    }
    return total / static_cast<double>(mu_a.size());
}

// ---------------------------------------------------------------------------
// reports

struct MetricRow {
    std::string kind;
    std::string preset;
    double psnr_db = 0.0;
    double ssim = 0.0;
    int n = 0;
};

struct MetricReport {
    std::vector<MetricRow> rows;

    // dB-averaged PSNR across rows (the sentinel propagates).
    MetricRow average() const {
        MetricRow avg;
        avg.kind = "average";
        if (rows.empty()) return avg;
        avg.preset = rows.front().preset;
        for (const auto& r : rows) {
            avg.psnr_db += r.psnr_db;
            avg.ssim += r.ssim;
            avg.n += r.n;
        }
        avg.psnr_db /= static_cast<double>(rows.size());
        avg.ssim /= static_cast<double>(rows.size());
        return avg;
    }
};

inline std::string format_metric(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

// CSV: header `kind,preset,psnr_db,ssim,n`, 6 significant digits, LF
// endings, final `average` row.
inline std::string report_to_csv(const MetricReport& rep) {
    std::ostringstream os;
    os << "kind,preset,psnr_db,ssim,n\n";
    for (const auto& r : rep.rows)
        os << r.kind << "," << r.preset << "," << format_metric(r.psnr_db) << "," << format_metric(r.ssim)
           << "," << r.n << "\n";
    const MetricRow avg = rep.average();
    os << avg.kind << "," << avg.preset << "," << format_metric(avg.psnr_db) << ","
       << format_metric(avg.ssim) << "," << avg.n << "\n";
    return os.str();
}

} // namespace restora

#endif // RESTORA_METRICS_HPP_
