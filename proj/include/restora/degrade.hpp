// Copyright 2026 The restora Authors
// SPDX-License-Identifier: Apache-2.0
//
// Parametric degradation bank: 31 corruption kinds plus `clean`, each a
// pure function of (image, kind, severity, seed). Severity in (0,1] maps
// affinely onto each kind's physical parameters; the heavy anchors are
// listed in severity_to_params. Randomness comes exclusively from
// counter-based streams derived from the spec seed.

#ifndef RESTORA_DEGRADE_HPP_
#define RESTORA_DEGRADE_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "restora/errors.hpp"
#include "restora/image.hpp"
#include "restora/prng.hpp"

namespace restora {

enum class DegradationKind : int {
    jpeg_compression = 0,
    gaussian_blur,
    lens_blur,
    motion_blur,
    color_diffuse,
    color_shift,
    color_saturate,
    color_saturate2,
    gaussian_noise,
    gaussian_noise_ycbcr,
    impulse_noise,
    multiplicative_noise,
    over_denoise,
    over_bright,
    low_light,
    mean_shift,
    resize_bicubic,
    resize_bilinear,
    resize_nearest,
    resize_lanczos,
    over_sharpen,
    contrast_imbalance,
    color_block,
    pixelate,
    discontinuous,
    jitter,
    mosaic,
    irregular_mask,
    block_mask,
    rain_streak,
    snow_streak,
    clean,
    kCount
};

inline constexpr int kDegradationCount = static_cast<int>(DegradationKind::kCount); // 32 with clean

inline const std::array<const char*, kDegradationCount>& degradation_names() {
    static const std::array<const char*, kDegradationCount> names = {
        "jpeg_compression", "gaussian_blur",  "lens_blur",     "motion_blur",
        "color_diffuse",    "color_shift",    "color_saturate", "color_saturate2",
        "gaussian_noise",   "gaussian_noise_ycbcr", "impulse_noise", "multiplicative_noise",
        "over_denoise",     "over_bright",    "low_light",     "mean_shift",
        "resize_bicubic",   "resize_bilinear", "resize_nearest", "resize_lanczos",
        "over_sharpen",     "contrast_imbalance", "color_block", "pixelate",
        "discontinuous",    "jitter",         "mosaic",        "irregular_mask",
        "block_mask",       "rain_streak",    "snow_streak",   "clean"};
    return names;
}

inline const char* kind_name(DegradationKind k) { return degradation_names()[static_cast<std::size_t>(k)]; }

inline bool parse_kind(const std::string& name, DegradationKind& out) {
    const auto& names = degradation_names();
    for (int i = 0; i < kDegradationCount; ++i)
        if (name == names[static_cast<std::size_t>(i)]) {
            out = static_cast<DegradationKind>(i);
            return true;
        }
    return false;
}

// All kinds except clean.
inline std::vector<DegradationKind> all_degrading_kinds() {
    std::vector<DegradationKind> v;
    for (int i = 0; i < kDegradationCount; ++i)
        if (static_cast<DegradationKind>(i) != DegradationKind::clean) v.push_back(static_cast<DegradationKind>(i));
    return v;
}

struct DegradationSpec {
    DegradationKind kind = DegradationKind::clean;
    float severity = 1.f; // (0, 1]
    std::uint64_t seed = 0;
};

// Named presets from the evaluation protocol.
inline float severity_preset(const std::string& name) {
    if (name == "slight") return 0.33f;
    if (name == "middle") return 0.66f;
    if (name == "heavy") return 1.0f;
    throw ConfigError("unknown severity preset: " + name);
}

// ---------------------------------------------------------------------------
// severity -> physical parameters

using ParamRecord = std::vector<std::pair<std::string, double>>;

inline double param(const ParamRecord& rec, const std::string& key) {
    for (const auto& [k, v] : rec)
        if (k == key) return v;
    throw ContractError("missing degradation parameter: " + key);
}

// Monotone map per kind. Heavy anchors (severity 1): noise sigma 50/255,
// blur sigma 4, lens radius 6, motion length 16, JPEG quality 10, pixelate
// block 8, resize factor 4, impulse density 0.05, speckle 0.3, and the
// tonal/color anchors below; every value interpolates affinely from a
// benign setting at severity 0.
inline ParamRecord severity_to_params(DegradationKind kind, double s) {
    if (!(s > 0.0 && s <= 1.0)) throw ConfigError("severity must lie in (0,1]");
    switch (kind) {
        case DegradationKind::jpeg_compression:
            return {{"quality", std::round(90.0 - 80.0 * s)}};
        case DegradationKind::gaussian_blur:
            return {{"sigma", 4.0 * s}};
        case DegradationKind::lens_blur:
            return {{"radius", 6.0 * s}};
        case DegradationKind::motion_blur:
            return {{"length", 1.0 + 15.0 * s}};
        case DegradationKind::color_diffuse:
            return {{"chroma_sigma", 8.0 * s}};
        case DegradationKind::color_shift:
            return {{"shift_px", std::max(1.0, std::round(4.0 * s))}};
        case DegradationKind::color_saturate:
            return {{"saturation_gain", 1.0 + 1.2 * s}};
        case DegradationKind::color_saturate2:
            return {{"saturation_gain", 1.0 - 0.75 * s}};
        case DegradationKind::gaussian_noise:
            return {{"sigma", 50.0 * s / 255.0}};
        case DegradationKind::gaussian_noise_ycbcr:
            return {{"sigma_y", 0.6 * 50.0 * s / 255.0}, {"sigma_c", 50.0 * s / 255.0}};
        case DegradationKind::impulse_noise:
            return {{"density", 0.05 * s}};
        case DegradationKind::multiplicative_noise:
            return {{"sigma", 0.3 * s}};
        case DegradationKind::over_denoise:
            return {{"noise_sigma", 25.0 * s / 255.0}, {"blur_sigma", 2.0 * s}};
        case DegradationKind::over_bright:
            return {{"gain", 1.0 + 0.8 * s}, {"gamma", 1.0 - 0.4 * s}};
        case DegradationKind::low_light:
            return {{"gain", 1.0 - 0.65 * s}, {"gamma", 1.0 + 0.8 * s}, {"noise_sigma", 10.0 * s / 255.0}};
        case DegradationKind::mean_shift:
            return {{"offset", 0.3 * s}};
        case DegradationKind::resize_bicubic:
        case DegradationKind::resize_bilinear:
        case DegradationKind::resize_nearest:
        case DegradationKind::resize_lanczos:
            return {{"factor", 1.0 + 3.0 * s}};
        case DegradationKind::over_sharpen:
            return {{"amount", 2.0 * s}, {"radius", 1.5}};
        case DegradationKind::contrast_imbalance:
            return {{"slope", 8.0 * s}};
        case DegradationKind::color_block:
            return {{"count", std::max(1.0, std::round(8.0 * s))}};
        case DegradationKind::pixelate:
            return {{"block", std::max(1.0, std::round(1.0 + 7.0 * s))}};
        case DegradationKind::discontinuous:
            return {{"band", 32.0}, {"shift_px", std::max(1.0, std::round(8.0 * s))}};
        case DegradationKind::jitter:
            return {{"amplitude", 3.0 * s}};
        case DegradationKind::mosaic:
            return {};
        case DegradationKind::irregular_mask:
        case DegradationKind::block_mask:
            return {{"coverage", 0.4 * s}};
        case DegradationKind::rain_streak:
            return {{"density", 0.002 + 0.010 * s}, {"length", std::round(6.0 + 10.0 * s)},
                    {"strength", 0.25 + 0.35 * s}};
        case DegradationKind::snow_streak:
            return {{"density", 0.0015 + 0.006 * s}, {"length", std::round(3.0 + 5.0 * s)},
                    {"strength", 0.3 + 0.4 * s}, {"veil", 0.04 + 0.08 * s}};
        case DegradationKind::clean:
            return {};
        default:
            throw ConfigError("severity_to_params: unknown kind");
    }
}

// ---------------------------------------------------------------------------
// kernels and filters

struct Kernel2D {
    int size = 1; // odd, square
    std::vector<double> data;

    double at(int y, int x) const { return data[static_cast<std::size_t>(y) * size + x]; }
};

// Normalized anti-aliased line segment through the kernel center. Cell
// weight falls off linearly with distance to the segment: 1 at distance 0,
// 0 at distance >= 1.
inline Kernel2D motion_blur_kernel(double length, double angle) {
    if (length < 1.0) throw ConfigError("motion_blur_kernel: length must be >= 1");
    const double half = (length - 1.0) / 2.0;
    const int r = static_cast<int>(std::ceil(half)) + 1;
    Kernel2D k;
    k.size = 2 * r + 1;
    k.data.assign(static_cast<std::size_t>(k.size) * k.size, 0.0);
    const double dx = std::cos(angle), dy = std::sin(angle);
    double sum = 0.0;
    for (int y = -r; y <= r; ++y)
        for (int x = -r; x <= r; ++x) {
            // distance from (x, y) to the segment [-half, half] * (dx, dy)
            const double proj = std::min(half, std::max(-half, x * dx + y * dy));
            const double ex = x - proj * dx, ey = y - proj * dy;
            const double dist = std::sqrt(ex * ex + ey * ey);
            const double wv = std::max(0.0, 1.0 - dist);
            k.data[static_cast<std::size_t>(y + r) * k.size + (x + r)] = wv;
            sum += wv;
        }
    for (auto& v : k.data) v /= sum;
    return k;
}

// Normalized disk with linear edge feathering; radius 0 is a delta.
inline Kernel2D disk_kernel(double radius) {
    const int r = static_cast<int>(std::ceil(radius)) + 1;
    Kernel2D k;
    k.size = 2 * r + 1;
    k.data.assign(static_cast<std::size_t>(k.size) * k.size, 0.0);
    double sum = 0.0;
    for (int y = -r; y <= r; ++y)
        for (int x = -r; x <= r; ++x) {
            const double dist = std::sqrt(static_cast<double>(x * x + y * y));
            const double wv = std::min(1.0, std::max(0.0, radius - dist + 0.5));
            k.data[static_cast<std::size_t>(y + r) * k.size + (x + r)] = wv;
            sum += wv;
        }
    for (auto& v : k.data) v /= sum;
    return k;
}

// Direct 2-D convolution with replicate borders, clipped to [0,1].
inline ImageBuffer convolve(const ImageBuffer& img, const Kernel2D& k) {
    const int r = (k.size - 1) / 2;
    ImageBuffer out(img.height(), img.width());
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x)
            for (int c = 0; c < 3; ++c) {
                double acc = 0.0;
                for (int ky = -r; ky <= r; ++ky) {
                    const int sy = std::min(img.height() - 1, std::max(0, y + ky));
                    for (int kx = -r; kx <= r; ++kx) {
                        const int sx = std::min(img.width() - 1, std::max(0, x + kx));
                        acc += k.at(ky + r, kx + r) * static_cast<double>(img.at(sy, sx, c));
                    }
                }
                out.at(y, x, c) = static_cast<float>(std::min(1.0, std::max(0.0, acc)));
            }
    return out;
}

// Separable Gaussian with replicate borders; sigma <= 0 is the identity.
inline ImageBuffer gaussian_blur(const ImageBuffer& img, double sigma) {
    if (sigma <= 0.0) return img;
    const int r = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> w(static_cast<std::size_t>(2 * r + 1));
    double sum = 0.0;
    for (int i = -r; i <= r; ++i) {
        w[static_cast<std::size_t>(i + r)] = std::exp(-0.5 * i * i / (sigma * sigma));
        sum += w[static_cast<std::size_t>(i + r)];
    }
    for (auto& v : w) v /= sum;

    ImageBuffer mid(img.height(), img.width());
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x)
            for (int c = 0; c < 3; ++c) {
                double acc = 0.0;
                for (int i = -r; i <= r; ++i) {
                    const int sx = std::min(img.width() - 1, std::max(0, x + i));
                    acc += w[static_cast<std::size_t>(i + r)] * static_cast<double>(img.at(y, sx, c));
                }
                mid.at(y, x, c) = static_cast<float>(acc);
            }
    ImageBuffer out(img.height(), img.width());
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x)
            for (int c = 0; c < 3; ++c) {
                double acc = 0.0;
                for (int i = -r; i <= r; ++i) {
                    const int sy = std::min(img.height() - 1, std::max(0, y + i));
                    acc += w[static_cast<std::size_t>(i + r)] * static_cast<double>(mid.at(sy, x, c));
                }
                out.at(y, x, c) = static_cast<float>(std::min(1.0, std::max(0.0, acc)));
            }
    return out;
}

// ---------------------------------------------------------------------------
// JPEG quantization round trip (no entropy coding)

namespace detail {

inline const std::array<int, 64>& jpeg_luma_base() {
    static const std::array<int, 64> t = {16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
                                          14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
                                          18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
                                          49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};
    return t;
}

inline const std::array<int, 64>& jpeg_chroma_base() {
    static const std::array<int, 64> t = {17, 18, 24, 47, 99, 99, 99, 99, 18, 21, 26, 66, 99, 99, 99, 99,
                                          24, 26, 56, 99, 99, 99, 99, 99, 47, 66, 99, 99, 99, 99, 99, 99,
                                          99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99,
                                          99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99};
    return t;
}

// IJG quality scaling, tables clamped to [1, 255].
inline std::array<double, 64> scaled_quant_table(const std::array<int, 64>& base, int quality) {
    const int q = std::min(100, std::max(1, quality));
    const int scale = q < 50 ? 5000 / q : 200 - 2 * q;
    std::array<double, 64> t{};
    for (int i = 0; i < 64; ++i) {
        int v = (base[static_cast<std::size_t>(i)] * scale + 50) / 100;
        t[static_cast<std::size_t>(i)] = static_cast<double>(std::min(255, std::max(1, v)));
    }
    return t;
}

// Orthonormal DCT-II basis: C[0][j] = sqrt(1/8), C[k][j] = 1/2 cos((2j+1)k pi/16).
inline const std::array<double, 64>& dct_basis() {
    static const std::array<double, 64> C = [] {
        std::array<double, 64> m{};
        for (int k = 0; k < 8; ++k)
            for (int j = 0; j < 8; ++j) {
                const double s = k == 0 ? std::sqrt(1.0 / 8.0) : 0.5;
                m[static_cast<std::size_t>(k * 8 + j)] =
                    s * std::cos((2.0 * j + 1.0) * k * 3.14159265358979323846 / 16.0);
            }
        return m;
    }();
    return C;
}

} // namespace detail

// F = C X C^T
inline void dct8x8(const double in[64], double out[64]) {
    const auto& C = detail::dct_basis();
    double tmp[64];
    for (int k = 0; k < 8; ++k)
        for (int j = 0; j < 8; ++j) {
            double acc = 0.0;
            for (int i = 0; i < 8; ++i) acc += C[static_cast<std::size_t>(k * 8 + i)] * in[i * 8 + j];
            tmp[k * 8 + j] = acc;
        }
    for (int k = 0; k < 8; ++k)
        for (int l = 0; l < 8; ++l) {
            double acc = 0.0;
            for (int j = 0; j < 8; ++j) acc += tmp[k * 8 + j] * C[static_cast<std::size_t>(l * 8 + j)];
            out[k * 8 + l] = acc;
        }
}

// X = C^T F C
inline void idct8x8(const double in[64], double out[64]) {
    const auto& C = detail::dct_basis();
    double tmp[64];
    for (int i = 0; i < 8; ++i)
        for (int l = 0; l < 8; ++l) {
            double acc = 0.0;
            for (int k = 0; k < 8; ++k) acc += C[static_cast<std::size_t>(k * 8 + i)] * in[k * 8 + l];
            tmp[i * 8 + l] = acc;
        }
    for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j) {
            double acc = 0.0;
            for (int l = 0; l < 8; ++l) acc += tmp[i * 8 + l] * C[static_cast<std::size_t>(l * 8 + j)];
            out[i * 8 + j] = acc;
        }
}

// BT.601 -> 8x8 orthonormal DCT -> IJG-scaled quantization -> inverse.
// 4:4:4 (no chroma subsampling), entropy coding omitted as lossless.
inline ImageBuffer jpeg_degrade(const ImageBuffer& img, int quality) {
    if (quality < 1 || quality > 100) throw ConfigError("jpeg_degrade: quality must be in [1,100]");
    const auto luma_t = detail::scaled_quant_table(detail::jpeg_luma_base(), quality);
    const auto chroma_t = detail::scaled_quant_table(detail::jpeg_chroma_base(), quality);

    const ImageBuffer ycc = rgb_to_ycbcr(img);
    const int h = img.height(), w = img.width();
    const int bh = (h + 7) / 8, bw = (w + 7) / 8;

    ImageBuffer rec(h, w);
    double block[64], coef[64], back[64];
    for (int c = 0; c < 3; ++c) {
        const auto& table = c == 0 ? luma_t : chroma_t;
        for (int by = 0; by < bh; ++by)
            for (int bx = 0; bx < bw; ++bx) {
                for (int y = 0; y < 8; ++y)
                    for (int x = 0; x < 8; ++x) {
                        const int sy = std::min(h - 1, by * 8 + y); // edge replicate
                        const int sx = std::min(w - 1, bx * 8 + x);
                        block[y * 8 + x] = static_cast<double>(ycc.at(sy, sx, c)) * 255.0 - 128.0;
                    }
                dct8x8(block, coef);
                for (int i = 0; i < 64; ++i)
                    coef[i] = std::round(coef[i] / table[static_cast<std::size_t>(i)]) * table[static_cast<std::size_t>(i)];
                idct8x8(coef, back);
                for (int y = 0; y < 8; ++y) {
                    const int dy = by * 8 + y;
                    if (dy >= h) continue;
                    for (int x = 0; x < 8; ++x) {
                        const int dx = bx * 8 + x;
                        if (dx >= w) continue;
                        rec.at(dy, dx, c) = static_cast<float>((back[y * 8 + x] + 128.0) / 255.0);
                    }
                }
            }
    }
    ImageBuffer out = ycbcr_to_rgb(rec);
    out.clip();
    return out;
}

// ---------------------------------------------------------------------------
// weather streaks

enum class StreakFamily { rain, snow };

// Sparse particle field elongated by a motion kernel, added achromatically.
// Snow stamps jittered disks per particle and blends a brightness veil.
inline ImageBuffer streak_overlay(const ImageBuffer& img, StreakFamily family, double density,
                                  double length, double angle, double strength, double veil,
                                  std::uint64_t seed) {
    if (!(density > 0.0 && density <= 1.0)) throw ConfigError("streak_overlay: density must be in (0,1]");
    const int h = img.height(), w = img.width();
    std::vector<double> field(static_cast<std::size_t>(h) * w, 0.0);
    Prng rng(hash64(seed, "streak_field"));

    if (family == StreakFamily::rain) {
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                if (rng.uniform() < density)
                    field[static_cast<std::size_t>(y) * w + x] = 0.6 + 0.4 * rng.uniform();
        const Kernel2D k = motion_blur_kernel(std::max(1.0, length), angle);
        // kernel is normalized; rescale so one particle keeps unit peak mass
        std::vector<double> blurred(field.size(), 0.0);
        const int r = (k.size - 1) / 2;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const double v = field[static_cast<std::size_t>(y) * w + x];
                if (v == 0.0) continue;
                for (int ky = -r; ky <= r; ++ky) {
                    const int dy = y + ky;
                    if (dy < 0 || dy >= h) continue;
                    for (int kx = -r; kx <= r; ++kx) {
                        const int dx = x + kx;
                        if (dx < 0 || dx >= w) continue;
                        blurred[static_cast<std::size_t>(dy) * w + dx] +=
                            v * k.at(ky + r, kx + r) * std::max(1.0, length) * 0.6;
                    }
                }
            }
        field.swap(blurred);
    } else {
        // two particle classes with per-particle size jitter
        for (int cls = 0; cls < 2; ++cls) {
            const double cls_density = cls == 0 ? density : density * 0.35;
            const double rlo = cls == 0 ? 0.5 : 1.2;
            const double rhi = cls == 0 ? 1.2 : 2.4;
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    if (rng.uniform() >= cls_density) continue;
                    const double radius = rng.uniform(rlo, rhi);
                    const double amp = 0.7 + 0.3 * rng.uniform();
                    const int rr = static_cast<int>(std::ceil(radius)) + 1;
                    for (int dy = -rr; dy <= rr; ++dy) {
                        const int py = y + dy;
                        if (py < 0 || py >= h) continue;
                        for (int dx = -rr; dx <= rr; ++dx) {
                            const int px = x + dx;
                            if (px < 0 || px >= w) continue;
                            const double dist = std::sqrt(static_cast<double>(dx * dx + dy * dy));
                            const double cov = std::min(1.0, std::max(0.0, radius - dist + 0.5));
                            field[static_cast<std::size_t>(py) * w + px] += amp * cov;
                        }
                    }
                }
        }
    }

    ImageBuffer out(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double add = strength * std::min(1.0, field[static_cast<std::size_t>(y) * w + x]);
            for (int c = 0; c < 3; ++c) {
                double v = static_cast<double>(img.at(y, x, c)) + add;
                if (veil > 0.0) v = v * (1.0 - veil) + veil;
                out.at(y, x, c) = static_cast<float>(std::min(1.0, std::max(0.0, v)));
            }
        }
    return out;
}

// ---------------------------------------------------------------------------
// masks

enum class MaskStyle { irregular, block };

// Binary mask with realized coverage within one stamp-pixel of the request:
// stamping stops the moment the target pixel count is reached.
inline std::vector<std::uint8_t> generate_mask(int h, int w, MaskStyle style, double coverage,
                                               std::uint64_t seed) {
    if (!(coverage > 0.0 && coverage <= 0.5)) throw ConfigError("mask coverage must be in (0, 0.5]");
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(h) * w, 0);
    const std::size_t target = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(
                                                            coverage * static_cast<double>(h) * w)));
    std::size_t count = 0;
    Prng rng(hash64(seed, "mask"));
    const int md = std::min(h, w);

    auto stamp = [&](int y, int x) {
        if (y < 0 || y >= h || x < 0 || x >= w) return;
        auto& m = mask[static_cast<std::size_t>(y) * w + x];
        if (!m) {
            m = 1;
            ++count;
        }
    };

    if (style == MaskStyle::block) {
        while (count < target) {
            const int bw = rng.uniform_int(std::max(2, md / 16), std::max(3, 3 * md / 16));
            const int bh = rng.uniform_int(std::max(2, md / 16), std::max(3, 3 * md / 16));
            const int x0 = rng.uniform_int(0, std::max(0, w - bw));
            const int y0 = rng.uniform_int(0, std::max(0, h - bh));
            for (int y = y0; y < std::min(h, y0 + bh) && count < target; ++y)
                for (int x = x0; x < std::min(w, x0 + bw) && count < target; ++x) stamp(y, x);
        }
    } else {
        while (count < target) {
            // one brush stroke: a random walk of thick segments
            double x = rng.uniform(0.0, static_cast<double>(w));
            double y = rng.uniform(0.0, static_cast<double>(h));
            double ang = rng.uniform(0.0, 6.283185307179586);
            const int steps = rng.uniform_int(4, 12);
            const double thickness = rng.uniform(std::max(2.0, md / 64.0), std::max(3.0, md / 21.0));
            for (int sstep = 0; sstep < steps && count < target; ++sstep) {
                const double seg = rng.uniform(md / 32.0, md / 10.0);
                const double nx = x + seg * std::cos(ang);
                const double ny = y + seg * std::sin(ang);
                const int sub = std::max(2, static_cast<int>(seg / std::max(1.0, thickness / 2.0)) + 1);
                for (int i = 0; i <= sub && count < target; ++i) {
                    const double cx = x + (nx - x) * i / sub;
                    const double cy = y + (ny - y) * i / sub;
                    const int r = static_cast<int>(std::ceil(thickness / 2.0));
                    for (int dy = -r; dy <= r && count < target; ++dy)
                        for (int dx = -r; dx <= r && count < target; ++dx)
                            if (dx * dx + dy * dy <= r * r)
                                stamp(static_cast<int>(cy) + dy, static_cast<int>(cx) + dx);
                }
                x = nx;
                y = ny;
                ang += rng.uniform(-0.6, 0.6);
            }
        }
    }
    return mask;
}

// Masked pixels become exactly 0; unmasked pixels are bit-equal to input.
inline ImageBuffer mask_degrade(const ImageBuffer& img, MaskStyle style, double coverage,
                                std::uint64_t seed) {
    const auto mask = generate_mask(img.height(), img.width(), style, coverage, seed);
    ImageBuffer out = img;
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x)
            if (mask[static_cast<std::size_t>(y) * img.width() + x])
                for (int c = 0; c < 3; ++c) out.at(y, x, c) = 0.f;
    return out;
}

// ---------------------------------------------------------------------------
// apply

namespace detail {

inline ImageBuffer add_gaussian_noise(const ImageBuffer& img, double sigma, Prng& rng) {
    ImageBuffer out(img.height(), img.width());
    for (std::size_t i = 0; i < img.data().size(); ++i) {
        const double v = static_cast<double>(img.data()[i]) + sigma * rng.normal();
        out.data()[i] = static_cast<float>(std::min(1.0, std::max(0.0, v)));
    }
    return out;
}

inline ImageBuffer tone_map(const ImageBuffer& img, double gain, double gamma) {
    ImageBuffer out(img.height(), img.width());
    for (std::size_t i = 0; i < img.data().size(); ++i) {
        const double v = std::min(1.0, std::max(0.0, static_cast<double>(img.data()[i]) * gain));
        out.data()[i] = static_cast<float>(std::pow(v, gamma));
    }
    return out;
}

inline ImageBuffer saturate(const ImageBuffer& img, double gainv) {
    ImageBuffer hsv = rgb_to_hsv(img);
    for (int y = 0; y < hsv.height(); ++y)
        for (int x = 0; x < hsv.width(); ++x)
            hsv.at(y, x, 1) = static_cast<float>(std::min(1.0, std::max(0.0, hsv.at(y, x, 1) * gainv)));
    ImageBuffer out = hsv_to_rgb(hsv);
    out.clip();
    return out;
}

inline ImageBuffer pixelate_blocks(const ImageBuffer& img, int block) {
    if (block <= 1) return img;
    ImageBuffer out(img.height(), img.width());
    for (int by = 0; by < img.height(); by += block)
        for (int bx = 0; bx < img.width(); bx += block) {
            const int y1 = std::min(img.height(), by + block);
            const int x1 = std::min(img.width(), bx + block);
            double acc[3] = {0, 0, 0};
            const double cnt = static_cast<double>((y1 - by) * (x1 - bx));
            for (int y = by; y < y1; ++y)
                for (int x = bx; x < x1; ++x)
                    for (int c = 0; c < 3; ++c) acc[c] += img.at(y, x, c);
            for (int y = by; y < y1; ++y)
                for (int x = bx; x < x1; ++x)
                    for (int c = 0; c < 3; ++c) out.at(y, x, c) = static_cast<float>(acc[c] / cnt);
        }
    return out;
}

// Bayer RGGB sampling with nearest-site channel fill, no demosaicing.
inline ImageBuffer mosaic_bayer(const ImageBuffer& img) {
    ImageBuffer out(img.height(), img.width());
    const int h = img.height(), w = img.width();
    auto clampy = [&](int v) { return std::min(h - 1, std::max(0, v)); };
    auto clampx = [&](int v) { return std::min(w - 1, std::max(0, v)); };
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            // R sampled at (even, even); B at (odd, odd); G elsewhere.
            out.at(y, x, 0) = img.at(clampy(y & ~1), clampx(x & ~1), 0);
            out.at(y, x, 2) = img.at(clampy(y | 1), clampx(x | 1), 2);
            const bool is_green = ((y + x) & 1) == 1;
            if (is_green)
                out.at(y, x, 1) = img.at(y, x, 1);
            else {
                // nearest green: same-row neighbor first
                const int gx = (x + 1 < w) ? x + 1 : x - 1;
                out.at(y, x, 1) = img.at(y, clampx(gx), 1);
            }
        }
    return out;
}

inline ImageBuffer contrast_curve(const ImageBuffer& img, double slope) {
    if (slope < 1e-6) return img;
    auto sig = [](double z) { return 1.0 / (1.0 + std::exp(-z)); };
    const double lo = sig(-0.5 * slope), hi = sig(0.5 * slope);
    ImageBuffer out(img.height(), img.width());
    for (std::size_t i = 0; i < img.data().size(); ++i) {
        const double x = static_cast<double>(img.data()[i]);
        out.data()[i] = static_cast<float>((sig((x - 0.5) * slope) - lo) / (hi - lo));
    }
    return out;
}

} // namespace detail

// Deterministic in (img, spec); output dimensions and [0,1] range preserved.
inline ImageBuffer apply(const ImageBuffer& img, const DegradationSpec& spec) {
    if (spec.kind == DegradationKind::clean) return img;
    const double s = static_cast<double>(spec.severity);
    const ParamRecord rec = severity_to_params(spec.kind, s);
    Prng rng(hash64(spec.seed, kind_name(spec.kind)));
    const int h = img.height(), w = img.width();

    switch (spec.kind) {
        case DegradationKind::jpeg_compression:
            return jpeg_degrade(img, static_cast<int>(param(rec, "quality")));
        case DegradationKind::gaussian_blur:
            return gaussian_blur(img, param(rec, "sigma"));
        case DegradationKind::lens_blur:
            return convolve(img, disk_kernel(param(rec, "radius")));
        case DegradationKind::motion_blur: {
            const double angle = rng.uniform(0.0, 3.14159265358979323846);
            return convolve(img, motion_blur_kernel(param(rec, "length"), angle));
        }
        case DegradationKind::color_diffuse: {
            ImageBuffer ycc = rgb_to_ycbcr(img);
            ImageBuffer chroma = ycc; // blur Cb/Cr, keep Y
            chroma = gaussian_blur(chroma, param(rec, "chroma_sigma"));
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    ycc.at(y, x, 1) = chroma.at(y, x, 1);
                    ycc.at(y, x, 2) = chroma.at(y, x, 2);
                }
            ImageBuffer out = ycbcr_to_rgb(ycc);
            out.clip();
            return out;
        }
        case DegradationKind::color_shift: {
            const int d = static_cast<int>(param(rec, "shift_px"));
            ImageBuffer out = img;
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    out.at(y, x, 0) = img.at(y, std::min(w - 1, std::max(0, x - d)), 0);
                    out.at(y, x, 2) = img.at(y, std::min(w - 1, std::max(0, x + d)), 2);
                }
            return out;
        }
        case DegradationKind::color_saturate:
        case DegradationKind::color_saturate2:
            return detail::saturate(img, param(rec, "saturation_gain"));
        case DegradationKind::gaussian_noise:
            return detail::add_gaussian_noise(img, param(rec, "sigma"), rng);
        case DegradationKind::gaussian_noise_ycbcr: {
            ImageBuffer ycc = rgb_to_ycbcr(img);
            const double sy = param(rec, "sigma_y"), sc = param(rec, "sigma_c");
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    ycc.at(y, x, 0) = static_cast<float>(ycc.at(y, x, 0) + sy * rng.normal());
                    ycc.at(y, x, 1) = static_cast<float>(ycc.at(y, x, 1) + sc * rng.normal());
                    ycc.at(y, x, 2) = static_cast<float>(ycc.at(y, x, 2) + sc * rng.normal());
                }
            ImageBuffer out = ycbcr_to_rgb(ycc);
            out.clip();
            return out;
        }
        case DegradationKind::impulse_noise: {
            const double density = param(rec, "density");
            ImageBuffer out = img;
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    const double u = rng.uniform();
                    if (u < density * 0.5)
                        for (int c = 0; c < 3; ++c) out.at(y, x, c) = 0.f;
                    else if (u < density)
                        for (int c = 0; c < 3; ++c) out.at(y, x, c) = 1.f;
                }
            return out;
        }
        case DegradationKind::multiplicative_noise: {
            const double sigma = param(rec, "sigma");
            ImageBuffer out(h, w);
            for (std::size_t i = 0; i < img.data().size(); ++i) {
                const double v = static_cast<double>(img.data()[i]) * (1.0 + sigma * rng.normal());
                out.data()[i] = static_cast<float>(std::min(1.0, std::max(0.0, v)));
            }
            return out;
        }
        case DegradationKind::over_denoise: {
            ImageBuffer noisy = detail::add_gaussian_noise(img, param(rec, "noise_sigma"), rng);
            return gaussian_blur(noisy, param(rec, "blur_sigma"));
        }
        case DegradationKind::over_bright:
            return detail::tone_map(img, param(rec, "gain"), param(rec, "gamma"));
        case DegradationKind::low_light: {
            ImageBuffer dark = detail::tone_map(img, param(rec, "gain"), param(rec, "gamma"));
            return detail::add_gaussian_noise(dark, param(rec, "noise_sigma"), rng);
        }
        case DegradationKind::mean_shift: {
            const double off = param(rec, "offset");
            ImageBuffer out(h, w);
            for (std::size_t i = 0; i < img.data().size(); ++i)
                out.data()[i] = static_cast<float>(std::min(1.0, std::max(0.0, img.data()[i] + off)));
            return out;
        }
        case DegradationKind::resize_bicubic:
        case DegradationKind::resize_bilinear:
        case DegradationKind::resize_nearest:
        case DegradationKind::resize_lanczos: {
            const double f = param(rec, "factor");
            ResampleKernel k = ResampleKernel::bicubic;
            if (spec.kind == DegradationKind::resize_bilinear) k = ResampleKernel::bilinear;
            if (spec.kind == DegradationKind::resize_nearest) k = ResampleKernel::nearest;
            if (spec.kind == DegradationKind::resize_lanczos) k = ResampleKernel::lanczos3;
            const int dh = std::max(1, static_cast<int>(std::round(h / f)));
            const int dw = std::max(1, static_cast<int>(std::round(w / f)));
            return resize(resize(img, dh, dw, k), h, w, k);
        }
        case DegradationKind::over_sharpen: {
            const ImageBuffer blur = gaussian_blur(img, param(rec, "radius"));
            const double amount = param(rec, "amount");
            ImageBuffer out(h, w);
            for (std::size_t i = 0; i < img.data().size(); ++i) {
                const double v = img.data()[i] + amount * (static_cast<double>(img.data()[i]) - blur.data()[i]);
                out.data()[i] = static_cast<float>(std::min(1.0, std::max(0.0, v)));
            }
            return out;
        }
        case DegradationKind::contrast_imbalance:
            return detail::contrast_curve(img, param(rec, "slope"));
        case DegradationKind::color_block: {
            const int count = static_cast<int>(param(rec, "count"));
            const int md = std::min(h, w);
            ImageBuffer out = img;
            for (int i = 0; i < count; ++i) {
                const int bw = rng.uniform_int(std::max(2, md / 16), std::max(3, 3 * md / 16));
                const int bh = rng.uniform_int(std::max(2, md / 16), std::max(3, 3 * md / 16));
                const int x0 = rng.uniform_int(0, std::max(0, w - bw));
                const int y0 = rng.uniform_int(0, std::max(0, h - bh));
                const float col[3] = {static_cast<float>(rng.uniform()), static_cast<float>(rng.uniform()),
                                      static_cast<float>(rng.uniform())};
                for (int y = y0; y < std::min(h, y0 + bh); ++y)
                    for (int x = x0; x < std::min(w, x0 + bw); ++x)
                        for (int c = 0; c < 3; ++c) out.at(y, x, c) = col[c];
            }
            return out;
        }
        case DegradationKind::pixelate:
            return detail::pixelate_blocks(img, static_cast<int>(param(rec, "block")));
        case DegradationKind::discontinuous: {
            const int band = static_cast<int>(param(rec, "band"));
            const int shift = static_cast<int>(param(rec, "shift_px"));
            ImageBuffer out(h, w);
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    const int b = x / band;
                    const int sx = (b % 2 == 1) ? (x + shift) % w : x;
                    for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(y, sx, c);
                }
            return out;
        }
        case DegradationKind::jitter: {
            const double amp = param(rec, "amplitude");
            ImageBuffer out(h, w);
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    const int dy = static_cast<int>(std::lround(rng.uniform(-amp, amp)));
                    const int dx = static_cast<int>(std::lround(rng.uniform(-amp, amp)));
                    const int sy = std::min(h - 1, std::max(0, y + dy));
                    const int sx = std::min(w - 1, std::max(0, x + dx));
                    for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(sy, sx, c);
                }
            return out;
        }
        case DegradationKind::mosaic:
            return detail::mosaic_bayer(img);
        case DegradationKind::irregular_mask:
            return mask_degrade(img, MaskStyle::irregular, param(rec, "coverage"), spec.seed);
        case DegradationKind::block_mask:
            return mask_degrade(img, MaskStyle::block, param(rec, "coverage"), spec.seed);
        case DegradationKind::rain_streak: {
            const double angle = 1.5707963267948966 + rng.uniform(-0.3, 0.3);
            return streak_overlay(img, StreakFamily::rain, param(rec, "density"), param(rec, "length"),
                                  angle, param(rec, "strength"), 0.0, spec.seed);
        }
        case DegradationKind::snow_streak: {
            const double angle = 1.5707963267948966 + rng.uniform(-0.5, 0.5);
            return streak_overlay(img, StreakFamily::snow, param(rec, "density"), param(rec, "length"),
                                  angle, param(rec, "strength"), param(rec, "veil"), spec.seed);
        }
        default:
            throw ConfigError("apply: unknown degradation kind");
    }
}

// Uniform kind, uniform severity, fresh seed from the supplied stream.
inline DegradationSpec sample_spec(Prng& rng, const std::vector<DegradationKind>& kinds, float lo,
                                   float hi) {
    if (kinds.empty()) throw ConfigError("sample_spec: kind set must be non-empty");
    if (!(lo > 0.f && lo <= hi && hi <= 1.f)) throw ConfigError("sample_spec: need 0 < lo <= hi <= 1");
    DegradationSpec spec;
    spec.kind = kinds[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(kinds.size()) - 1))];
    spec.severity = lo == hi ? lo : static_cast<float>(rng.uniform(lo, hi));
    spec.seed = rng.next_u64();
    return spec;
}

} // namespace restora

#endif // RESTORA_DEGRADE_HPP_
