// Copyright 2026 The restora Authors
// SPDX-License-Identifier: Apache-2.0
//
// Float RGB image container (HWC, values in [0,1]) with bit-exact PPM I/O,
// BT.601 / HSV conversions, separable resampling and the geometric ops the
// distortion bank builds on. All functions are pure.

#ifndef RESTORA_IMAGE_HPP_
#define RESTORA_IMAGE_HPP_

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "restora/errors.hpp"
#include "restora/tensor.hpp"

namespace restora {

class ImageBuffer {
public:
    ImageBuffer() = default;
    ImageBuffer(int height, int width, float fill = 0.f)
        : h_(height), w_(width), data_(static_cast<std::size_t>(height) * width * 3, fill) {
        if (height < 1 || width < 1) throw DimensionError("ImageBuffer: extents must be >= 1");
    }

    int height() const { return h_; }
    int width() const { return w_; }
    static constexpr int channels() { return 3; }

    float& at(int y, int x, int c) { return data_[(static_cast<std::size_t>(y) * w_ + x) * 3 + c]; }
    float at(int y, int x, int c) const { return data_[(static_cast<std::size_t>(y) * w_ + x) * 3 + c]; }

    std::vector<float>& data() { return data_; }
    const std::vector<float>& data() const { return data_; }

    void clip() {
        for (auto& v : data_) v = std::min(1.f, std::max(0.f, v));
    }

    bool same_size(const ImageBuffer& o) const { return h_ == o.h_ && w_ == o.w_; }

private:
    int h_ = 0, w_ = 0;
    std::vector<float> data_;
};

// ---------------------------------------------------------------------------
// PPM (binary P6, maxval 255)

inline std::uint8_t float_to_byte(float v) {
    const long q = std::lround(static_cast<double>(std::min(1.f, std::max(0.f, v))) * 255.0);
    return static_cast<std::uint8_t>(std::min(255l, std::max(0l, q)));
}

inline void save_ppm(const ImageBuffer& img, const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError("save_ppm: cannot open " + path.string());
    f << "P6\n" << img.width() << " " << img.height() << "\n255\n";
    std::vector<std::uint8_t> bytes(img.data().size());
    for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = float_to_byte(img.data()[i]);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw FormatError("save_ppm: write failed for " + path.string());
}

namespace detail {
inline int ppm_read_int(std::istream& in) {
    // skip whitespace and '#' comment lines
    int c = in.get();
    while (c != EOF && (std::isspace(c) || c == '#')) {
        if (c == '#')
            while (c != EOF && c != '\n') c = in.get();
        c = in.get();
    }
    if (c == EOF || !std::isdigit(c)) throw FormatError("load_ppm: malformed header");
    int v = 0;
    while (c != EOF && std::isdigit(c)) {
        v = v * 10 + (c - '0');
        c = in.get();
    }
    return v;
}
} // namespace detail

inline ImageBuffer load_ppm(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("load_ppm: cannot open " + path.string());
    char m0 = 0, m1 = 0;
    f.get(m0);
    f.get(m1);
    if (m0 != 'P' || m1 != '6') throw FormatError("load_ppm: not a binary P6 file: " + path.string());
    const int w = detail::ppm_read_int(f);
    const int h = detail::ppm_read_int(f);
    const int maxval = detail::ppm_read_int(f);
    if (maxval != 255) throw FormatError("load_ppm: unsupported maxval " + std::to_string(maxval));
    if (w < 1 || h < 1) throw FormatError("load_ppm: bad dimensions");
    // exactly one whitespace byte separates header and payload (already
    // consumed by ppm_read_int), payload starts here
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(w) * h * 3);
    f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (f.gcount() != static_cast<std::streamsize>(bytes.size()))
        throw FormatError("load_ppm: truncated payload in " + path.string());
    ImageBuffer img(h, w);
    for (std::size_t i = 0; i < bytes.size(); ++i) img.data()[i] = static_cast<float>(bytes[i]) / 255.f;
    return img;
}

// ---------------------------------------------------------------------------
// color spaces

// ITU-R BT.601 full range; chroma offset +0.5 keeps channels in [0,1].
inline ImageBuffer rgb_to_ycbcr(const ImageBuffer& img) {
    ImageBuffer out(img.height(), img.width());
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x) {
            const float r = img.at(y, x, 0), g = img.at(y, x, 1), b = img.at(y, x, 2);
            out.at(y, x, 0) = 0.299f * r + 0.587f * g + 0.114f * b;
            out.at(y, x, 1) = -0.168735892f * r - 0.331264108f * g + 0.5f * b + 0.5f;
            out.at(y, x, 2) = 0.5f * r - 0.418687589f * g - 0.081312411f * b + 0.5f;
        }
    return out;
}

inline ImageBuffer ycbcr_to_rgb(const ImageBuffer& img) {
    ImageBuffer out(img.height(), img.width());
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x) {
            const float yy = img.at(y, x, 0);
            const float cb = img.at(y, x, 1) - 0.5f;
            const float cr = img.at(y, x, 2) - 0.5f;
            out.at(y, x, 0) = yy + 1.402f * cr;
            out.at(y, x, 1) = yy - 0.344136286f * cb - 0.714136286f * cr;
            out.at(y, x, 2) = yy + 1.772f * cb;
        }
    return out;
}

// Full-range BT.601 luma of one pixel.
inline float luma601(const ImageBuffer& img, int y, int x) {
    return 0.299f * img.at(y, x, 0) + 0.587f * img.at(y, x, 1) + 0.114f * img.at(y, x, 2);
}

// Standard hexcone model; H, S, V all in [0,1].
inline ImageBuffer rgb_to_hsv(const ImageBuffer& img) {
    ImageBuffer out(img.height(), img.width());
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x) {
            const float r = img.at(y, x, 0), g = img.at(y, x, 1), b = img.at(y, x, 2);
            const float mx = std::max({r, g, b}), mn = std::min({r, g, b});
            const float d = mx - mn;
            float hh = 0.f;
            if (d > 0.f) {
                if (mx == r)
                    hh = (g - b) / d;
                else if (mx == g)
                    hh = 2.f + (b - r) / d;
                else
                    hh = 4.f + (r - g) / d;
                hh /= 6.f;
                if (hh < 0.f) hh += 1.f;
            }
            out.at(y, x, 0) = hh;
            out.at(y, x, 1) = mx > 0.f ? d / mx : 0.f;
            out.at(y, x, 2) = mx;
        }
    return out;
}

inline ImageBuffer hsv_to_rgb(const ImageBuffer& img) {
    ImageBuffer out(img.height(), img.width());
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x) {
            const float hh = img.at(y, x, 0) * 6.f;
            const float s = img.at(y, x, 1), v = img.at(y, x, 2);
            const int sector = std::min(5, static_cast<int>(std::floor(hh)));
            const float f = hh - static_cast<float>(sector);
            const float p = v * (1.f - s);
            const float q = v * (1.f - s * f);
            const float t = v * (1.f - s * (1.f - f));
            float r, g, b;
            switch (sector) {
                case 0: r = v; g = t; b = p; break;
                case 1: r = q; g = v; b = p; break;
                case 2: r = p; g = v; b = t; break;
                case 3: r = p; g = q; b = v; break;
                case 4: r = t; g = p; b = v; break;
                default: r = v; g = p; b = q; break;
            }
            out.at(y, x, 0) = r;
            out.at(y, x, 1) = g;
            out.at(y, x, 2) = b;
        }
    return out;
}

// ---------------------------------------------------------------------------
// resampling

enum class ResampleKernel { nearest, bilinear, bicubic, lanczos3 };

inline const char* kernel_name(ResampleKernel k) {
    switch (k) {
        case ResampleKernel::nearest: return "nearest";
        case ResampleKernel::bilinear: return "bilinear";
        case ResampleKernel::bicubic: return "bicubic";
        default: return "lanczos3";
    }
}

namespace detail {

// Keys cubic with a = -0.5 (Catmull-Rom family).
inline double bicubic_weight(double x) {
    const double a = -0.5;
    x = std::abs(x);
    if (x < 1.0) return (a + 2.0) * x * x * x - (a + 3.0) * x * x + 1.0;
    if (x < 2.0) return a * x * x * x - 5.0 * a * x * x + 8.0 * a * x - 4.0 * a;
    return 0.0;
}

inline double sinc(double x) {
    if (x == 0.0) return 1.0;
    const double px = 3.14159265358979323846 * x;
    return std::sin(px) / px;
}

inline double lanczos3_weight(double x) {
    x = std::abs(x);
    if (x >= 3.0) return 0.0;
    return sinc(x) * sinc(x / 3.0);
}

inline double kernel_radius(ResampleKernel k) {
    switch (k) {
        case ResampleKernel::nearest: return 0.5;
        case ResampleKernel::bilinear: return 1.0;
        case ResampleKernel::bicubic: return 2.0;
        default: return 3.0;
    }
}

// Resample one axis: for each output index, taps and normalized weights.
struct TapSet {
    std::vector<int> first;      // first source index per output position
    std::vector<int> count;      // tap count per output position
    std::vector<double> weights; // flattened, `count[i]` weights starting at offset[i]
    std::vector<std::size_t> offset;
};

inline TapSet make_taps(int src_len, int dst_len, ResampleKernel k) {
    TapSet taps;
    taps.first.resize(static_cast<std::size_t>(dst_len));
    taps.count.resize(static_cast<std::size_t>(dst_len));
    taps.offset.resize(static_cast<std::size_t>(dst_len));
    const double scale = static_cast<double>(src_len) / static_cast<double>(dst_len);
    const double radius = kernel_radius(k);
    for (int d = 0; d < dst_len; ++d) {
        // pixel-center mapping
        const double src = (static_cast<double>(d) + 0.5) * scale - 0.5;
        taps.offset[static_cast<std::size_t>(d)] = taps.weights.size();
        if (k == ResampleKernel::nearest) {
            int s = static_cast<int>(std::floor(src + 0.5));
            s = std::min(src_len - 1, std::max(0, s));
            taps.first[static_cast<std::size_t>(d)] = s;
            taps.count[static_cast<std::size_t>(d)] = 1;
            taps.weights.push_back(1.0);
            continue;
        }
        const int lo = static_cast<int>(std::ceil(src - radius));
        const int hi = static_cast<int>(std::floor(src + radius));
        double sum = 0.0;
        std::vector<double> w;
        for (int s = lo; s <= hi; ++s) {
            double wv;
            const double t = src - static_cast<double>(s);
            if (k == ResampleKernel::bilinear)
                wv = std::max(0.0, 1.0 - std::abs(t));
            else if (k == ResampleKernel::bicubic)
                wv = bicubic_weight(t);
            else
                wv = lanczos3_weight(t);
            w.push_back(wv);
            sum += wv;
        }
        taps.first[static_cast<std::size_t>(d)] = lo;
        taps.count[static_cast<std::size_t>(d)] = hi - lo + 1;
        for (double wv : w) taps.weights.push_back(sum != 0.0 ? wv / sum : 0.0);
    }
    return taps;
}

} // namespace detail

// Separable resampling with pixel-center alignment src = (dst+0.5)*scale-0.5
// and edge clamp. No antialias pre-filter on downscale (kernel sampled at
// unit scale); output clipped to [0,1] after the final pass.
inline ImageBuffer resize(const ImageBuffer& img, int out_h, int out_w, ResampleKernel k) {
    if (out_h < 1 || out_w < 1) throw DimensionError("resize: output extents must be >= 1");
    const auto xtaps = detail::make_taps(img.width(), out_w, k);
    const auto ytaps = detail::make_taps(img.height(), out_h, k);

    // horizontal pass into (h, out_w) doubles
    std::vector<double> mid(static_cast<std::size_t>(img.height()) * out_w * 3);
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < out_w; ++x) {
            const std::size_t off = xtaps.offset[static_cast<std::size_t>(x)];
            double acc[3] = {0, 0, 0};
            for (int t = 0; t < xtaps.count[static_cast<std::size_t>(x)]; ++t) {
                const int sx = std::min(img.width() - 1, std::max(0, xtaps.first[static_cast<std::size_t>(x)] + t));
                const double wv = xtaps.weights[off + static_cast<std::size_t>(t)];
                for (int c = 0; c < 3; ++c) acc[c] += wv * static_cast<double>(img.at(y, sx, c));
            }
            for (int c = 0; c < 3; ++c) mid[(static_cast<std::size_t>(y) * out_w + x) * 3 + c] = acc[c];
        }

    ImageBuffer out(out_h, out_w);
    for (int y = 0; y < out_h; ++y)
        for (int x = 0; x < out_w; ++x) {
            const std::size_t off = ytaps.offset[static_cast<std::size_t>(y)];
            double acc[3] = {0, 0, 0};
            for (int t = 0; t < ytaps.count[static_cast<std::size_t>(y)]; ++t) {
                const int sy = std::min(img.height() - 1, std::max(0, ytaps.first[static_cast<std::size_t>(y)] + t));
                const double wv = ytaps.weights[off + static_cast<std::size_t>(t)];
                for (int c = 0; c < 3; ++c) acc[c] += wv * mid[(static_cast<std::size_t>(sy) * out_w + x) * 3 + c];
            }
            for (int c = 0; c < 3; ++c)
                out.at(y, x, c) = static_cast<float>(std::min(1.0, std::max(0.0, acc[c])));
        }
    return out;
}

// ---------------------------------------------------------------------------
// geometry

inline ImageBuffer crop(const ImageBuffer& img, int x, int y, int w, int h) {
    if (x < 0 || y < 0 || w < 1 || h < 1 || x + w > img.width() || y + h > img.height())
        throw RangeError("crop: window outside image bounds");
    ImageBuffer out(h, w);
    for (int yy = 0; yy < h; ++yy)
        for (int xx = 0; xx < w; ++xx)
            for (int c = 0; c < 3; ++c) out.at(yy, xx, c) = img.at(y + yy, x + xx, c);
    return out;
}

inline ImageBuffer flip_h(const ImageBuffer& img) {
    ImageBuffer out(img.height(), img.width());
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x)
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(y, img.width() - 1 - x, c);
    return out;
}

inline ImageBuffer flip_v(const ImageBuffer& img) {
    ImageBuffer out(img.height(), img.width());
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x)
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(img.height() - 1 - y, x, c);
    return out;
}

// k quarter-turns counter-clockwise.
inline ImageBuffer rot90(const ImageBuffer& img, int k) {
    k = ((k % 4) + 4) % 4;
    if (k == 0) return img;
    ImageBuffer cur = img;
    for (int i = 0; i < k; ++i) {
        ImageBuffer out(cur.width(), cur.height());
        for (int y = 0; y < cur.height(); ++y)
            for (int x = 0; x < cur.width(); ++x)
                for (int c = 0; c < 3; ++c) out.at(cur.width() - 1 - x, y, c) = cur.at(y, x, c);
        cur = std::move(out);
    }
    return cur;
}

// Symmetric reflection (edge repeated), total over any pad amount.
inline int reflect_index(int i, int len) {
    if (len == 1) return 0;
    const int period = 2 * len;
    i = ((i % period) + period) % period;
    return i < len ? i : period - 1 - i;
}

inline ImageBuffer pad_to_multiple(const ImageBuffer& img, int multiple) {
    const int ph = (multiple - img.height() % multiple) % multiple;
    const int pw = (multiple - img.width() % multiple) % multiple;
    if (ph == 0 && pw == 0) return img;
    ImageBuffer out(img.height() + ph, img.width() + pw);
    for (int y = 0; y < out.height(); ++y)
        for (int x = 0; x < out.width(); ++x) {
            const int sy = reflect_index(y, img.height());
            const int sx = reflect_index(x, img.width());
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(sy, sx, c);
        }
    return out;
}

// ---------------------------------------------------------------------------
// tensor bridging

template <typename T>
Tensor<T> image_to_tensor(const ImageBuffer& img) {
    Tensor<T> t = Tensor<T>::zeros(Shape4{1, 3, img.height(), img.width()});
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x)
            for (int c = 0; c < 3; ++c) t.at(0, c, y, x) = static_cast<T>(img.at(y, x, c));
    return t;
}

template <typename T>
ImageBuffer tensor_to_image(const Tensor<T>& t, int batch_index = 0) {
    if (t.shape.c != 3) throw DimensionError("tensor_to_image: expected 3 channels");
    ImageBuffer img(t.shape.h, t.shape.w);
    for (int y = 0; y < t.shape.h; ++y)
        for (int x = 0; x < t.shape.w; ++x)
            for (int c = 0; c < 3; ++c)
                img.at(y, x, c) = std::min(1.f, std::max(0.f, static_cast<float>(t.at(batch_index, c, y, x))));
    return img;
}

} // namespace restora

#endif // RESTORA_IMAGE_HPP_
