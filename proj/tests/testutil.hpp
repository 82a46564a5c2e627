// Copyright 2026 The restora Authors
// SPDX-License-Identifier: Apache-2.0
//
// Shared test helpers: seeded synthetic "natural" images (smooth gradients,
// soft blobs, a few hard edges) and scratch-directory management.

#ifndef RESTORA_TESTS_TESTUTIL_HPP_
#define RESTORA_TESTS_TESTUTIL_HPP_

#include <cstdlib>
#include <filesystem>
#include <string>

#include "restora/image.hpp"
#include "restora/prng.hpp"

namespace testutil {

// Piecewise-smooth color image: base gradient, Gaussian blobs, two hard
// rectangles. Deterministic in (h, w, seed).
inline restora::ImageBuffer synthetic_image(int h, int w, std::uint64_t seed) {
    restora::Prng rng(seed);
    restora::ImageBuffer img(h, w);
    double off[3], gx[3], gy[3];
    for (int c = 0; c < 3; ++c) {
        off[c] = rng.uniform(0.3, 0.7);
        gx[c] = rng.uniform(-0.35, 0.35);
        gy[c] = rng.uniform(-0.35, 0.35);
    }
    struct Blob {
        double cx, cy, r, amp[3];
    };
    std::vector<Blob> blobs;
    const int nblobs = 6 + rng.uniform_int(0, 5);
    for (int i = 0; i < nblobs; ++i) {
        Blob b;
        b.cx = rng.uniform(0.0, w);
        b.cy = rng.uniform(0.0, h);
        b.r = rng.uniform(0.08, 0.35) * std::min(h, w);
        for (int c = 0; c < 3; ++c) b.amp[c] = rng.uniform(-0.35, 0.35);
        blobs.push_back(b);
    }
    struct Rect {
        int x0, y0, x1, y1;
        double amp[3];
    };
    std::vector<Rect> rects;
    for (int i = 0; i < 2; ++i) {
        Rect r;
        r.x0 = rng.uniform_int(0, std::max(0, w - 8));
        r.y0 = rng.uniform_int(0, std::max(0, h - 8));
        r.x1 = std::min(w, r.x0 + rng.uniform_int(w / 8 + 1, std::max(w / 8 + 2, w / 2)));
        r.y1 = std::min(h, r.y0 + rng.uniform_int(h / 8 + 1, std::max(h / 8 + 2, h / 2)));
        for (int c = 0; c < 3; ++c) r.amp[c] = rng.uniform(-0.25, 0.25);
        rects.push_back(r);
    }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                double v = off[c] + gx[c] * (static_cast<double>(x) / w - 0.5) +
                           gy[c] * (static_cast<double>(y) / h - 0.5);
                for (const auto& b : blobs) {
                    const double dx = x - b.cx, dy = y - b.cy;
                    v += b.amp[c] * std::exp(-(dx * dx + dy * dy) / (2.0 * b.r * b.r));
                }
                for (const auto& r : rects)
                    if (x >= r.x0 && x < r.x1 && y >= r.y0 && y < r.y1) v += r.amp[c];
                img.at(y, x, c) = static_cast<float>(std::min(1.0, std::max(0.0, v)));
            }
    return img;
}

// Fresh scratch directory under the system temp dir; removed on destruction.
class ScratchDir {
public:
    explicit ScratchDir(const std::string& tag) {
        path_ = std::filesystem::temp_directory_path() /
                ("restora_test_" + tag + "_" + std::to_string(::getpid()));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~ScratchDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

} // namespace testutil

#endif // RESTORA_TESTS_TESTUTIL_HPP_
