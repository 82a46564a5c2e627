// Copyright 2026 The restora Authors
// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference verification of tape gradients. Run in double
// precision: single-precision differences are too noisy for tight bounds.

#ifndef RESTORA_GRADCHECK_HPP_
#define RESTORA_GRADCHECK_HPP_

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "restora/tensor.hpp"

namespace restora {

struct GradCheckOptions {
    double eps = 1e-5;
    // Coordinates sampled per tensor; <= 0 checks every coordinate.
    int coords_per_tensor = 0;
    std::uint64_t seed = 0x5eed;
};

struct GradCheckReport {
    double max_rel = 0.0;
    double p95_rel = 0.0;
    std::size_t coords = 0;

    bool within(double tol_p95, double tol_max) const {
        return coords > 0 && p95_rel <= tol_p95 && max_rel <= tol_max;
    }
};

// Relative error with a unit floor: coordinates whose gradients are small
// in magnitude are compared absolutely. Loss functions in the suite use
// random O(1) weights so true gradients sit near unit scale.
inline double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1.0});
}

// f() must rebuild its computation from the current payloads of `wrt` on
// each call (tensor handles share payloads, so in-place perturbation of a
// watched tensor is visible to f). The analytic pass runs on a scoped tape;
// finite-difference evaluations run tape-free.
inline GradCheckReport grad_check(const std::function<Tensor<double>()>& f,
                                  std::vector<Tensor<double>> wrt,
                                  GradCheckOptions opt = {}) {
    std::vector<std::vector<double>> analytic;
    {
        Tape<double> tape;
        for (auto& t : wrt) {
            t.requires_grad = true;
            tape.watch(t);
        }
        Tensor<double> loss = f();
        tape.backward(loss);
        for (auto& t : wrt) analytic.push_back(tape.grad(t).data());
        for (auto& t : wrt) t.detach();
    }

    Prng rng(opt.seed);
    std::vector<double> errs;
    for (std::size_t ti = 0; ti < wrt.size(); ++ti) {
        auto& data = wrt[ti].data();
        const std::size_t nel = data.size();
        std::vector<std::size_t> coords;
        if (opt.coords_per_tensor <= 0 || static_cast<std::size_t>(opt.coords_per_tensor) >= nel) {
            coords.resize(nel);
            for (std::size_t i = 0; i < nel; ++i) coords[i] = i;
        } else {
            for (int i = 0; i < opt.coords_per_tensor; ++i)
                coords.push_back(static_cast<std::size_t>(rng.next_u64() % nel));
        }
        for (std::size_t ci : coords) {
            const double saved = data[ci];
            data[ci] = saved + opt.eps;
            const double lp = f().data()[0];
            data[ci] = saved - opt.eps;
            const double lm = f().data()[0];
            data[ci] = saved;
            const double numeric = (lp - lm) / (2.0 * opt.eps);
            errs.push_back(rel_err(analytic[ti][ci], numeric));
        }
    }

    GradCheckReport rep;
    rep.coords = errs.size();
    if (!errs.empty()) {
        std::sort(errs.begin(), errs.end());
        rep.max_rel = errs.back();
        const std::size_t i95 = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(errs.size())));
        rep.p95_rel = errs[std::min(errs.size() - 1, i95 == 0 ? 0 : i95 - 1)];
    }
    return rep;
}

} // namespace restora

#endif // RESTORA_GRADCHECK_HPP_
