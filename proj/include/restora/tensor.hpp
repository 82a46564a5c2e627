// Copyright 2026 The restora Authors
// SPDX-License-Identifier: Apache-2.0
//
// Rank-4 NCHW tensor plus a reverse-mode gradient tape.
//
// A Tensor is a cheap handle: payload and autograd metadata are shared
// between copies. Ops never mutate their inputs; the optimizer mutates
// parameter payloads in place between tapes. A tape is confined to one
// logical thread of control.

#ifndef RESTORA_TENSOR_HPP_
#define RESTORA_TENSOR_HPP_

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "restora/errors.hpp"
#include "restora/prng.hpp"

namespace restora {

struct Shape4 {
    int n = 1, c = 1, h = 1, w = 1;

    std::size_t count() const {
        return static_cast<std::size_t>(n) * static_cast<std::size_t>(c) *
               static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
    }
    bool operator==(const Shape4& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }
    bool operator!=(const Shape4& o) const { return !(*this == o); }

    std::string str() const {
        return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
               std::to_string(w) + ")";
    }
};

inline std::size_t idx4(const Shape4& s, int n, int c, int y, int x) {
    return ((static_cast<std::size_t>(n) * s.c + c) * s.h + y) * s.w + x;
}

template <typename T>
struct TapeState;

// Shared across tensor copies so that watching a parameter through any
// handle is visible through all of them.
template <typename T>
struct GradMeta {
    std::weak_ptr<TapeState<T>> tape;
    int node = -1;
};

template <typename T>
struct TapeState {
    struct Node {
        std::size_t numel = 0;
        // Accumulates into parent buffers via state.accum(). Null for leaves.
        std::function<void(TapeState&, const std::vector<T>&)> backprop;
    };

    std::vector<Node> nodes;
    std::vector<std::vector<T>> grads;

    int add_leaf(std::size_t numel) {
        nodes.push_back(Node{numel, nullptr});
        return static_cast<int>(nodes.size()) - 1;
    }

    template <typename F>
    int add_node(std::size_t numel, F&& fn) {
        nodes.push_back(Node{numel, std::forward<F>(fn)});
        return static_cast<int>(nodes.size()) - 1;
    }

    std::vector<T>& accum(int node) {
        if (grads.size() < nodes.size()) grads.resize(nodes.size());
        auto& g = grads[static_cast<std::size_t>(node)];
        if (g.empty()) g.assign(nodes[static_cast<std::size_t>(node)].numel, T(0));
        return g;
    }
};

template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() : store_(std::make_shared<std::vector<T>>()), meta_(std::make_shared<GradMeta<T>>()) {}

    Tensor(Shape4 s, std::vector<T> data)
        : shape(s),
          store_(std::make_shared<std::vector<T>>(std::move(data))),
          meta_(std::make_shared<GradMeta<T>>()) {
        if (store_->size() != s.count())
            throw DimensionError("tensor data length " + std::to_string(store_->size()) +
                                 " does not match shape " + s.str());
    }

    static Tensor zeros(Shape4 s) { return Tensor(s, std::vector<T>(s.count(), T(0))); }

    static Tensor full(Shape4 s, T v) { return Tensor(s, std::vector<T>(s.count(), v)); }

    static Tensor randn(Shape4 s, Prng& rng, T stddev = T(1)) {
        std::vector<T> d(s.count());
        for (auto& v : d) v = static_cast<T>(rng.normal()) * stddev;
        return Tensor(s, std::move(d));
    }

    // Truncated normal: redraw outside two standard deviations.
    static Tensor trunc_normal(Shape4 s, Prng& rng, T stddev) {
        std::vector<T> d(s.count());
        for (auto& v : d) {
            double z = rng.normal();
            while (z < -2.0 || z > 2.0) z = rng.normal();
            v = static_cast<T>(z) * stddev;
        }
        return Tensor(s, std::move(d));
    }

    Shape4 shape;
    bool requires_grad = false;

    std::size_t numel() const { return shape.count(); }
    std::vector<T>& data() { return *store_; }
    const std::vector<T>& data() const { return *store_; }
    T* ptr() { return store_->data(); }
    const T* ptr() const { return store_->data(); }

    T& at(int n, int c, int y, int x) { return (*store_)[idx4(shape, n, c, y, x)]; }
    T at(int n, int c, int y, int x) const { return (*store_)[idx4(shape, n, c, y, x)]; }

    // Deep copy with fresh autograd metadata.
    Tensor clone() const {
        Tensor t(shape, *store_);
        t.requires_grad = requires_grad;
        return t;
    }

    // Forget any tape association (payload untouched).
    void detach() { *meta_ = GradMeta<T>{}; }

    // Convert between precisions (payload copy, no tape).
    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> d(store_->size());
        for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<U>((*store_)[i]);
        return Tensor<U>(shape, std::move(d));
    }

    std::shared_ptr<GradMeta<T>> meta() const { return meta_; }

    // Live tape this tensor is recorded on, or null.
    std::shared_ptr<TapeState<T>> live_tape() const {
        if (meta_->node < 0) return nullptr;
        return meta_->tape.lock();
    }

private:
    std::shared_ptr<std::vector<T>> store_;
    std::shared_ptr<GradMeta<T>> meta_;
};

template <typename T>
class Tape {
public:
    Tape() : state_(std::make_shared<TapeState<T>>()) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Register a leaf whose gradient should be tracked.
    void watch(const Tensor<T>& t) {
        auto meta = t.meta();
        if (meta->node >= 0 && meta->tape.lock() == state_) return;
        meta->tape = state_;
        meta->node = state_->add_leaf(t.numel());
    }

    // Reverse pass from a scalar loss. Visits each recorded node exactly
    // once, in reverse insertion order (a valid reverse topological order).
    void backward(const Tensor<T>& loss) {
        if (loss.numel() != 1) throw ContractError("backward: loss must be scalar, got " + loss.shape.str());
        auto st = loss.live_tape();
        if (st != state_) throw ContractError("backward: loss is not recorded on this tape");
        state_->grads.assign(state_->nodes.size(), {});
        state_->grads[static_cast<std::size_t>(loss.meta()->node)] = {T(1)};
        for (int i = loss.meta()->node; i >= 0; --i) {
            auto& g = state_->grads[static_cast<std::size_t>(i)];
            if (g.empty()) continue; // not reachable from the loss
            auto& node = state_->nodes[static_cast<std::size_t>(i)];
            if (node.backprop) node.backprop(*state_, g);
        }
    }

    bool has_grad(const Tensor<T>& t) const {
        auto meta = t.meta();
        if (meta->node < 0 || meta->tape.lock() != state_) return false;
        auto idx = static_cast<std::size_t>(meta->node);
        return idx < state_->grads.size() && !state_->grads[idx].empty();
    }

    // Gradient of the last backward() w.r.t. t; zeros if t was unreachable.
    Tensor<T> grad(const Tensor<T>& t) const {
        auto meta = t.meta();
        if (meta->node < 0 || meta->tape.lock() != state_)
            throw ContractError("grad: tensor is not watched on this tape");
        auto idx = static_cast<std::size_t>(meta->node);
        if (idx >= state_->grads.size() || state_->grads[idx].empty()) return Tensor<T>::zeros(t.shape);
        return Tensor<T>(t.shape, state_->grads[idx]);
    }

    std::shared_ptr<TapeState<T>> state() const { return state_; }

private:
    std::shared_ptr<TapeState<T>> state_;
};

namespace detail {

// The single live tape among inputs, if any. Two distinct live tapes in
// one op is a programming error.
template <typename T>
std::shared_ptr<TapeState<T>> merge_tapes(std::initializer_list<const Tensor<T>*> ins) {
    std::shared_ptr<TapeState<T>> st;
    for (const auto* t : ins) {
        auto s = t->live_tape();
        if (!s) continue;
        if (st && st != s) throw ContractError("op inputs are recorded on different tapes");
        st = s;
    }
    return st;
}

// Node id of t on tape st: existing node, a fresh leaf if t wants grads,
// or -1 for a constant.
template <typename T>
int node_on(const std::shared_ptr<TapeState<T>>& st, const Tensor<T>& t) {
    auto meta = t.meta();
    if (meta->node >= 0 && meta->tape.lock() == st) return meta->node;
    if (t.requires_grad) {
        meta->tape = st;
        meta->node = st->add_leaf(t.numel());
        return meta->node;
    }
    return -1;
}

template <typename T, typename F>
void record(Tensor<T>& out, const std::shared_ptr<TapeState<T>>& st, F&& backprop) {
    if (!st) return;
    out.meta()->tape = st;
    out.meta()->node = st->add_node(out.numel(), std::forward<F>(backprop));
    out.requires_grad = true;
}

} // namespace detail

} // namespace restora

#endif // RESTORA_TENSOR_HPP_
