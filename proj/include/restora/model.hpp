// Copyright 2026 The restora Authors
// SPDX-License-Identifier: Apache-2.0
//
// Text-conditioned restoration backbone: a five-level encoder-decoder over
// ConvFormer/TransFormer blocks. Each block sums a channel-attention branch
// and a spatial branch (global MSA or a ConvNeXt-v2-style body) into the
// residual, then applies a gated convolutional feed-forward network.
// Context interaction modules (self-attention + cross-attention against the
// prompt embedding) sit inside configured decoder stages. The network
// predicts a residual; a zero-initialized tail makes the fresh model the
// exact identity.

#ifndef RESTORA_MODEL_HPP_
#define RESTORA_MODEL_HPP_

#include <array>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "restora/conditioning.hpp"
#include "restora/ops.hpp"
#include "restora/tensor.hpp"

namespace restora {

enum class BlockKind { conv_former, trans_former };

struct ModelConfig {
    int base_width = 48;
    std::array<int, 5> level_depths = {4, 6, 6, 8, 8};
    std::array<BlockKind, 5> level_kinds = {BlockKind::conv_former, BlockKind::conv_former,
                                            BlockKind::conv_former, BlockKind::trans_former,
                                            BlockKind::trans_former};
    std::array<int, 5> heads = {1, 2, 4, 8, 8};
    std::vector<int> cim_levels = {5, 4, 3}; // decoder stages carrying context modules
    int cim_blocks_per_level = 2;
    int context_dim = 64;

    int level_width(int level) const { return base_width << (level - 1); }

    bool has_cim(int level) const {
        for (int l : cim_levels)
            if (l == level) return true;
        return false;
    }

    int total_cims() const { return static_cast<int>(cim_levels.size()) * cim_blocks_per_level; }

    void validate() const {
        if (base_width < 2 || base_width % 2 != 0)
            throw ConfigError("ModelConfig: base_width must be even and >= 2");
        for (int d : level_depths)
            if (d < 1) throw ConfigError("ModelConfig: level depths must be >= 1");
        if (cim_blocks_per_level < 1) throw ConfigError("ModelConfig: cim_blocks_per_level must be >= 1");
        if (context_dim < 1) throw ConfigError("ModelConfig: context_dim must be >= 1");
        for (int lv = 1; lv <= 5; ++lv) {
            const bool needs_heads =
                level_kinds[static_cast<std::size_t>(lv - 1)] == BlockKind::trans_former || has_cim(lv);
            if (needs_heads && level_width(lv) % heads[static_cast<std::size_t>(lv - 1)] != 0)
                throw ConfigError("ModelConfig: width at level " + std::to_string(lv) +
                                  " not divisible by its head count");
        }
        for (int l : cim_levels)
            if (l < 1 || l > 5) throw ConfigError("ModelConfig: cim levels must be in [1,5]");
    }

    // Desk-scale profile used by the verification suites.
    static ModelConfig tiny() {
        ModelConfig c;
        c.base_width = 8;
        c.level_depths = {1, 1, 1, 1, 1};
        c.heads = {1, 2, 4, 8, 8};
        c.context_dim = 32;
        return c;
    }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
    std::vector<std::string> kinds;
    for (auto k : c.level_kinds) kinds.push_back(k == BlockKind::conv_former ? "conv" : "trans");
    j = nlohmann::json{{"base_width", c.base_width},
                       {"level_depths", c.level_depths},
                       {"level_kinds", kinds},
                       {"heads", c.heads},
                       {"cim_levels", c.cim_levels},
                       {"cim_blocks_per_level", c.cim_blocks_per_level},
                       {"context_dim", c.context_dim}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
    c.base_width = j.at("base_width").get<int>();
    auto depths = j.at("level_depths").get<std::vector<int>>();
    auto heads = j.at("heads").get<std::vector<int>>();
    auto kinds = j.at("level_kinds").get<std::vector<std::string>>();
    if (depths.size() != 5 || heads.size() != 5 || kinds.size() != 5)
        throw FormatError("ModelConfig: expected 5 levels");
    for (int i = 0; i < 5; ++i) {
        c.level_depths[static_cast<std::size_t>(i)] = depths[static_cast<std::size_t>(i)];
        c.heads[static_cast<std::size_t>(i)] = heads[static_cast<std::size_t>(i)];
        c.level_kinds[static_cast<std::size_t>(i)] =
            kinds[static_cast<std::size_t>(i)] == "trans" ? BlockKind::trans_former : BlockKind::conv_former;
    }
    c.cim_levels = j.at("cim_levels").get<std::vector<int>>();
    c.cim_blocks_per_level = j.at("cim_blocks_per_level").get<int>();
    c.context_dim = j.at("context_dim").get<int>();
}

// ---------------------------------------------------------------------------
// parameter store

template <typename T>
class ParameterStore {
public:
    Tensor<T>& add(const std::string& name, Tensor<T> t) {
        if (index_.count(name)) throw ContractError("duplicate parameter name: " + name);
        index_[name] = static_cast<int>(names_.size());
        names_.push_back(name);
        t.requires_grad = true;
        tensors_.push_back(std::move(t));
        return tensors_.back();
    }

    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    Tensor<T>& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw ContractError("unknown parameter: " + name);
        return tensors_[static_cast<std::size_t>(it->second)];
    }
    const Tensor<T>& at(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ContractError("unknown parameter: " + name);
        return tensors_[static_cast<std::size_t>(it->second)];
    }

    std::size_t size() const { return names_.size(); }
    const std::string& name(std::size_t i) const { return names_[i]; }
    Tensor<T>& tensor(std::size_t i) { return tensors_[i]; }
    const Tensor<T>& tensor(std::size_t i) const { return tensors_[i]; }

    std::size_t total_params() const {
        std::size_t s = 0;
        for (const auto& t : tensors_) s += t.numel();
        return s;
    }

    void watch_all(Tape<T>& tape) const {
        for (const auto& t : tensors_) tape.watch(t);
    }

    void detach_all() {
        for (auto& t : tensors_) t.detach();
    }

private:
    std::vector<std::string> names_;
    std::vector<Tensor<T>> tensors_;
    std::unordered_map<std::string, int> index_;
};

// ---------------------------------------------------------------------------
// building blocks (free functions over a store + name prefix)

namespace blocks {

// CA(x) = x * MLP(Avg(x)); MLP is pointwise c -> max(1, c/4) -> c with GELU
// between and no output nonlinearity.
template <typename T>
Tensor<T> channel_attention(const Tensor<T>& x, const ParameterStore<T>& ps, const std::string& prefix) {
    auto gate = ops::global_avg_pool(x);
    gate = ops::conv2d(gate, ps.at(prefix + "w1.weight"), ps.at(prefix + "w1.bias"));
    gate = ops::gelu(gate);
    gate = ops::conv2d(gate, ps.at(prefix + "w2.weight"), ps.at(prefix + "w2.bias"));
    return ops::channel_scale(x, gate);
}

// Two expanded depthwise branches, one GELU-gated, multiplied and projected.
template <typename T>
Tensor<T> gcffn(const Tensor<T>& x, const ParameterStore<T>& ps, const std::string& prefix) {
    const int ce = ps.at(prefix + "wp1.weight").shape.n; // expansion width
    auto x1 = ops::conv2d(x, ps.at(prefix + "wp1.weight"), ps.at(prefix + "wp1.bias"));
    x1 = ops::conv2d(x1, ps.at(prefix + "wd1.weight"), ps.at(prefix + "wd1.bias"), 1, 1, ce);
    auto x2 = ops::conv2d(x, ps.at(prefix + "wp2.weight"), ps.at(prefix + "wp2.bias"));
    x2 = ops::conv2d(x2, ps.at(prefix + "wd2.weight"), ps.at(prefix + "wd2.bias"), 1, 1, ce);
    auto gated = ops::mul(ops::gelu(x1), x2);
    return ops::conv2d(gated, ps.at(prefix + "wp3.weight"), ps.at(prefix + "wp3.bias"));
}

// ConvNeXt-v2-style body: dw7x7 -> LN -> expand x4 -> GELU -> GRN -> project.
// No residual here; callers choose between the branch form (inside
// ConvFormer) and the standalone block with its own skip.
template <typename T>
Tensor<T> conv_block_body(const Tensor<T>& x, const ParameterStore<T>& ps, const std::string& prefix) {
    const int c = x.shape.c;
    auto y = ops::conv2d(x, ps.at(prefix + "dw.weight"), ps.at(prefix + "dw.bias"), 1, 3, c);
    y = ops::layer_norm(y, ps.at(prefix + "norm.gamma"), ps.at(prefix + "norm.beta"));
    y = ops::conv2d(y, ps.at(prefix + "pw1.weight"), ps.at(prefix + "pw1.bias"));
    y = ops::gelu(y);
    y = ops::grn(y, ps.at(prefix + "grn.gamma"), ps.at(prefix + "grn.beta"));
    return ops::conv2d(y, ps.at(prefix + "pw2.weight"), ps.at(prefix + "pw2.bias"));
}

template <typename T>
Tensor<T> conv_block(const Tensor<T>& x, const ParameterStore<T>& ps, const std::string& prefix) {
    return ops::add(x, conv_block_body(x, ps, prefix));
}

// Global multi-head self-attention over all spatial tokens.
template <typename T>
Tensor<T> gmsa(const Tensor<T>& x, const ParameterStore<T>& ps, const std::string& prefix, int heads) {
    const int h = x.shape.h, w = x.shape.w;
    auto t = ops::nchw_to_tokens(x);
    auto q = ops::linear(t, ps.at(prefix + "wq.weight"), ps.at(prefix + "wq.bias"));
    auto k = ops::linear(t, ps.at(prefix + "wk.weight"), ps.at(prefix + "wk.bias"));
    auto v = ops::linear(t, ps.at(prefix + "wv.weight"), ps.at(prefix + "wv.bias"));
    auto a = ops::attention(q, k, v, heads);
    a = ops::linear(a, ps.at(prefix + "wo.weight"), ps.at(prefix + "wo.bias"));
    return ops::tokens_to_nchw(a, h, w);
}

// u = x + CA(LN(x)) + Spatial(LN(x));  out = u + GCFFN(LN(u)).
// Both attention branches share one pre-norm. The spatial branch vanishes
// when its output projection is zero, for either block kind.
template <typename T>
Tensor<T> former_block(const Tensor<T>& x, const ParameterStore<T>& ps, const std::string& prefix,
                       BlockKind kind, int heads) {
    auto normed = ops::layer_norm(x, ps.at(prefix + "norm1.gamma"), ps.at(prefix + "norm1.beta"));
    auto ca = channel_attention(normed, ps, prefix + "ca.");
    auto spatial = kind == BlockKind::trans_former ? gmsa(normed, ps, prefix + "attn.", heads)
                                                   : conv_block_body(normed, ps, prefix + "cb.");
    auto u = ops::add(ops::add(x, ca), spatial);
    auto ffn_in = ops::layer_norm(u, ps.at(prefix + "norm2.gamma"), ps.at(prefix + "norm2.beta"));
    return ops::add(u, gcffn(ffn_in, ps, prefix + "ffn."));
}

// F'  = Self-Attn(LN(F)) + F
// F'' = Cross-Attn(LN(F'), E) + F'
template <typename T>
Tensor<T> cim(const Tensor<T>& f, const ContextBatch<T>& ctx, const ParameterStore<T>& ps,
              const std::string& prefix, int heads) {
    const int h = f.shape.h, w = f.shape.w;
    const int ctx_dim = ps.at(prefix + "cross.wk.weight").shape.c;
    if (ctx.e.shape.h != ctx_dim)
        throw ConfigError("cim: context width " + std::to_string(ctx.e.shape.h) +
                          " does not match configured projection (" + std::to_string(ctx_dim) + ")");
    if (ctx.e.shape.n != f.shape.n) throw DimensionError("cim: context batch mismatch");

    auto normed = ops::layer_norm(f, ps.at(prefix + "norm1.gamma"), ps.at(prefix + "norm1.beta"));
    auto t = ops::nchw_to_tokens(normed);
    auto q = ops::linear(t, ps.at(prefix + "self.wq.weight"), ps.at(prefix + "self.wq.bias"));
    auto k = ops::linear(t, ps.at(prefix + "self.wk.weight"), ps.at(prefix + "self.wk.bias"));
    auto v = ops::linear(t, ps.at(prefix + "self.wv.weight"), ps.at(prefix + "self.wv.bias"));
    auto sa = ops::attention(q, k, v, heads);
    sa = ops::linear(sa, ps.at(prefix + "self.wo.weight"), ps.at(prefix + "self.wo.bias"));
    auto f1 = ops::add(f, ops::tokens_to_nchw(sa, h, w));

    auto normed2 = ops::layer_norm(f1, ps.at(prefix + "norm2.gamma"), ps.at(prefix + "norm2.beta"));
    auto tq = ops::nchw_to_tokens(normed2);
    auto q2 = ops::linear(tq, ps.at(prefix + "cross.wq.weight"), ps.at(prefix + "cross.wq.bias"));
    auto k2 = ops::linear(ctx.e, ps.at(prefix + "cross.wk.weight"), ps.at(prefix + "cross.wk.bias"));
    auto v2 = ops::linear(ctx.e, ps.at(prefix + "cross.wv.weight"), ps.at(prefix + "cross.wv.bias"));
    auto ca = ops::attention(q2, k2, v2, heads, ctx.lengths);
    ca = ops::linear(ca, ps.at(prefix + "cross.wo.weight"), ps.at(prefix + "cross.wo.bias"));
    return ops::add(f1, ops::tokens_to_nchw(ca, h, w));
}

} // namespace blocks

// ---------------------------------------------------------------------------
// model

template <typename T>
class Model {
public:
    Model() = default;

    static Model init(const ModelConfig& cfg, std::uint64_t seed,
                      PromptVocabulary vocab = PromptVocabulary::standard()) {
        cfg.validate();
        Model m;
        m.cfg_ = cfg;
        m.vocab_ = std::move(vocab);
        m.init_seed_ = seed;
        m.build_params(seed);
        return m;
    }

    const ModelConfig& config() const { return cfg_; }
    const PromptVocabulary& vocab() const { return vocab_; }
    ParameterStore<T>& params() { return params_; }
    const ParameterStore<T>& params() const { return params_; }

    ContextBatch<T> encode_prompts(const std::vector<std::string>& prompts) const {
        return restora::encode_prompts(vocab_, params_.at("cond.emb"), params_.at("cond.pos"), prompts);
    }

    // img: (n, 3, h, w) with h, w divisible by 16. ctx batch must match.
    Tensor<T> forward(const Tensor<T>& img, const ContextBatch<T>& ctx) const {
        if (img.shape.c != 3) throw ContractError("forward: expected 3 input channels");
        if (img.shape.h % 16 != 0 || img.shape.w % 16 != 0)
            throw ContractError("forward: spatial dims must be divisible by 16 (reflect-pad first)");

        auto f = ops::conv2d(img, params_.at("head.weight"), params_.at("head.bias"), 1, 1);
        std::array<Tensor<T>, 5> skips;
        for (int lv = 1; lv <= 4; ++lv) {
            f = run_stage(f, ctx, "enc" + std::to_string(lv) + ".", lv, /*with_cim=*/false);
            skips[static_cast<std::size_t>(lv)] = f;
            f = ops::pixel_unshuffle(f, 2);
            const std::string dn = "down" + std::to_string(lv) + ".";
            f = ops::conv2d(f, params_.at(dn + "weight"), params_.at(dn + "bias"));
        }
        f = run_stage(f, ctx, "bott.", 5, cfg_.has_cim(5));
        for (int lv = 4; lv >= 1; --lv) {
            f = ops::pixel_shuffle(f, 2);
            f = ops::concat_channels(f, skips[static_cast<std::size_t>(lv)]);
            const std::string up = "dec" + std::to_string(lv) + ".up.";
            f = ops::conv2d(f, params_.at(up + "weight"), params_.at(up + "bias"));
            f = run_stage(f, ctx, "dec" + std::to_string(lv) + ".", lv, cfg_.has_cim(lv));
        }
        auto residual = ops::conv2d(f, params_.at("tail.weight"), params_.at("tail.bias"), 1, 1);
        return ops::clamp01(ops::add(img, residual));
    }

private:
    // One encoder/decoder stage: depth blocks with context modules
    // interleaved evenly through the stage (after ceil(d*j/n) blocks).
    Tensor<T> run_stage(Tensor<T> f, const ContextBatch<T>& ctx, const std::string& prefix, int level,
                        bool with_cim) const {
        const int depth = cfg_.level_depths[static_cast<std::size_t>(level - 1)];
        const BlockKind kind = cfg_.level_kinds[static_cast<std::size_t>(level - 1)];
        const int heads = cfg_.heads[static_cast<std::size_t>(level - 1)];
        const int n_cim = with_cim ? cfg_.cim_blocks_per_level : 0;
        int placed = 0;
        for (int b = 0; b < depth; ++b) {
            f = blocks::former_block(f, params_, prefix + "b" + std::to_string(b) + ".", kind, heads);
            while (placed < n_cim && (b + 1) * n_cim >= depth * (placed + 1)) {
                f = blocks::cim(f, ctx, params_, prefix + "cim" + std::to_string(placed) + ".", heads);
                ++placed;
            }
        }
        while (placed < n_cim) {
            f = blocks::cim(f, ctx, params_, prefix + "cim" + std::to_string(placed) + ".", heads);
            ++placed;
        }
        return f;
    }

    // Parameter construction. Weight init is truncated normal (std 0.02)
    // seeded per name, biases and norm betas zero, norm gammas one, and a
    // zero tail so an untrained model is the identity map.
    void build_params(std::uint64_t seed) {
        auto weight = [&](const std::string& name, Shape4 s) {
            Prng rng(hash64(seed, name));
            params_.add(name, Tensor<T>::trunc_normal(s, rng, T(0.02)));
        };
        auto zeros = [&](const std::string& name, Shape4 s) { params_.add(name, Tensor<T>::zeros(s)); };
        auto ones = [&](const std::string& name, Shape4 s) { params_.add(name, Tensor<T>::full(s, T(1))); };

        auto add_norm = [&](const std::string& p, int c) {
            ones(p + "gamma", Shape4{1, c, 1, 1});
            zeros(p + "beta", Shape4{1, c, 1, 1});
        };
        auto add_linear = [&](const std::string& p, int din, int dout) {
            weight(p + "weight", Shape4{dout, din, 1, 1});
            zeros(p + "bias", Shape4{1, 1, dout, 1});
        };
        auto add_conv = [&](const std::string& p, int cin, int cout, int k, int groups = 1) {
            weight(p + "weight", Shape4{cout, cin / groups, k, k});
            zeros(p + "bias", Shape4{1, cout, 1, 1});
        };

        auto add_block = [&](const std::string& p, int c, BlockKind kind) {
            add_norm(p + "norm1.", c);
            const int hid = std::max(1, c / 4);
            add_conv(p + "ca.w1.", c, hid, 1);
            add_conv(p + "ca.w2.", hid, c, 1);
            if (kind == BlockKind::trans_former) {
                for (const char* nm : {"wq", "wk", "wv", "wo"}) add_linear(p + "attn." + nm + ".", c, c);
            } else {
                add_conv(p + "cb.dw.", c, c, 7, c);
                add_norm(p + "cb.norm.", c);
                add_conv(p + "cb.pw1.", c, 4 * c, 1);
                add_norm(p + "cb.grn.", 4 * c);
                add_conv(p + "cb.pw2.", 4 * c, c, 1);
            }
            add_norm(p + "norm2.", c);
            const int ce = 2 * c; // feed-forward expansion
            add_conv(p + "ffn.wp1.", c, ce, 1);
            add_conv(p + "ffn.wd1.", ce, ce, 3, ce);
            add_conv(p + "ffn.wp2.", c, ce, 1);
            add_conv(p + "ffn.wd2.", ce, ce, 3, ce);
            add_conv(p + "ffn.wp3.", ce, c, 1);
        };
        auto add_cim = [&](const std::string& p, int c) {
            add_norm(p + "norm1.", c);
            for (const char* nm : {"wq", "wk", "wv", "wo"}) add_linear(p + "self." + nm + ".", c, c);
            add_norm(p + "norm2.", c);
            add_linear(p + "cross.wq.", c, c);
            add_linear(p + "cross.wk.", cfg_.context_dim, c);
            add_linear(p + "cross.wv.", cfg_.context_dim, c);
            add_linear(p + "cross.wo.", c, c);
        };
        auto add_stage = [&](const std::string& p, int level, bool with_cim) {
            const int c = cfg_.level_width(level);
            for (int b = 0; b < cfg_.level_depths[static_cast<std::size_t>(level - 1)]; ++b)
                add_block(p + "b" + std::to_string(b) + ".", c,
                          cfg_.level_kinds[static_cast<std::size_t>(level - 1)]);
            if (with_cim)
                for (int j = 0; j < cfg_.cim_blocks_per_level; ++j)
                    add_cim(p + "cim" + std::to_string(j) + ".", c);
        };

        const int C = cfg_.base_width;
        add_conv("head.", 3, C, 3);
        for (int lv = 1; lv <= 4; ++lv) {
            add_stage("enc" + std::to_string(lv) + ".", lv, false);
            add_conv("down" + std::to_string(lv) + ".", 4 * cfg_.level_width(lv), cfg_.level_width(lv + 1), 1);
        }
        add_stage("bott.", 5, cfg_.has_cim(5));
        for (int lv = 4; lv >= 1; --lv) {
            const int c = cfg_.level_width(lv);
            add_conv("dec" + std::to_string(lv) + ".up.", c / 2 + c, c, 1);
            add_stage("dec" + std::to_string(lv) + ".", lv, cfg_.has_cim(lv));
        }
        // residual head: zero so the fresh model maps every input to itself
        zeros("tail.weight", Shape4{3, C, 3, 3});
        zeros("tail.bias", Shape4{1, 3, 1, 1});

        weight("cond.emb", Shape4{1, vocab_.size(), cfg_.context_dim, 1});
        weight("cond.pos", Shape4{1, kMaxPromptTokens, cfg_.context_dim, 1});
    }

    ModelConfig cfg_;
    PromptVocabulary vocab_;
    ParameterStore<T> params_;
    std::uint64_t init_seed_ = 0;
};

// ---------------------------------------------------------------------------
// checkpoint I/O
//
// Layout (little endian): magic "UPRC", u32 version=1, u32 tensor count,
// then per tensor {u16 name length, name, u8 ndim=4, 4x u32 dims, f32
// payload}, then u32 JSON length + UTF-8 JSON blob (model config, vocab,
// optional optimizer metadata).

namespace detail {

inline void write_u16(std::ostream& os, std::uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>(v >> 8)};
    os.write(reinterpret_cast<const char*>(b), 2);
}
inline void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 4);
}
inline std::uint16_t read_u16(std::istream& is) {
    unsigned char b[2];
    is.read(reinterpret_cast<char*>(b), 2);
    if (!is) throw FormatError("checkpoint: truncated");
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}
inline std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw FormatError("checkpoint: truncated");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

} // namespace detail

struct CheckpointData {
    ModelConfig config;
    PromptVocabulary vocab;
    std::vector<std::pair<std::string, Tensor<float>>> tensors;
    nlohmann::json extra;
};

inline void write_checkpoint_tensors(const std::filesystem::path& path,
                                     const std::vector<std::pair<std::string, Tensor<float>>>& tensors,
                                     const nlohmann::json& blob) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError("checkpoint: cannot open " + path.string() + " for writing");
    f.write("UPRC", 4);
    detail::write_u32(f, 1u);
    detail::write_u32(f, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        detail::write_u16(f, static_cast<std::uint16_t>(name.size()));
        f.write(name.data(), static_cast<std::streamsize>(name.size()));
        f.put(static_cast<char>(4));
        detail::write_u32(f, static_cast<std::uint32_t>(t.shape.n));
        detail::write_u32(f, static_cast<std::uint32_t>(t.shape.c));
        detail::write_u32(f, static_cast<std::uint32_t>(t.shape.h));
        detail::write_u32(f, static_cast<std::uint32_t>(t.shape.w));
        f.write(reinterpret_cast<const char*>(t.data().data()),
                static_cast<std::streamsize>(t.numel() * sizeof(float)));
    }
    const std::string js = blob.dump();
    detail::write_u32(f, static_cast<std::uint32_t>(js.size()));
    f.write(js.data(), static_cast<std::streamsize>(js.size()));
    if (!f) throw FormatError("checkpoint: write failed for " + path.string());
}

inline void save_checkpoint(const std::filesystem::path& path, const Model<float>& model,
                            const nlohmann::json& extra = nlohmann::json::object(),
                            const std::vector<std::pair<std::string, Tensor<float>>>& extra_tensors = {}) {
    std::vector<std::pair<std::string, Tensor<float>>> tensors;
    const auto& ps = model.params();
    for (std::size_t i = 0; i < ps.size(); ++i) tensors.emplace_back(ps.name(i), ps.tensor(i));
    for (const auto& t : extra_tensors) tensors.push_back(t);
    nlohmann::json blob;
    blob["model"] = model.config();
    blob["vocab"] = model.vocab().tokens;
    blob["extra"] = extra;
    write_checkpoint_tensors(path, tensors, blob);
}

inline CheckpointData read_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("checkpoint: cannot open " + path.string());
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "UPRC", 4) != 0) throw FormatError("checkpoint: bad magic");
    const std::uint32_t version = detail::read_u32(f);
    if (version != 1) throw FormatError("checkpoint: unsupported version " + std::to_string(version));
    const std::uint32_t count = detail::read_u32(f);

    CheckpointData data;
    for (std::uint32_t idx = 0; idx < count; ++idx) {
        const std::uint16_t nlen = detail::read_u16(f);
        std::string name(nlen, '\0');
        f.read(name.data(), nlen);
        const int ndim = f.get();
        if (!f || ndim != 4) throw FormatError("checkpoint: bad tensor rank");
        Shape4 s;
        s.n = static_cast<int>(detail::read_u32(f));
        s.c = static_cast<int>(detail::read_u32(f));
        s.h = static_cast<int>(detail::read_u32(f));
        s.w = static_cast<int>(detail::read_u32(f));
        if (s.count() == 0 || s.count() > (1u << 30)) throw FormatError("checkpoint: corrupted length field");
        std::vector<float> payload(s.count());
        f.read(reinterpret_cast<char*>(payload.data()),
               static_cast<std::streamsize>(payload.size() * sizeof(float)));
        if (!f) throw FormatError("checkpoint: truncated tensor payload");
        data.tensors.emplace_back(std::move(name), Tensor<float>(s, std::move(payload)));
    }
    const std::uint32_t jlen = detail::read_u32(f);
    std::string js(jlen, '\0');
    f.read(js.data(), jlen);
    if (!f) throw FormatError("checkpoint: truncated JSON blob");
    nlohmann::json blob;
    try {
        blob = nlohmann::json::parse(js);
    } catch (const nlohmann::json::parse_error&) {
        throw FormatError("checkpoint: malformed JSON blob");
    }
    data.config = blob.at("model").get<ModelConfig>();
    data.vocab = PromptVocabulary::from_tokens(blob.at("vocab").get<std::vector<std::string>>());
    data.extra = blob.value("extra", nlohmann::json::object());
    return data;
}

// Rebuild a model from a checkpoint; every parameter must be present with
// its exact shape (extra `opt.*` tensors are ignored here).
inline Model<float> load_checkpoint(const std::filesystem::path& path, CheckpointData* raw = nullptr) {
    CheckpointData data = read_checkpoint(path);
    Model<float> model = Model<float>::init(data.config, 0, data.vocab);
    std::map<std::string, const Tensor<float>*> by_name;
    for (const auto& [name, t] : data.tensors) by_name[name] = &t;
    auto& ps = model.params();
    for (std::size_t i = 0; i < ps.size(); ++i) {
        auto it = by_name.find(ps.name(i));
        if (it == by_name.end()) throw FormatError("checkpoint: missing parameter " + ps.name(i));
        if (it->second->shape != ps.tensor(i).shape)
            throw FormatError("checkpoint: shape mismatch for " + ps.name(i));
        ps.tensor(i).data() = it->second->data();
    }
    if (raw) *raw = std::move(data);
    return model;
}

} // namespace restora

#endif // RESTORA_MODEL_HPP_
