// Copyright 2026 The restora Authors
// SPDX-License-Identifier: Apache-2.0
//
// Named double-precision gradient checks for every differentiable op and
// for a tiny end-to-end model. Backed by gradcheck.hpp; the CLI `gradcheck`
// command and the acceptance suite both run this registry.

#ifndef RESTORA_GRADSUITE_HPP_
#define RESTORA_GRADSUITE_HPP_

#include <functional>
#include <string>
#include <vector>

#include "restora/gradcheck.hpp"
#include "restora/model.hpp"

namespace restora {

struct GradSuiteEntry {
    std::string name;
    double tol_p95;
    double tol_max;
    std::function<GradCheckReport()> run;
};

namespace gradsuite_detail {

inline std::vector<double> loss_weights(std::size_t n, std::uint64_t seed) {
    Prng rng(seed);
    std::vector<double> w(n);
    for (auto& v : w) v = rng.normal();
    return w;
}

inline Tensor<double> rand_t(Shape4 s, std::uint64_t seed, double scl = 1.0) {
    Prng rng(seed);
    return Tensor<double>::randn(s, rng, scl);
}

// Check d(weighted_sum(f(...)))/d(inputs) for a tensor-valued f.
template <typename F>
GradCheckReport check_op(F&& f, std::vector<Tensor<double>> inputs, std::uint64_t wseed,
                         int coords_per_tensor = 0) {
    // evaluate once to size the loss weights
    const std::size_t out_n = f(inputs).numel();
    const auto wts = loss_weights(out_n, wseed);
    GradCheckOptions opt;
    opt.coords_per_tensor = coords_per_tensor;
    return grad_check([&] { return ops::weighted_sum(f(inputs), wts); }, inputs, opt);
}

} // namespace gradsuite_detail

inline std::vector<GradSuiteEntry> gradient_suite() {
    using namespace gradsuite_detail;
    std::vector<GradSuiteEntry> suite;
    const double kOpP95 = 1e-6, kOpMax = 1e-6;
    const double kBlockP95 = 1e-5, kBlockMax = 1e-3;

    suite.push_back({"gelu", kOpP95, kOpMax, [] {
                         auto x = rand_t({1, 3, 4, 4}, 11);
                         return check_op([](const auto& in) { return ops::gelu(in[0]); }, {x}, 101);
                     }});
    suite.push_back({"conv2d", kOpP95, kOpMax, [] {
                         auto x = rand_t({1, 2, 5, 5}, 12);
                         auto w = rand_t({3, 2, 3, 3}, 13, 0.5);
                         auto b = rand_t({1, 3, 1, 1}, 14, 0.5);
                         return check_op([](const auto& in) { return ops::conv2d(in[0], in[1], in[2], 1, 1); },
                                         {x, w, b}, 102);
                     }});
    suite.push_back({"conv2d_grouped", kOpP95, kOpMax, [] {
                         auto x = rand_t({2, 4, 4, 4}, 15);
                         auto w = rand_t({4, 1, 3, 3}, 16, 0.5);
                         auto b = rand_t({1, 4, 1, 1}, 17, 0.5);
                         return check_op(
                             [](const auto& in) { return ops::conv2d(in[0], in[1], in[2], 1, 1, 4); },
                             {x, w, b}, 103);
                     }});
    suite.push_back({"conv2d_strided", kOpP95, kOpMax, [] {
                         auto x = rand_t({1, 2, 5, 5}, 18);
                         auto w = rand_t({2, 2, 3, 3}, 19, 0.5);
                         auto b = rand_t({1, 2, 1, 1}, 20, 0.5);
                         return check_op(
                             [](const auto& in) { return ops::conv2d(in[0], in[1], in[2], 2, 1); },
                             {x, w, b}, 104);
                     }});
    suite.push_back({"linear", kOpP95, kOpMax, [] {
                         auto x = rand_t({2, 3, 4, 1}, 21);
                         auto w = rand_t({5, 4, 1, 1}, 22, 0.5);
                         auto b = rand_t({1, 1, 5, 1}, 23, 0.5);
                         return check_op([](const auto& in) { return ops::linear(in[0], in[1], in[2]); },
                                         {x, w, b}, 105);
                     }});
    suite.push_back({"layer_norm", kOpP95, kOpMax, [] {
                         auto x = rand_t({1, 4, 2, 2}, 24);
                         auto g = rand_t({1, 4, 1, 1}, 25, 0.5);
                         auto b = rand_t({1, 4, 1, 1}, 26, 0.5);
                         return check_op([](const auto& in) { return ops::layer_norm(in[0], in[1], in[2]); },
                                         {x, g, b}, 106);
                     }});
    suite.push_back({"softmax", kOpP95, kOpMax, [] {
                         auto x = rand_t({2, 5, 2, 1}, 27);
                         return check_op([](const auto& in) { return ops::softmax(in[0], 1); }, {x}, 107);
                     }});
    suite.push_back({"global_avg_pool", kOpP95, kOpMax, [] {
                         auto x = rand_t({1, 3, 4, 4}, 28);
                         return check_op([](const auto& in) { return ops::global_avg_pool(in[0]); }, {x}, 108);
                     }});
    suite.push_back({"pixel_shuffle", kOpP95, kOpMax, [] {
                         auto x = rand_t({1, 8, 2, 3}, 29);
                         return check_op([](const auto& in) { return ops::pixel_shuffle(in[0], 2); }, {x}, 109);
                     }});
    suite.push_back({"pixel_unshuffle", kOpP95, kOpMax, [] {
                         auto x = rand_t({1, 2, 4, 6}, 30);
                         return check_op([](const auto& in) { return ops::pixel_unshuffle(in[0], 2); }, {x},
                                         110);
                     }});
    suite.push_back({"grn", kOpP95, kOpMax, [] {
                         auto x = rand_t({1, 3, 2, 2}, 31);
                         auto g = rand_t({1, 3, 1, 1}, 32, 0.5);
                         auto b = rand_t({1, 3, 1, 1}, 33, 0.5);
                         return check_op([](const auto& in) { return ops::grn(in[0], in[1], in[2]); },
                                         {x, g, b}, 111);
                     }});
    suite.push_back({"attention", kOpP95, kOpMax, [] {
                         auto q = rand_t({1, 3, 4, 1}, 34);
                         auto k = rand_t({1, 3, 4, 1}, 35);
                         auto v = rand_t({1, 3, 4, 1}, 36);
                         return check_op([](const auto& in) { return ops::attention(in[0], in[1], in[2], 2); },
                                         {q, k, v}, 112);
                     }});
    suite.push_back({"attention_masked", kOpP95, kOpMax, [] {
                         auto q = rand_t({2, 3, 4, 1}, 37);
                         auto k = rand_t({2, 5, 4, 1}, 38);
                         auto v = rand_t({2, 5, 4, 1}, 39);
                         const std::vector<int> lens{3, 5};
                         return check_op(
                             [lens](const auto& in) { return ops::attention(in[0], in[1], in[2], 2, lens); },
                             {q, k, v}, 113);
                     }});
    suite.push_back({"channel_scale", kOpP95, kOpMax, [] {
                         auto x = rand_t({2, 3, 3, 3}, 40);
                         auto s = rand_t({2, 3, 1, 1}, 41);
                         return check_op([](const auto& in) { return ops::channel_scale(in[0], in[1]); },
                                         {x, s}, 114);
                     }});
    suite.push_back({"l1_loss", kOpP95, kOpMax, [] {
                         auto a = rand_t({1, 3, 4, 4}, 42);
                         auto b = rand_t({1, 3, 4, 4}, 43);
                         GradCheckOptions opt;
                         return grad_check([&] { return ops::l1_loss(a, b); }, {a, b}, opt);
                     }});
    suite.push_back({"encode_prompt", kOpP95, kOpMax, [] {
                         const auto vocab = PromptVocabulary::standard();
                         auto emb = rand_t({1, vocab.size(), 8, 1}, 44, 0.5);
                         auto pos = rand_t({1, kMaxPromptTokens, 8, 1}, 45, 0.5);
                         const std::string prompt = auto_prompt(DegradationKind::gaussian_noise);
                         const auto wts = loss_weights(static_cast<std::size_t>(kMaxPromptTokens) * 8, 200);
                         GradCheckOptions opt;
                         opt.coords_per_tensor = 64;
                         return grad_check(
                             [&] {
                                 auto ctx = encode_prompt(vocab, emb, pos, prompt);
                                 return ops::weighted_sum(ctx.e, wts);
                             },
                             {emb, pos}, opt);
                     }});

    // composite blocks run against a tiny model's parameter store
    auto block_entry = [&suite](const std::string& name, double p95, double mx,
                                std::function<GradCheckReport()> fn) {
        suite.push_back({name, p95, mx, std::move(fn)});
    };

    block_entry("channel_attention", kBlockP95, kBlockMax, [] {
        auto m = Model<double>::init(ModelConfig::tiny(), 77);
        auto x = rand_t({1, 8, 3, 3}, 46);
        std::vector<Tensor<double>> wrt{x, m.params().at("enc1.b0.ca.w1.weight"),
                                        m.params().at("enc1.b0.ca.w2.weight"),
                                        m.params().at("enc1.b0.ca.w1.bias")};
        const auto wts = loss_weights(x.numel(), 201);
        return grad_check(
            [&] { return ops::weighted_sum(blocks::channel_attention(x, m.params(), "enc1.b0.ca."), wts); },
            wrt, {});
    });
    block_entry("gcffn", kBlockP95, kBlockMax, [] {
        auto m = Model<double>::init(ModelConfig::tiny(), 78);
        auto x = rand_t({1, 8, 4, 4}, 47);
        std::vector<Tensor<double>> wrt{x, m.params().at("enc1.b0.ffn.wp1.weight"),
                                        m.params().at("enc1.b0.ffn.wd1.weight"),
                                        m.params().at("enc1.b0.ffn.wp3.weight")};
        const auto wts = loss_weights(x.numel(), 202);
        return grad_check(
            [&] { return ops::weighted_sum(blocks::gcffn(x, m.params(), "enc1.b0.ffn."), wts); }, wrt, {});
    });
    block_entry("conv_block", kBlockP95, kBlockMax, [] {
        auto m = Model<double>::init(ModelConfig::tiny(), 79);
        auto x = rand_t({1, 8, 4, 4}, 48);
        std::vector<Tensor<double>> wrt{x, m.params().at("enc1.b0.cb.dw.weight"),
                                        m.params().at("enc1.b0.cb.pw1.weight"),
                                        m.params().at("enc1.b0.cb.grn.gamma"),
                                        m.params().at("enc1.b0.cb.pw2.weight")};
        const auto wts = loss_weights(x.numel(), 203);
        return grad_check(
            [&] { return ops::weighted_sum(blocks::conv_block(x, m.params(), "enc1.b0.cb."), wts); }, wrt,
            {});
    });
    block_entry("convformer_block", kBlockP95, kBlockMax, [] {
        auto m = Model<double>::init(ModelConfig::tiny(), 80);
        auto x = rand_t({1, 8, 4, 4}, 49);
        std::vector<Tensor<double>> wrt{x, m.params().at("enc1.b0.norm1.gamma"),
                                        m.params().at("enc1.b0.cb.dw.weight"),
                                        m.params().at("enc1.b0.ffn.wp3.weight")};
        const auto wts = loss_weights(x.numel(), 204);
        return grad_check(
            [&] {
                return ops::weighted_sum(
                    blocks::former_block(x, m.params(), "enc1.b0.", BlockKind::conv_former, 1), wts);
            },
            wrt, {});
    });
    block_entry("transformer_block", kBlockP95, kBlockMax, [] {
        auto m = Model<double>::init(ModelConfig::tiny(), 81);
        auto x = rand_t({1, 64, 2, 2}, 50, 0.5);
        std::vector<Tensor<double>> wrt{x, m.params().at("enc4.b0.attn.wq.weight"),
                                        m.params().at("enc4.b0.attn.wo.weight"),
                                        m.params().at("enc4.b0.ffn.wp3.weight")};
        const auto wts = loss_weights(x.numel(), 205);
        GradCheckOptions opt;
        opt.coords_per_tensor = 40;
        return grad_check(
            [&] {
                return ops::weighted_sum(
                    blocks::former_block(x, m.params(), "enc4.b0.", BlockKind::trans_former, 8), wts);
            },
            wrt, opt);
    });
    block_entry("cim", kBlockP95, kBlockMax, [] {
        auto m = Model<double>::init(ModelConfig::tiny(), 82);
        auto f = rand_t({1, 128, 2, 2}, 51, 0.5);
        ContextBatch<double> ctx;
        ctx.e = rand_t({1, kMaxPromptTokens, 32, 1}, 52, 0.5);
        // zero the padding rows, as the encoder would
        for (int i = 7; i < kMaxPromptTokens; ++i)
            for (int d = 0; d < 32; ++d) ctx.e.at(0, i, d, 0) = 0.0;
        ctx.lengths = {7};
        std::vector<Tensor<double>> wrt{f, ctx.e, m.params().at("bott.cim0.self.wo.weight"),
                                        m.params().at("bott.cim0.cross.wk.weight"),
                                        m.params().at("bott.cim0.cross.wo.weight")};
        const auto wts = loss_weights(f.numel(), 206);
        GradCheckOptions opt;
        opt.coords_per_tensor = 40;
        return grad_check(
            [&] { return ops::weighted_sum(blocks::cim(f, ctx, m.params(), "bott.cim0.", 8), wts); }, wrt,
            opt);
    });
    block_entry("full_model", kBlockP95, kBlockMax, [] {
        auto m = Model<double>::init(ModelConfig::tiny(), 83);
        // randomize the tail: at the zero-tail identity init every gradient
        // upstream of it is legitimately zero, which would make this check
        // vacuous
        {
            Prng trng(404);
            for (auto& v : m.params().at("tail.weight").data()) v = 0.02 * trng.normal();
            for (auto& v : m.params().at("tail.bias").data()) v = 0.02 * trng.normal();
        }
        Prng rng(999);
        Tensor<double> img = Tensor<double>::zeros({1, 3, 16, 16});
        for (auto& v : img.data()) v = 0.15 + 0.7 * rng.uniform();
        const std::string prompt = auto_prompt(DegradationKind::gaussian_noise);
        std::vector<Tensor<double>> wrt;
        for (std::size_t i = 0; i < m.params().size(); ++i) wrt.push_back(m.params().tensor(i));
        const auto wts = loss_weights(img.numel(), 207);
        GradCheckOptions opt;
        opt.coords_per_tensor = 4;
        return grad_check(
            [&] {
                auto ctx = m.encode_prompts({prompt});
                return ops::weighted_sum(m.forward(img, ctx), wts);
            },
            wrt, opt);
    });

    return suite;
}

} // namespace restora

#endif // RESTORA_GRADSUITE_HPP_
