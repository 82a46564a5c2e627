// Copyright 2026 The restora Authors
// SPDX-License-Identifier: Apache-2.0
//
// Text conditioning: a small fixed vocabulary over degradation names and
// manipulation verbs, a prompt template, and a trainable embedding encoder
// that emits the context matrix consumed by the cross-attention modules.

#ifndef RESTORA_CONDITIONING_HPP_
#define RESTORA_CONDITIONING_HPP_

#include <cctype>
#include <string>
#include <unordered_map>
#include <vector>

#include "restora/degrade.hpp"
#include "restora/ops.hpp"
#include "restora/tensor.hpp"

namespace restora {

inline constexpr int kMaxPromptTokens = 16;

struct PromptVocabulary {
    std::vector<std::string> tokens; // index order; serialized with checkpoints
    std::unordered_map<std::string, int> index;
    int oov = 0;

    int lookup(const std::string& t) const {
        auto it = index.find(t);
        return it == index.end() ? oov : it->second;
    }

    int size() const { return static_cast<int>(tokens.size()); }

    static PromptVocabulary standard() {
        PromptVocabulary v;
        auto push = [&](const std::string& t) {
            if (v.index.count(t)) return;
            v.index[t] = static_cast<int>(v.tokens.size());
            v.tokens.push_back(t);
        };
        push("<oov>");
        for (const char* name : degradation_names()) push(name);
        for (const char* verb : {"remove", "process", "enhance", "keep"}) push(verb);
        for (const char* glue : {"the", "is", "a", "an", "degradation", "image", "of", "in", "from"}) push(glue);
        v.oov = 0;
        return v;
    }

    static PromptVocabulary from_tokens(std::vector<std::string> toks) {
        PromptVocabulary v;
        v.tokens = std::move(toks);
        for (int i = 0; i < v.size(); ++i) v.index[v.tokens[static_cast<std::size_t>(i)]] = i;
        v.oov = v.index.count("<oov>") ? v.index.at("<oov>") : 0;
        return v;
    }
};

// Lowercase, split on anything outside [a-z0-9_]; unknown words map to OOV.
inline std::vector<int> tokenize(const PromptVocabulary& vocab, const std::string& text) {
    std::vector<int> out;
    std::string cur;
    auto flush = [&] {
        if (!cur.empty()) {
            out.push_back(vocab.lookup(cur));
            cur.clear();
        }
    };
    for (char ch : text) {
        const char lc = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
        if ((lc >= 'a' && lc <= 'z') || (lc >= '0' && lc <= '9') || lc == '_')
            cur.push_back(lc);
        else
            flush();
    }
    flush();
    return out;
}

// "<manipulation>, the <subject> is <subject>"; with an empty manipulation
// only the subject clause remains. The duplicated subject fills the slot a
// richer multimodal encoder would occupy.
inline std::string build_prompt(const std::string& manipulation, const std::string& subject) {
    std::string clause = "the " + subject + " is " + subject;
    if (manipulation.empty()) return clause;
    return manipulation + ", " + clause;
}

// Context control embedding: E[i] = emb[token_i] + pos[i] for i < len,
// exact zero rows beyond. `lengths` feeds the cross-attention key mask.
template <typename T>
struct ContextBatch {
    Tensor<T> e;              // (batch, kMaxPromptTokens, dim, 1)
    std::vector<int> lengths; // valid rows per item
};

template <typename T>
ContextBatch<T> encode_prompts(const PromptVocabulary& vocab, const Tensor<T>& emb,
                               const Tensor<T>& pos, const std::vector<std::string>& prompts) {
    std::vector<std::vector<int>> indices;
    std::vector<int> lengths;
    indices.reserve(prompts.size());
    for (const auto& p : prompts) {
        auto toks = tokenize(vocab, p);
        if (static_cast<int>(toks.size()) > kMaxPromptTokens) toks.resize(kMaxPromptTokens);
        lengths.push_back(static_cast<int>(toks.size()));
        indices.push_back(std::move(toks));
    }
    ContextBatch<T> ctx;
    ctx.e = ops::prompt_embed(emb, pos, indices);
    ctx.lengths = std::move(lengths);
    return ctx;
}

template <typename T>
ContextBatch<T> encode_prompt(const PromptVocabulary& vocab, const Tensor<T>& emb, const Tensor<T>& pos,
                              const std::string& prompt) {
    return encode_prompts(vocab, emb, pos, {prompt});
}

// Training-time prompt generated from a sampled degradation.
inline std::string auto_prompt(DegradationKind kind) {
    return build_prompt("remove the degradation", kind_name(kind));
}

} // namespace restora

#endif // RESTORA_CONDITIONING_HPP_
