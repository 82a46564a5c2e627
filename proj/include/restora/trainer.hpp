// Copyright 2026 The restora Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dataset preparation and the training loop: overlapping patch extraction
// with JSONL manifests, on-the-fly degradation sampling with per-item
// seeds, L1 optimization with AdamW and cosine annealing. Deterministic
// end to end: the same config yields byte-identical logs and checkpoints.

#ifndef RESTORA_TRAINER_HPP_
#define RESTORA_TRAINER_HPP_

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "restora/degrade.hpp"
#include "restora/image.hpp"
#include "restora/model.hpp"

namespace restora {

// ---------------------------------------------------------------------------
// patch manifests

struct PatchEntry {
    std::string patch;  // written patch file
    std::string source; // originating image
    int x = 0, y = 0, size = 0;
};

struct PatchManifest {
    std::vector<PatchEntry> entries;
};

inline std::string manifest_to_jsonl(const PatchManifest& m) {
    std::string out;
    for (const auto& e : m.entries) {
        nlohmann::json j{{"patch", e.patch}, {"source", e.source}, {"x", e.x}, {"y", e.y}, {"size", e.size}};
        out += j.dump();
        out += "\n";
    }
    return out;
}

inline PatchManifest manifest_from_jsonl(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw FormatError("manifest: cannot open " + path.string());
    PatchManifest m;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded()) throw FormatError("manifest: malformed JSON line");
        PatchEntry e;
        e.patch = j.at("patch").get<std::string>();
        e.source = j.at("source").get<std::string>();
        e.x = j.at("x").get<int>();
        e.y = j.at("y").get<int>();
        e.size = j.at("size").get<int>();
        m.entries.push_back(std::move(e));
    }
    return m;
}

// Grid positions 0, stride, 2*stride, ... with a final position clamped to
// (dim - size) when the regular grid stops short of the edge.
inline std::vector<int> grid_positions(int dim, int size, int stride) {
    std::vector<int> pos;
    for (int p = 0; p + size <= dim; p += stride) pos.push_back(p);
    if (pos.empty()) return pos;
    if (pos.back() + size < dim) pos.push_back(dim - size);
    return pos;
}

// Crop size x size patches on the stride grid from every readable PPM under
// src_dir, write them to out_dir, return the manifest. Undersized or
// unreadable images are skipped with a warning on stderr.
inline PatchManifest build_patches(const std::filesystem::path& src_dir,
                                   const std::filesystem::path& out_dir, int size = 512,
                                   int stride = 416) {
    if (size < 1 || stride < 1) throw ConfigError("build_patches: size and stride must be >= 1");
    std::vector<std::filesystem::path> files;
    for (const auto& ent : std::filesystem::directory_iterator(src_dir))
        if (ent.is_regular_file() && ent.path().extension() == ".ppm") files.push_back(ent.path());
    std::sort(files.begin(), files.end());

    std::filesystem::create_directories(out_dir);
    PatchManifest manifest;
    for (const auto& file : files) {
        ImageBuffer img;
        try {
            img = load_ppm(file);
        } catch (const FormatError& e) {
            std::cerr << "warning: skipping unreadable image " << file.string() << ": " << e.what() << "\n";
            continue;
        }
        if (img.height() < size || img.width() < size) {
            std::cerr << "warning: skipping undersized image " << file.string() << " ("
                      << img.width() << "x" << img.height() << " < " << size << ")\n";
            continue;
        }
        const auto ys = grid_positions(img.height(), size, stride);
        const auto xs = grid_positions(img.width(), size, stride);
        const std::string stem = file.stem().string();
        for (int y : ys)
            for (int x : xs) {
                PatchEntry e;
                e.source = file.string();
                e.x = x;
                e.y = y;
                e.size = size;
                e.patch = (out_dir / (stem + "_y" + std::to_string(y) + "_x" + std::to_string(x) + ".ppm"))
                              .string();
                save_ppm(crop(img, x, y, size, size), e.patch);
                manifest.entries.push_back(std::move(e));
            }
    }
    return manifest;
}

// ---------------------------------------------------------------------------
// train config

struct TrainConfig {
    int patch_size = 224;
    int batch_size = 36;
    int epochs = 150;
    double lr_max = 2e-4;
    double lr_min = 1e-6;
    double weight_decay = 1e-4;
    std::uint64_t seed = 0;
    std::vector<DegradationKind> kinds = all_degrading_kinds();
    float severity_lo = 0.25f;
    float severity_hi = 1.0f;
    int max_steps = 0;        // 0 = run all epochs
    int checkpoint_every = 0; // epochs between periodic checkpoints, 0 = off
    ModelConfig model;

    void validate() const {
        if (patch_size < 16 || patch_size % 16 != 0)
            throw ConfigError("TrainConfig.patch_size: must be a positive multiple of 16");
        if (batch_size < 1) throw ConfigError("TrainConfig.batch_size: must be >= 1");
        if (epochs < 1) throw ConfigError("TrainConfig.epochs: must be >= 1");
        if (!(lr_min < lr_max)) throw ConfigError("TrainConfig.lr_min: must be < lr_max");
        if (kinds.empty()) throw ConfigError("TrainConfig.kinds: must be non-empty");
        if (!(severity_lo > 0.f && severity_lo <= severity_hi && severity_hi <= 1.f))
            throw ConfigError("TrainConfig.severity_range: need 0 < lo <= hi <= 1");
        model.validate();
    }

    // Desk-scale profile: tiny model over 64x64 patches.
    static TrainConfig toy() {
        TrainConfig c;
        c.patch_size = 64;
        c.batch_size = 8;
        c.epochs = 250;
        c.lr_max = 1e-3;
        c.model = ModelConfig::tiny();
        c.kinds = {DegradationKind::gaussian_noise};
        c.severity_lo = c.severity_hi = 0.5f; // sigma 25/255
        return c;
    }

    // Full-scale recipe; not a verification target on desk hardware.
    static TrainConfig paper() {
        TrainConfig c;
        c.patch_size = 224;
        c.batch_size = 36;
        c.epochs = 150;
        c.lr_max = 2e-4;
        c.lr_min = 1e-6;
        c.model = ModelConfig{};
        return c;
    }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
    std::vector<std::string> kind_names;
    for (auto k : c.kinds) kind_names.push_back(kind_name(k));
    j = nlohmann::json{{"patch_size", c.patch_size},
                       {"batch_size", c.batch_size},
                       {"epochs", c.epochs},
                       {"lr_max", c.lr_max},
                       {"lr_min", c.lr_min},
                       {"weight_decay", c.weight_decay},
                       {"seed", c.seed},
                       {"kinds", kind_names},
                       {"severity_range", {c.severity_lo, c.severity_hi}},
                       {"max_steps", c.max_steps},
                       {"checkpoint_every", c.checkpoint_every},
                       {"model", c.model}};
}

// Parses with explicit field paths in error messages. A "profile" key
// ("toy" or "paper") selects a base config; explicit keys override it.
inline TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    if (j.contains("profile")) {
        const std::string p = j.at("profile").get<std::string>();
        if (p == "toy")
            c = TrainConfig::toy();
        else if (p == "paper")
            c = TrainConfig::paper();
        else
            throw ConfigError("config field 'profile': unknown profile '" + p + "'");
    }
    auto get_field = [&](const char* key, auto& out) {
        if (!j.contains(key)) return;
        try {
            out = j.at(key).get<std::decay_t<decltype(out)>>();
        } catch (const nlohmann::json::exception&) {
            throw ConfigError(std::string("config field '") + key + "': wrong type");
        }
    };
    get_field("patch_size", c.patch_size);
    get_field("batch_size", c.batch_size);
    get_field("epochs", c.epochs);
    get_field("lr_max", c.lr_max);
    get_field("lr_min", c.lr_min);
    get_field("weight_decay", c.weight_decay);
    get_field("seed", c.seed);
    get_field("max_steps", c.max_steps);
    get_field("checkpoint_every", c.checkpoint_every);
    if (j.contains("kinds")) {
        c.kinds.clear();
        for (const auto& name : j.at("kinds")) {
            DegradationKind k;
            if (!parse_kind(name.get<std::string>(), k))
                throw ConfigError("config field 'kinds': unknown kind '" + name.get<std::string>() + "'");
            c.kinds.push_back(k);
        }
    }
    if (j.contains("severity_range")) {
        const auto& r = j.at("severity_range");
        if (!r.is_array() || r.size() != 2) throw ConfigError("config field 'severity_range': expected [lo, hi]");
        c.severity_lo = r[0].get<float>();
        c.severity_hi = r[1].get<float>();
    }
    if (j.contains("model")) {
        try {
            c.model = j.at("model").get<ModelConfig>();
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("config field 'model': ") + e.what());
        }
    }
    return c;
}

// ---------------------------------------------------------------------------
// batches

struct Batch {
    Tensor<float> degraded; // (B, 3, p, p)
    Tensor<float> clean;
    std::vector<std::string> prompts;
};

// Cache of decoded patches, keyed by path.
class PatchCache {
public:
    const ImageBuffer& get(const std::string& path) {
        auto it = cache_.find(path);
        if (it != cache_.end()) return it->second;
        return cache_.emplace(path, load_ppm(path)).first->second;
    }

private:
    std::map<std::string, ImageBuffer> cache_;
};

// One training batch. Item i of step s in epoch e draws everything from the
// stream hash64(cfg.seed, e, s*batch+i): patch choice, crop offsets,
// flips/rotation, the degradation spec and thus the prompt.
inline Batch sample_batch(const PatchManifest& manifest, PatchCache& cache, const TrainConfig& cfg,
                          int epoch, int step_in_epoch) {
    if (manifest.entries.empty()) throw ContractError("sample_batch: empty manifest");
    const int B = cfg.batch_size, P = cfg.patch_size;
    Batch batch;
    batch.degraded = Tensor<float>::zeros(Shape4{B, 3, P, P});
    batch.clean = Tensor<float>::zeros(Shape4{B, 3, P, P});
    for (int i = 0; i < B; ++i) {
        const std::uint64_t item_index =
            static_cast<std::uint64_t>(step_in_epoch) * static_cast<std::uint64_t>(B) +
            static_cast<std::uint64_t>(i);
        Prng rng(hash64(cfg.seed, static_cast<std::uint64_t>(epoch), item_index));
        const auto& entry =
            manifest.entries[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(manifest.entries.size()) - 1))];
        const ImageBuffer& src = cache.get(entry.patch);
        if (src.height() < P || src.width() < P)
            throw ContractError("sample_batch: patch smaller than cfg.patch_size");
        const int x0 = rng.uniform_int(0, src.width() - P);
        const int y0 = rng.uniform_int(0, src.height() - P);
        ImageBuffer clean = crop(src, x0, y0, P, P);
        if (rng.bernoulli(0.5)) clean = flip_h(clean);
        if (rng.bernoulli(0.5)) clean = flip_v(clean);
        clean = rot90(clean, rng.uniform_int(0, 3));

        DegradationSpec spec = sample_spec(rng, cfg.kinds, cfg.severity_lo, cfg.severity_hi);
        const ImageBuffer degraded = apply(clean, spec);
        batch.prompts.push_back(auto_prompt(spec.kind));
        for (int y = 0; y < P; ++y)
            for (int x = 0; x < P; ++x)
                for (int c = 0; c < 3; ++c) {
                    batch.clean.at(i, c, y, x) = clean.at(y, x, c);
                    batch.degraded.at(i, c, y, x) = degraded.at(y, x, c);
                }
    }
    return batch;
}

// ---------------------------------------------------------------------------
// optimizer and schedule

// eta = lr_min + (lr_max - lr_min) * (1 + cos(pi * step / total)) / 2,
// with the endpoints returned exactly.
inline double cosine_lr(long step, long total_steps, double lr_max, double lr_min) {
    if (step < 0 || step > total_steps) throw ContractError("cosine_lr: step outside [0, total]");
    if (step == 0) return lr_max;
    if (step == total_steps) return lr_min;
    const double t = static_cast<double>(step) / static_cast<double>(total_steps);
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(3.14159265358979323846 * t));
}

// Decoupled-decay Adam: bias-corrected moments drive the update, weight
// decay acts directly on the parameter.
template <typename T>
class AdamW {
public:
    explicit AdamW(const ParameterStore<T>& ps, T beta1 = T(0.9), T beta2 = T(0.999), T eps = T(1e-8))
        : beta1_(beta1), beta2_(beta2), eps_(eps) {
        m_.resize(ps.size());
        v_.resize(ps.size());
        for (std::size_t i = 0; i < ps.size(); ++i) {
            m_[i].assign(ps.tensor(i).numel(), T(0));
            v_[i].assign(ps.tensor(i).numel(), T(0));
        }
    }

    long step_count() const { return t_; }

    void step(ParameterStore<T>& ps, const Tape<T>& tape, T lr, T weight_decay) {
        ++t_;
        const T bc1 = T(1) - std::pow(beta1_, static_cast<T>(t_));
        const T bc2 = T(1) - std::pow(beta2_, static_cast<T>(t_));
        for (std::size_t pi = 0; pi < ps.size(); ++pi) {
            auto& p = ps.tensor(pi).data();
            const bool has = tape.has_grad(ps.tensor(pi));
            const Tensor<T> g = has ? tape.grad(ps.tensor(pi)) : Tensor<T>();
            auto& m = m_[pi];
            auto& v = v_[pi];
            for (std::size_t i = 0; i < p.size(); ++i) {
                const T gi = has ? g.data()[i] : T(0);
                m[i] = beta1_ * m[i] + (T(1) - beta1_) * gi;
                v[i] = beta2_ * v[i] + (T(1) - beta2_) * gi * gi;
                const T mhat = m[i] / bc1;
                const T vhat = v[i] / bc2;
                p[i] -= lr * (mhat / (std::sqrt(vhat) + eps_) + weight_decay * p[i]);
            }
        }
    }

    std::vector<std::pair<std::string, Tensor<float>>> state_tensors(const ParameterStore<T>& ps) const {
        std::vector<std::pair<std::string, Tensor<float>>> out;
        for (std::size_t i = 0; i < ps.size(); ++i) {
            out.emplace_back("opt.m." + ps.name(i), Tensor<T>(ps.tensor(i).shape, m_[i]).template cast<float>());
            out.emplace_back("opt.v." + ps.name(i), Tensor<T>(ps.tensor(i).shape, v_[i]).template cast<float>());
        }
        return out;
    }

private:
    T beta1_, beta2_, eps_;
    long t_ = 0;
    std::vector<std::vector<T>> m_, v_;
};

// ---------------------------------------------------------------------------
// training loop

struct LossRow {
    long step = 0;
    double lr = 0.0;
    double loss = 0.0;
};

struct TrainResult {
    std::vector<LossRow> log;
    long steps_run = 0;
};

inline std::string loss_log_to_csv(const std::vector<LossRow>& log) {
    std::string out = "step,lr,loss\n";
    char buf[96];
    for (const auto& r : log) {
        std::snprintf(buf, sizeof(buf), "%ld,%.9g,%.9g\n", r.step, r.lr, r.loss);
        out += buf;
    }
    return out;
}

// Runs the full recipe and writes the final checkpoint. Aborts with a
// diagnostic on non-finite loss. Single-threaded accumulation order keeps
// reruns byte-identical.
inline TrainResult train(Model<float>& model, const PatchManifest& manifest, const TrainConfig& cfg,
                         const std::filesystem::path& ckpt_out,
                         std::ostream* progress = nullptr) {
    cfg.validate();
    if (manifest.entries.empty()) throw ContractError("train: empty manifest");

    PatchCache cache;
    AdamW<float> opt(model.params());
    const long steps_per_epoch =
        std::max<long>(1, static_cast<long>(manifest.entries.size()) / cfg.batch_size);
    long total = static_cast<long>(cfg.epochs) * steps_per_epoch;
    if (cfg.max_steps > 0) total = std::min<long>(total, cfg.max_steps);

    TrainResult result;
    long step = 0;
    for (int epoch = 0; epoch < cfg.epochs && step < total; ++epoch) {
        for (long s = 0; s < steps_per_epoch && step < total; ++s, ++step) {
            Batch batch = sample_batch(manifest, cache, cfg, epoch, static_cast<int>(s));
            const double lr = cosine_lr(step, total, cfg.lr_max, cfg.lr_min);

            Tape<float> tape;
            model.params().watch_all(tape);
            ContextBatch<float> ctx = model.encode_prompts(batch.prompts);
            Tensor<float> out = model.forward(batch.degraded, ctx);
            Tensor<float> loss = ops::l1_loss(out, batch.clean);
            const double loss_v = static_cast<double>(loss.data()[0]);
            if (!std::isfinite(loss_v))
                throw std::runtime_error("train: non-finite loss at step " + std::to_string(step) +
                                         " (lr " + std::to_string(lr) + ", epoch " + std::to_string(epoch) +
                                         ", batch seed " + std::to_string(hash64(cfg.seed, static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(s))) + ")");
            tape.backward(loss);
            opt.step(model.params(), tape, static_cast<float>(lr), static_cast<float>(cfg.weight_decay));
            model.params().detach_all();

            result.log.push_back(LossRow{step, lr, loss_v});
            if (progress && (step % 25 == 0 || step + 1 == total))
                (*progress) << "step " << step << "/" << total << " lr " << lr << " loss " << loss_v << "\n";
        }
        if (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 && step < total) {
            const auto periodic = ckpt_out.parent_path() /
                                  (ckpt_out.stem().string() + "_epoch" + std::to_string(epoch + 1) +
                                   ckpt_out.extension().string());
            save_checkpoint(periodic, model);
        }
    }
    result.steps_run = step;
    save_checkpoint(ckpt_out, model, {{"trained_steps", step}});
    return result;
}

} // namespace restora

#endif // RESTORA_TRAINER_HPP_
