// Copyright 2026 The restora Authors
// SPDX-License-Identifier: Apache-2.0
//
// Batch CLI: degrade | dataset-build | train | eval | metrics | gradcheck.
// stdout carries machine-readable CSV only; diagnostics go to stderr.
// Exit codes: 0 success, 1 usage error, 2 runtime error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "restora/degrade.hpp"
#include "restora/evaluate.hpp"
#include "restora/gradsuite.hpp"
#include "restora/metrics.hpp"
#include "restora/trainer.hpp"

namespace {

int run_degrade(const std::string& in, const std::string& out, const std::string& kind_str,
                const std::string& severity_str, std::uint64_t seed) {
    restora::DegradationKind kind;
    if (!restora::parse_kind(kind_str, kind)) {
        std::cerr << "error: unknown kind '" << kind_str << "'. Valid kinds:\n";
        for (const char* n : restora::degradation_names()) std::cerr << "  " << n << "\n";
        return 1;
    }
    float severity;
    try {
        severity = restora::severity_preset(severity_str);
    } catch (const restora::ConfigError&) {
        try {
            severity = std::stof(severity_str);
        } catch (...) {
            std::cerr << "error: severity must be a float in (0,1] or slight|middle|heavy\n";
            return 1;
        }
    }
    if (!(severity > 0.f && severity <= 1.f)) {
        std::cerr << "error: severity must lie in (0,1]\n";
        return 1;
    }
    const restora::ImageBuffer img = restora::load_ppm(in);
    const restora::ImageBuffer degraded =
        restora::apply(img, restora::DegradationSpec{kind, severity, seed});
    restora::save_ppm(degraded, out);
    // metrics of the degraded image against its input
    const restora::ImageBuffer reloaded = restora::load_ppm(out);
    std::printf("%s,%s,%s\n", kind_str.c_str(), restora::format_metric(restora::psnr(reloaded, img)).c_str(),
                restora::format_metric(restora::ssim(reloaded, img)).c_str());
    return 0;
}

int run_dataset_build(const std::string& src, const std::string& out, int size, int stride) {
    const restora::PatchManifest manifest = restora::build_patches(src, out, size, stride);
    if (manifest.entries.empty()) {
        std::cerr << "error: no usable images in " << src << "\n";
        return 2;
    }
    const auto manifest_path = std::filesystem::path(out) / "manifest.jsonl";
    std::ofstream f(manifest_path);
    f << restora::manifest_to_jsonl(manifest);
    f.close();
    std::printf("patches,%zu\n", manifest.entries.size());
    std::cerr << "wrote " << manifest.entries.size() << " patches and " << manifest_path.string() << "\n";
    return 0;
}

int run_train(const std::string& config_path, const std::string& manifest_path, const std::string& out) {
    nlohmann::json j;
    {
        std::ifstream f(config_path);
        if (!f) {
            std::cerr << "error: cannot open config " << config_path << "\n";
            return 1;
        }
        j = nlohmann::json::parse(f, nullptr, false);
        if (j.is_discarded()) {
            std::cerr << "error: config is not valid JSON: " << config_path << "\n";
            return 1;
        }
    }
    restora::TrainConfig cfg;
    try {
        cfg = restora::train_config_from_json(j);
        cfg.validate();
    } catch (const restora::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    const restora::PatchManifest manifest = restora::manifest_from_jsonl(manifest_path);
    restora::Model<float> model = restora::Model<float>::init(cfg.model, cfg.seed);
    const restora::TrainResult result = restora::train(model, manifest, cfg, out, &std::cerr);
    const auto log_path = std::filesystem::path(out).replace_extension(".loss.csv");
    std::ofstream log(log_path, std::ios::binary);
    log << restora::loss_log_to_csv(result.log);
    log.close();
    std::printf("steps,%ld\n", result.steps_run);
    std::cerr << "checkpoint: " << out << "\nloss log: " << log_path.string() << "\n";
    return 0;
}

int run_eval(const std::string& ckpt, const std::string& testset_dir, const std::string& kinds_arg,
             const std::string& preset, const std::string& report_path, const std::string& subject) {
    if (!std::filesystem::exists(ckpt)) {
        std::cerr << "error: missing checkpoint " << ckpt << "\n";
        return 2;
    }
    const restora::Model<float> model = restora::load_checkpoint(ckpt);
    const restora::Testset testset = restora::load_testset(testset_dir);
    if (testset.images.empty()) {
        std::cerr << "error: no .ppm images in " << testset_dir << "\n";
        return 2;
    }
    std::vector<restora::DegradationKind> kinds;
    if (kinds_arg == "all") {
        for (int i = 0; i < restora::kDegradationCount; ++i)
            kinds.push_back(static_cast<restora::DegradationKind>(i));
    } else {
        std::string cur;
        std::istringstream ss(kinds_arg);
        while (std::getline(ss, cur, ',')) {
            restora::DegradationKind k;
            if (!restora::parse_kind(cur, k)) {
                std::cerr << "error: unknown kind '" << cur << "'\n";
                return 1;
            }
            kinds.push_back(k);
        }
        if (kinds.empty()) {
            std::cerr << "error: empty kind list\n";
            return 1;
        }
    }
    const restora::MetricReport report =
        restora::evaluate_table(model, testset, kinds, preset, subject);
    const std::string csv = restora::report_to_csv(report);
    std::ofstream f(report_path, std::ios::binary);
    f << csv;
    f.close();
    std::fputs(csv.c_str(), stdout);
    return 0;
}

int run_metrics(const std::string& a_path, const std::string& b_path) {
    const restora::ImageBuffer a = restora::load_ppm(a_path);
    const restora::ImageBuffer b = restora::load_ppm(b_path);
    std::printf("psnr_db,ssim\n%s,%s\n", restora::format_metric(restora::psnr(a, b)).c_str(),
                restora::format_metric(restora::ssim(a, b)).c_str());
    return 0;
}

int run_gradcheck(const std::string& op) {
    const auto suite = restora::gradient_suite();
    bool found = false, all_ok = true;
    std::printf("op,coords,p95_rel,max_rel,status\n");
    for (const auto& entry : suite) {
        if (op != "all" && op != entry.name) continue;
        found = true;
        const restora::GradCheckReport rep = entry.run();
        const bool ok = rep.within(entry.tol_p95, entry.tol_max);
        all_ok = all_ok && ok;
        std::printf("%s,%zu,%.3g,%.3g,%s\n", entry.name.c_str(), rep.coords, rep.p95_rel, rep.max_rel,
                    ok ? "pass" : "FAIL");
        if (!ok)
            std::cerr << "gradcheck failure: " << entry.name << " p95 " << rep.p95_rel << " max "
                      << rep.max_rel << " (tol " << entry.tol_p95 << "/" << entry.tol_max << ")\n";
    }
    if (!found) {
        std::cerr << "error: unknown op '" << op << "'\n";
        return 1;
    }
    return all_ok ? 0 : 2;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"restora: degradation bank, metrics and text-conditioned restoration"};
    app.require_subcommand(1);

    std::string in, out, kind, severity = "heavy";
    std::uint64_t seed = 0;
    auto* degrade = app.add_subcommand("degrade", "apply one degradation to an image");
    degrade->add_option("--in", in, "input PPM")->required();
    degrade->add_option("--out", out, "output PPM")->required();
    degrade->add_option("--kind", kind, "degradation kind")->required();
    degrade->add_option("--severity", severity, "float in (0,1] or slight|middle|heavy");
    degrade->add_option("--seed", seed, "64-bit seed");

    std::string src_dir, out_dir;
    int size = 512, stride = 416;
    auto* dataset = app.add_subcommand("dataset-build", "crop overlapping training patches");
    dataset->add_option("--src", src_dir, "source image directory")->required();
    dataset->add_option("--out", out_dir, "output patch directory")->required();
    dataset->add_option("--size", size, "patch size");
    dataset->add_option("--stride", stride, "grid stride");

    std::string config_path, manifest_path, ckpt_path;
    auto* train = app.add_subcommand("train", "train a model from a config and manifest");
    train->add_option("--config", config_path, "TrainConfig JSON")->required();
    train->add_option("--manifest", manifest_path, "patch manifest JSONL")->required();
    train->add_option("--out", ckpt_path, "output checkpoint path")->required();

    std::string testset_dir, kinds_arg = "all", preset = "heavy", report_path, subject;
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint over degraded test images");
    eval->add_option("--ckpt", ckpt_path, "checkpoint path")->required();
    eval->add_option("--testset", testset_dir, "directory of clean PPM images")->required();
    eval->add_option("--kinds", kinds_arg, "comma list of kinds, or 'all'");
    eval->add_option("--preset", preset, "slight|middle|heavy");
    eval->add_option("--report", report_path, "output CSV path")->required();
    eval->add_option("--prompt-subject", subject, "override the per-kind subject prompt");

    std::string path_a, path_b;
    auto* metrics = app.add_subcommand("metrics", "PSNR/SSIM between two images");
    metrics->add_option("--a", path_a, "first image")->required();
    metrics->add_option("--b", path_b, "second image")->required();

    std::string op = "all";
    auto* gradcheck = app.add_subcommand("gradcheck", "double-precision gradient verification");
    gradcheck->add_option("--op", op, "op name or 'all'");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (degrade->parsed()) return run_degrade(in, out, kind, severity, seed);
        if (dataset->parsed()) return run_dataset_build(src_dir, out_dir, size, stride);
        if (train->parsed()) return run_train(config_path, manifest_path, ckpt_path);
        if (eval->parsed()) return run_eval(ckpt_path, testset_dir, kinds_arg, preset, report_path, subject);
        if (metrics->parsed()) return run_metrics(path_a, path_b);
        if (gradcheck->parsed()) return run_gradcheck(op);
    } catch (const restora::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
