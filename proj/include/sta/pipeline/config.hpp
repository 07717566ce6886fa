#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "sta/data/corpus.hpp"
#include "sta/denoiser/denoiser.hpp"
#include "sta/diffusion/schedule.hpp"
#include "sta/encoder/speech_encoder.hpp"
#include "sta/metrics/classifier.hpp"
#include "sta/vq/codec.hpp"

namespace sta::pipeline {

struct StageTraining {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
    int batch = 16;
    int epochs = 10;
    int patience = 0;  // epochs without dev improvement before stopping; 0 disables

    nn::AdamWConfig adamw() const { return {lr, beta1, beta2, eps, weight_decay}; }
};

struct DiffusionSettings {
    int steps = 100;
    diffusion::ScheduleSpec schedule;
    double lambda = 0.001;
    std::uint64_t warmup = 200;
    double condition_noise = 0.08;
    bool freeze_condition = false;
    denoiser::Conditioning conditioning = denoiser::Conditioning::adaln;
    int width = 64;
    int heads = 4;
    int blocks = 4;
    int ff_hidden = 256;
};

struct EvalSettings {
    int k = 5;
    int is_splits = 10;
    int samples_per_caption = 1;
};

/// Everything a run depends on. Serialised as flat `section.key = value`
/// lines; the canonical text (every key, fixed order) defines the digest.
struct PipelineConfig {
    std::uint64_t seed = 1;
    std::string corpus_dir;  // empty: <out>/corpus

    CorpusConfig data;

    vq::VqConfig vq;
    StageTraining vq_train;
    double vq_jitter = 0.5;

    encoder::EncoderConfig encoder;
    StageTraining encoder_train;
    std::uint64_t teacher_seed = 77;

    DiffusionSettings diffusion;
    StageTraining diffusion_train;

    metrics::ClassifierConfig classifier;
    StageTraining classifier_train;
    double classifier_noise = 0.25;
    double classifier_jitter = 0.5;

    EvalSettings eval;

    PipelineConfig();

    /// Denoiser shape implied by the VQ and encoder settings.
    denoiser::DenoiserConfig denoiser_config() const;
    diffusion::Schedule schedule() const;

    void validate() const;
    std::string to_text() const;
    /// 16 hex digits, FNV-1a of to_text().
    std::string digest() const;
};

/// Applies `key = value` lines on top of the defaults. Blank lines and
/// `#` comments are ignored; unknown keys and malformed values are errors
/// that name the line.
PipelineConfig parse_config(std::string_view text, PipelineConfig base = {});
PipelineConfig load_config(const std::filesystem::path& path);
/// Sets one key, e.g. from a command-line override.
void set_config_value(PipelineConfig& config, std::string_view key, std::string_view value);
std::vector<std::string> config_keys();

/// Writes config.resolved into `dir`.
void archive_config(const PipelineConfig& config, const std::filesystem::path& dir);

std::string hex64(std::uint64_t v);
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 1469598103934665603ULL);

}  // namespace sta::pipeline
