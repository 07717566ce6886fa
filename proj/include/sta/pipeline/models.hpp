#pragma once

#include "sta/denoiser/denoiser.hpp"
#include "sta/encoder/speech_encoder.hpp"
#include "sta/metrics/classifier.hpp"
#include "sta/pipeline/checkpoint.hpp"
#include "sta/pipeline/commands.hpp"
#include "sta/vq/codec.hpp"

namespace sta::pipeline {

/// Loads the best checkpoint of `stage`. A missing file is reported as a
/// missing stage; a digest mismatch is an error unless `allow_mismatch`.
Checkpoint require_checkpoint(const Workspace& ws, Stage stage, bool allow_mismatch);

vq::VqCodec load_vq(const Workspace& ws, bool allow_mismatch);
encoder::SpeechEncoder load_encoder(const Workspace& ws, bool allow_mismatch);
denoiser::Denoiser load_denoiser(const Workspace& ws, bool allow_mismatch);
metrics::EvalClassifier load_classifier(const Workspace& ws, bool allow_mismatch);

encoder::TeacherEmbedder make_teacher(const PipelineConfig& config);

/// Per-stage base seed derived from the run seed.
std::uint64_t stage_seed(const PipelineConfig& config, Stage stage);

}  // namespace sta::pipeline
