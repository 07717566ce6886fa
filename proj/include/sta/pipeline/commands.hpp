#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sta/data/corpus.hpp"
#include "sta/pipeline/config.hpp"

namespace sta::pipeline {

enum class Stage { vqvae, encoder, diffusion, classifier };

std::string_view name_of(Stage s);
Stage parse_stage(std::string_view s);

/// Output layout of one run directory:
///   corpus/                 generated data (unless data.dir points elsewhere)
///   checkpoints/<stage>.stak        best dev-loss weights
///   checkpoints/<stage>.last.stak   latest epoch, used by --resume
///   logs/<stage>.jsonl
///   config.resolved
struct Workspace {
    std::filesystem::path root;
    PipelineConfig config;

    std::filesystem::path corpus_dir() const;
    std::filesystem::path checkpoint(Stage s) const;
    std::filesystem::path last_checkpoint(Stage s) const;
    std::filesystem::path log_path(Stage s) const;
};

struct GenDataSummary {
    int scenes = 0;
    int records = 0;
    int captions = 0;
    std::vector<std::string> languages;
    std::array<int, 3> scenes_per_split{};
};

/// Writes the corpus. A non-empty target directory is an error unless `force`.
GenDataSummary cmd_gen_data(const Workspace& ws, bool force, std::ostream& out);

struct TrainOptions {
    bool resume = false;
    /// Stop after this many epochs in this invocation (0: run to completion).
    int stop_after = 0;
    bool allow_mismatch = false;
};

struct EpochLog {
    int epoch = 0;
    double loss = 0.0;
    double dev_loss = 0.0;
    double lr = 0.0;
    std::uint64_t seed = 0;
};

struct TrainSummary {
    std::vector<EpochLog> epochs;  // only those run in this invocation
    int best_epoch = -1;
    double best_dev_loss = 0.0;
    bool stopped_early = false;
    bool finished = false;
    nlohmann::json extra;  // stage-specific diagnostics
};

TrainSummary cmd_train(const Workspace& ws, Stage stage, const TrainOptions& options, std::ostream& out);

struct SampleRequest {
    std::optional<std::filesystem::path> caption;  // a .stac file
    std::optional<SceneSpec> scene;                // synthesised caption instead
    std::string language = "A";
    int speaker = 0;
    int count = 4;
    std::uint64_t seed = 1;
    std::filesystem::path dest;
    bool allow_mismatch = false;
};

/// Writes sample_NN.png per sample plus grid.png; returns the sample paths.
std::vector<std::filesystem::path> cmd_sample(const Workspace& ws, const SampleRequest& request, std::ostream& out);

/// Generates eval.samples_per_caption images for every caption of `split`,
/// named scene_XXXX_<caption stem>_sK.png, plus grid.png.
std::vector<std::filesystem::path> cmd_sample_split(const Workspace& ws, Split split, const std::filesystem::path& dest,
                                                    std::uint64_t seed, bool allow_mismatch, std::ostream& out);

struct EvaluateOptions {
    int k = 0;  // 0: eval.k from the config
    bool allow_mismatch = false;
    std::uint64_t seed = 1;
};

/// FID, IS, Recall@k and colour+shape accuracy of the images in `generated`
/// against those in `reference`. Generated files named scene_XXXX_* are
/// matched to reference scene_XXXX.png; reference images must be corpus
/// renders so their attributes are known.
nlohmann::json cmd_evaluate(const Workspace& ws, const std::filesystem::path& generated,
                            const std::filesystem::path& reference, const EvaluateOptions& options, std::ostream& out);

/// Speech <-> image retrieval on the test split at k = 1, 5, 10, overall and
/// per language. With `untrained`, a freshly initialised encoder is scored.
nlohmann::json cmd_retrieval_eval(const Workspace& ws, bool untrained, bool allow_mismatch, std::ostream& out);

}  // namespace sta::pipeline
