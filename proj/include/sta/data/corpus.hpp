#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "sta/data/caption.hpp"
#include "sta/data/image.hpp"
#include "sta/data/scene.hpp"

namespace sta {

enum class Split { train, dev, test };
std::string_view name_of(Split s);
Split parse_split(std::string_view s);

struct CorpusConfig {
    int n_scenes = 200;
    std::vector<std::string> languages{"A", "B"};
    int speakers_per_caption = 2;
    int speaker_pool = 8;
    std::uint64_t seed = 1;
    int image_size = 16;
    double test_fraction = 0.2;
    double dev_fraction = 0.1;
    /// Upper bound on how often one attribute combination may recur.
    int max_repeats = 4;
};

/// One (scene, speaker) pairing. Bilingual corpora carry one caption per
/// language in every record.
struct CorpusRecord {
    int id = 0;
    int scene = 0;
    std::string image;
    std::map<std::string, std::string> captions;
    int speaker = 0;
    SceneSpec spec;
    Split split = Split::train;
};

struct CorpusManifest {
    CorpusConfig config;
    std::vector<CorpusRecord> records;

    std::size_t scene_count() const;
    std::size_t caption_count() const;
    std::vector<const CorpusRecord*> in_split(Split s) const;
};

/// Assigns every scene a combination and a split without touching disk.
/// Throws std::invalid_argument when the requested split is impossible.
CorpusManifest plan_corpus(const CorpusConfig& config);

/// Plans, renders and synthesises the corpus into `dir` and writes
/// manifest.json. Output bytes depend only on the config.
CorpusManifest generate_corpus(const CorpusConfig& config, const std::filesystem::path& dir, unsigned workers = 0);

void write_manifest(const std::filesystem::path& path, const CorpusManifest& manifest);
CorpusManifest read_manifest(const std::filesystem::path& path);

struct SplitAudit {
    bool disjoint = true;
    /// Largest |P(value | split) - P(value)| over all attributes, values and
    /// non-empty splits.
    double max_marginal_deviation = 0.0;
    std::vector<std::string> problems;
};
SplitAudit audit_splits(const CorpusManifest& manifest);

/// Corpus files loaded into memory, indexed like manifest.records.
struct LoadedCorpus {
    std::filesystem::path root;
    CorpusManifest manifest;
    std::map<int, Image> images;  // by scene
    std::vector<std::map<std::string, CaptionSequence>> captions;
};
LoadedCorpus load_corpus(const std::filesystem::path& dir);

}  // namespace sta
