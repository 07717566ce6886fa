#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "sta/data/scene.hpp"
#include "sta/numerics/random.hpp"
#include "sta/numerics/tensor.hpp"

namespace sta {

inline constexpr int kFrameDim = 8;

/// Continuous frame-level features of one spoken caption: L x d_frame.
/// Carries no word or frame-boundary markers.
struct CaptionSequence {
    nn::Tensor frames;

    std::size_t length() const { return frames.rows(); }
    std::size_t dim() const { return frames.cols(); }
};

enum class Slot { shape, color, size, row, col, filler0, filler1 };

/// A synthetic "language": its own word vocabulary, each word a short run of
/// phone templates, plus a word-order grammar.
struct Language {
    std::string name;
    std::vector<Slot> grammar;
    /// phones[word] = sequence of template ids; words are indexed by
    /// word_index(slot, value).
    std::vector<std::vector<int>> phones;
    /// template id -> d_frame prototype vector.
    std::vector<std::vector<double>> templates;
    int template_base = 0;

    static int word_index(Slot slot, int value);
    static int word_count();
    std::vector<int> words_for(const SceneSpec& spec) const;
    std::vector<int> template_ids() const;
};

/// Registered languages are "A" and "B".
const Language& language(std::string_view name);
std::vector<std::string> registered_languages();

/// Per-speaker nuisance parameters: speaking rate, loudness and a constant
/// timbre offset.
struct Speaker {
    int id = 0;
    double rate = 1.0;
    double amplitude = 1.0;
    std::vector<double> timbre;
};
Speaker speaker_profile(int id);

CaptionSequence synthesize_caption(const SceneSpec& spec, std::string_view language_name, int speaker, Rng& rng);

/// Binary caption file: "STAC", u32 version, u32 rows, u32 cols, then
/// rows*cols little-endian binary32 values.
void write_caption(const std::filesystem::path& path, const CaptionSequence& caption);
CaptionSequence read_caption(const std::filesystem::path& path);

}  // namespace sta
