#include "sta/data/caption.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace sta {

namespace {

constexpr int kSlotValues[] = {kShapeCount, kColorCount, kSizeCount, 3, 3, 1, 1};
constexpr std::uint32_t kCaptionVersion = 1;
constexpr double kBaseFramesPerPhone = 2.0;

Language make_language(std::string name, std::vector<Slot> grammar, std::uint64_t seed, int template_base) {
    Language lang;
    lang.name = std::move(name);
    lang.grammar = std::move(grammar);
    lang.template_base = template_base;
    Rng rng(seed);
    int next = template_base;
    for (int w = 0; w < Language::word_count(); ++w) {
        const int n = uniform_int(rng, 2, 4);
        std::vector<int> ids;
        for (int p = 0; p < n; ++p) {
            ids.push_back(next++);
            std::vector<double> proto(kFrameDim);
            for (double& v : proto) v = normal(rng);
            lang.templates.push_back(std::move(proto));
        }
        lang.phones.push_back(std::move(ids));
    }
    return lang;
}

const std::array<Language, 2>& languages() {
    static const std::array<Language, 2> langs{
        make_language("A",
                      {Slot::filler0, Slot::size, Slot::color, Slot::shape, Slot::filler1, Slot::row, Slot::col},
                      0xA11CE5ULL, 0),
        make_language("B",
                      {Slot::shape, Slot::color, Slot::filler0, Slot::size, Slot::col, Slot::row, Slot::filler1},
                      0xB0B5ULL, 1000),
    };
    return langs;
}

void put_u32(std::ostream& os, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("caption file truncated");
    return b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

int Language::word_index(Slot slot, int value) {
    int base = 0;
    for (int s = 0; s < static_cast<int>(slot); ++s) base += kSlotValues[s];
    if (value < 0 || value >= kSlotValues[static_cast<int>(slot)]) throw std::out_of_range("word value out of range");
    return base + value;
}

int Language::word_count() {
    int n = 0;
    for (int v : kSlotValues) n += v;
    return n;
}

std::vector<int> Language::words_for(const SceneSpec& spec) const {
    std::vector<int> words;
    for (Slot slot : grammar) {
        int value = 0;
        switch (slot) {
            case Slot::shape: value = static_cast<int>(spec.shape); break;
            case Slot::color: value = static_cast<int>(spec.color); break;
            case Slot::size: value = static_cast<int>(spec.size); break;
            case Slot::row: value = spec.row(); break;
            case Slot::col: value = spec.col(); break;
            case Slot::filler0:
            case Slot::filler1: break;
        }
        words.push_back(word_index(slot, value));
    }
    return words;
}

std::vector<int> Language::template_ids() const {
    std::vector<int> ids;
    for (const auto& w : phones) ids.insert(ids.end(), w.begin(), w.end());
    return ids;
}

const Language& language(std::string_view name) {
    for (const auto& l : languages())
        if (l.name == name) return l;
    throw std::invalid_argument("unknown language: " + std::string(name));
}

std::vector<std::string> registered_languages() {
    std::vector<std::string> names;
    for (const auto& l : languages()) names.push_back(l.name);
    return names;
}

Speaker speaker_profile(int id) {
    Rng rng(derive_seed(0x5bea4e5ULL, {static_cast<std::uint64_t>(id)}));
    Speaker s;
    s.id = id;
    s.rate = 0.75 + 0.55 * uniform01(rng);
    s.amplitude = 0.8 + 0.45 * uniform01(rng);
    s.timbre.resize(kFrameDim);
    for (double& v : s.timbre) v = normal(rng, 0.0, 0.25);
    return s;
}

CaptionSequence synthesize_caption(const SceneSpec& spec, std::string_view language_name, int speaker_id, Rng& rng) {
    const Language& lang = language(language_name);
    const Speaker spk = speaker_profile(speaker_id);

    std::vector<double> frames;
    std::vector<double> prev(kFrameDim, 0.0);
    bool first = true;
    for (int word : lang.words_for(spec)) {
        for (int tid : lang.phones[static_cast<std::size_t>(word)]) {
            const auto& proto = lang.templates[static_cast<std::size_t>(tid - lang.template_base)];
            const double jitter = 0.8 + 0.4 * uniform01(rng);
            const int dur = std::max(1, static_cast<int>(std::lround(kBaseFramesPerPhone * spk.rate * jitter)));
            for (int f = 0; f < dur; ++f) {
                // The first frame of each phone blends with the previous one,
                // so no frame marks a boundary.
                const double w = (f == 0 && !first) ? 0.5 : 1.0;
                for (int d = 0; d < kFrameDim; ++d) {
                    const double v = w * proto[d] + (1.0 - w) * prev[d];
                    frames.push_back(spk.amplitude * v + spk.timbre[d] + normal(rng, 0.0, 0.1));
                }
            }
            prev = proto;
            first = false;
        }
    }
    const std::size_t rows = frames.size() / kFrameDim;
    return CaptionSequence{nn::Tensor::matrix(rows, kFrameDim, std::move(frames))};
}

void write_caption(const std::filesystem::path& path, const CaptionSequence& caption) {
    static_assert(std::endian::native == std::endian::little, "caption IO assumes a little-endian host");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write caption " + path.string());
    os.write("STAC", 4);
    put_u32(os, kCaptionVersion);
    put_u32(os, static_cast<std::uint32_t>(caption.frames.rows()));
    put_u32(os, static_cast<std::uint32_t>(caption.frames.cols()));
    for (double v : caption.frames.values()) {
        const float f = static_cast<float>(v);
        os.write(reinterpret_cast<const char*>(&f), sizeof f);
    }
}

CaptionSequence read_caption(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot read caption " + path.string());
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "STAC", 4) != 0)
        throw std::runtime_error(path.string() + ": not a STAC caption file");
    const std::uint32_t version = get_u32(is);
    if (version != kCaptionVersion)
        throw std::runtime_error(path.string() + ": unsupported caption version " + std::to_string(version));
    const std::uint32_t rows = get_u32(is), cols = get_u32(is);
    if (rows == 0) throw std::runtime_error(path.string() + ": empty caption");
    std::vector<double> values(static_cast<std::size_t>(rows) * cols);
    for (double& v : values) {
        float f;
        if (!is.read(reinterpret_cast<char*>(&f), sizeof f)) throw std::runtime_error(path.string() + ": truncated");
        v = f;
    }
    return CaptionSequence{nn::Tensor::matrix(rows, cols, std::move(values))};
}

}  // namespace sta
