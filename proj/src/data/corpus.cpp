#include "sta/data/corpus.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "sta/numerics/parallel.hpp"

namespace sta {

namespace {

using nlohmann::json;

std::array<int, 4> attributes(const SceneSpec& s) {
    return {static_cast<int>(s.shape), static_cast<int>(s.color), static_cast<int>(s.size), s.position};
}
constexpr std::array<int, 4> kAttrValues{kShapeCount, kColorCount, kSizeCount, kPositionCount};
constexpr std::array<const char*, 4> kAttrNames{"shape", "color", "size", "position"};

int language_slot(const std::string& name) {
    const auto names = registered_languages();
    return static_cast<int>(std::find(names.begin(), names.end(), name) - names.begin());
}

void validate(const CorpusConfig& c) {
    if (c.n_scenes < 1) throw std::invalid_argument("corpus needs at least one scene");
    if (c.max_repeats < 1) throw std::invalid_argument("max_repeats must be positive");
    if (c.n_scenes > kSceneCount * c.max_repeats)
        throw std::invalid_argument("n_scenes exceeds " + std::to_string(kSceneCount) + " x max_repeats");
    if (c.languages.empty()) throw std::invalid_argument("corpus needs at least one language");
    std::set<std::string> seen;
    for (const auto& l : c.languages) {
        language(l);
        if (!seen.insert(l).second) throw std::invalid_argument("duplicate language " + l);
    }
    if (c.speaker_pool < 1 || c.speakers_per_caption < 1 || c.speakers_per_caption > c.speaker_pool)
        throw std::invalid_argument("speakers_per_caption must be in [1, speaker_pool]");
    if (c.image_size < 3) throw std::invalid_argument("image_size too small");
    if (c.test_fraction <= 0 || c.dev_fraction < 0 || c.test_fraction + c.dev_fraction >= 1)
        throw std::invalid_argument("split fractions must satisfy 0 < test, 0 <= dev, test + dev < 1");
}

/// Greedily picks `count` combos from `pool` so that every attribute value is
/// represented as evenly as possible; ties go to the earliest pool entry.
std::vector<int> balanced_pick(std::vector<int>& pool, int count) {
    std::array<std::vector<int>, 4> counts;
    for (int a = 0; a < 4; ++a) counts[a].assign(kAttrValues[a], 0);
    std::vector<int> picked;
    for (int n = 0; n < count; ++n) {
        std::size_t best = 0;
        long best_score = -1;
        for (std::size_t i = 0; i < pool.size(); ++i) {
            const auto attr = attributes(SceneSpec::from_combo_index(pool[i]));
            long score = 0;
            for (int a = 0; a < 4; ++a) score += static_cast<long>(counts[a][attr[a]]) * kAttrValues[a];
            if (best_score < 0 || score < best_score) {
                best_score = score;
                best = i;
            }
        }
        const auto attr = attributes(SceneSpec::from_combo_index(pool[best]));
        for (int a = 0; a < 4; ++a) ++counts[a][attr[a]];
        picked.push_back(pool[best]);
        pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(best));
    }
    return picked;
}

std::string scene_stem(int scene) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "scene_%04d", scene);
    return buf;
}

json to_json(const CorpusConfig& c) {
    return {{"n_scenes", c.n_scenes},
            {"languages", c.languages},
            {"speakers_per_caption", c.speakers_per_caption},
            {"speaker_pool", c.speaker_pool},
            {"seed", c.seed},
            {"image_size", c.image_size},
            {"test_fraction", c.test_fraction},
            {"dev_fraction", c.dev_fraction},
            {"max_repeats", c.max_repeats}};
}

}  // namespace

std::string_view name_of(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::dev: return "dev";
        case Split::test: return "test";
    }
    return "?";
}

Split parse_split(std::string_view s) {
    if (s == "train") return Split::train;
    if (s == "dev") return Split::dev;
    if (s == "test") return Split::test;
    throw std::invalid_argument("unknown split: " + std::string(s));
}

std::size_t CorpusManifest::scene_count() const {
    std::set<int> scenes;
    for (const auto& r : records) scenes.insert(r.scene);
    return scenes.size();
}

std::size_t CorpusManifest::caption_count() const {
    std::size_t n = 0;
    for (const auto& r : records) n += r.captions.size();
    return n;
}

std::vector<const CorpusRecord*> CorpusManifest::in_split(Split s) const {
    std::vector<const CorpusRecord*> out;
    for (const auto& r : records)
        if (r.split == s) out.push_back(&r);
    return out;
}

CorpusManifest plan_corpus(const CorpusConfig& config) {
    validate(config);

    Rng order_rng(derive_seed(config.seed, {1}));
    std::vector<int> order;
    while (static_cast<int>(order.size()) < config.n_scenes) {
        std::vector<int> cycle(kSceneCount);
        std::iota(cycle.begin(), cycle.end(), 0);
        std::shuffle(cycle.begin(), cycle.end(), order_rng);
        order.insert(order.end(), cycle.begin(), cycle.end());
    }
    order.resize(static_cast<std::size_t>(config.n_scenes));

    std::vector<int> distinct;
    for (int c : order)
        if (std::find(distinct.begin(), distinct.end(), c) == distinct.end()) distinct.push_back(c);
    const int d = static_cast<int>(distinct.size());
    const int n_test = static_cast<int>(std::lround(config.test_fraction * d));
    const int n_dev = static_cast<int>(std::lround(config.dev_fraction * d));
    if (n_test < 1 || d - n_test - n_dev < 1 || (config.dev_fraction > 0 && n_dev < 1))
        throw std::invalid_argument("cannot split " + std::to_string(d) +
                                    " attribute combinations into non-empty disjoint train/dev/test sets");

    std::vector<int> pool = distinct;
    std::map<int, Split> split_of;
    for (int c : balanced_pick(pool, n_test)) split_of[c] = Split::test;
    for (int c : balanced_pick(pool, n_dev)) split_of[c] = Split::dev;
    for (int c : pool) split_of[c] = Split::train;

    CorpusManifest manifest;
    manifest.config = config;
    for (int scene = 0; scene < config.n_scenes; ++scene) {
        Rng spk_rng(derive_seed(config.seed, {2, static_cast<std::uint64_t>(scene)}));
        std::vector<int> speakers(static_cast<std::size_t>(config.speaker_pool));
        std::iota(speakers.begin(), speakers.end(), 0);
        std::shuffle(speakers.begin(), speakers.end(), spk_rng);
        speakers.resize(static_cast<std::size_t>(config.speakers_per_caption));
        std::sort(speakers.begin(), speakers.end());

        const std::string stem = scene_stem(scene);
        for (int spk : speakers) {
            CorpusRecord r;
            r.id = static_cast<int>(manifest.records.size());
            r.scene = scene;
            r.image = "images/" + stem + ".png";
            r.speaker = spk;
            r.spec = SceneSpec::from_combo_index(order[static_cast<std::size_t>(scene)]);
            r.split = split_of.at(order[static_cast<std::size_t>(scene)]);
            char buf[16];
            std::snprintf(buf, sizeof buf, "_spk%02d_", spk);
            for (const auto& lang : config.languages)
                r.captions[lang] = "captions/" + stem + buf + lang + ".stac";
            manifest.records.push_back(std::move(r));
        }
    }
    return manifest;
}

CorpusManifest generate_corpus(const CorpusConfig& config, const std::filesystem::path& dir, unsigned workers) {
    CorpusManifest manifest = plan_corpus(config);
    std::filesystem::create_directories(dir / "images");
    std::filesystem::create_directories(dir / "captions");

    std::vector<std::vector<const CorpusRecord*>> by_scene(static_cast<std::size_t>(config.n_scenes));
    for (const auto& r : manifest.records) by_scene[static_cast<std::size_t>(r.scene)].push_back(&r);

    parallel_for(
        by_scene.size(),
        [&](std::size_t scene) {
            const auto& recs = by_scene[scene];
            write_png(dir / recs.front()->image, render(recs.front()->spec, config.image_size));
            for (const CorpusRecord* r : recs) {
                for (const auto& [lang, path] : r->captions) {
                    Rng rng(derive_seed(config.seed, {3, scene, static_cast<std::uint64_t>(language_slot(lang)),
                                                      static_cast<std::uint64_t>(r->speaker)}));
                    write_caption(dir / path, synthesize_caption(r->spec, lang, r->speaker, rng));
                }
            }
        },
        workers);

    write_manifest(dir / "manifest.json", manifest);
    return manifest;
}

void write_manifest(const std::filesystem::path& path, const CorpusManifest& manifest) {
    json records = json::array();
    for (const auto& r : manifest.records) {
        json languages = json::array();
        for (const auto& [lang, _] : r.captions) languages.push_back(lang);
        records.push_back({{"id", r.id},
                           {"scene", r.scene},
                           {"image", r.image},
                           {"captions", r.captions},
                           {"languages", languages},
                           {"speaker", r.speaker},
                           {"attributes",
                            {{"shape", name_of(r.spec.shape)},
                             {"color", name_of(r.spec.color)},
                             {"size", name_of(r.spec.size)},
                             {"position", r.spec.position}}},
                           {"split", name_of(r.split)}});
    }
    const json doc{{"format", "sta-corpus"}, {"version", 1}, {"config", to_json(manifest.config)}, {"records", records}};
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << doc.dump(2) << '\n';
}

CorpusManifest read_manifest(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot read " + path.string());
    const json doc = json::parse(is);
    if (doc.value("format", "") != "sta-corpus") throw std::runtime_error(path.string() + ": not a corpus manifest");

    CorpusManifest m;
    const json& c = doc.at("config");
    m.config.n_scenes = c.at("n_scenes");
    m.config.languages = c.at("languages").get<std::vector<std::string>>();
    m.config.speakers_per_caption = c.at("speakers_per_caption");
    m.config.speaker_pool = c.at("speaker_pool");
    m.config.seed = c.at("seed");
    m.config.image_size = c.at("image_size");
    m.config.test_fraction = c.at("test_fraction");
    m.config.dev_fraction = c.at("dev_fraction");
    m.config.max_repeats = c.at("max_repeats");

    for (const json& j : doc.at("records")) {
        CorpusRecord r;
        r.id = j.at("id");
        r.scene = j.at("scene");
        r.image = j.at("image");
        r.captions = j.at("captions").get<std::map<std::string, std::string>>();
        r.speaker = j.at("speaker");
        const json& a = j.at("attributes");
        r.spec.shape = parse_shape(a.at("shape").get<std::string>());
        r.spec.color = parse_color(a.at("color").get<std::string>());
        r.spec.size = parse_size(a.at("size").get<std::string>());
        r.spec.position = a.at("position");
        r.split = parse_split(j.at("split").get<std::string>());
        m.records.push_back(std::move(r));
    }
    return m;
}

SplitAudit audit_splits(const CorpusManifest& manifest) {
    SplitAudit audit;
    std::map<Split, std::set<int>> combos;
    for (const auto& r : manifest.records) combos[r.split].insert(r.spec.combo_index());
    for (int c : combos[Split::test]) {
        if (combos[Split::train].count(c) || combos[Split::dev].count(c)) {
            audit.disjoint = false;
            audit.problems.push_back("test combination " + SceneSpec::from_combo_index(c).to_string() +
                                     " also appears outside the test split");
        }
    }

    const double total = static_cast<double>(manifest.records.size());
    for (int a = 0; a < 4; ++a) {
        std::vector<double> overall(static_cast<std::size_t>(kAttrValues[a]), 0.0);
        for (const auto& r : manifest.records) overall[attributes(r.spec)[a]] += 1.0 / total;
        for (Split s : {Split::train, Split::dev, Split::test}) {
            const auto recs = manifest.in_split(s);
            if (recs.empty()) continue;
            std::vector<double> p(overall.size(), 0.0);
            for (const auto* r : recs) p[attributes(r->spec)[a]] += 1.0 / recs.size();
            for (std::size_t v = 0; v < p.size(); ++v) {
                const double dev = std::abs(p[v] - overall[v]);
                audit.max_marginal_deviation = std::max(audit.max_marginal_deviation, dev);
                if (dev > 0.10)
                    audit.problems.push_back(std::string(name_of(s)) + " split: " + kAttrNames[a] + " value " +
                                             std::to_string(v) + " deviates by " + std::to_string(dev));
            }
        }
    }
    return audit;
}

LoadedCorpus load_corpus(const std::filesystem::path& dir) {
    LoadedCorpus out;
    out.root = dir;
    out.manifest = read_manifest(dir / "manifest.json");
    for (const auto& r : out.manifest.records) {
        if (!out.images.count(r.scene)) out.images.emplace(r.scene, read_png(dir / r.image));
        std::map<std::string, CaptionSequence> caps;
        for (const auto& [lang, path] : r.captions) caps.emplace(lang, read_caption(dir / path));
        out.captions.push_back(std::move(caps));
    }
    return out;
}

}  // namespace sta
