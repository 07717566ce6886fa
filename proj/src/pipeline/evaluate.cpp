#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <regex>
#include <set>
#include <stdexcept>

#include "sta/metrics/metrics.hpp"
#include "sta/numerics/parallel.hpp"
#include "sta/pipeline/models.hpp"

namespace sta::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;
using nn::Tensor;

namespace {

struct Generator {
    vq::VqCodec codec;
    encoder::SpeechEncoder enc;
    denoiser::Denoiser model;
    diffusion::Schedule schedule;

    Generator(const Workspace& ws, bool allow_mismatch)
        : codec(load_vq(ws, allow_mismatch)),
          enc(load_encoder(ws, allow_mismatch)),
          model(load_denoiser(ws, allow_mismatch)),
          schedule(ws.config.schedule()) {}

    Image generate(std::span<const double> y, std::uint64_t seed) const {
        Rng rng(seed);
        const auto tokens = denoiser::sample_tokens(model, y, schedule, rng);
        return codec.decode({codec.grid_height(), codec.grid_width(), tokens});
    }
};

void write_sample_manifest(const fs::path& dest, const Workspace& ws, std::uint64_t seed,
                           const std::vector<fs::path>& files) {
    json j{{"config_digest", ws.config.digest()}, {"seed", seed}, {"files", json::array()}};
    for (const auto& f : files) j["files"].push_back(f.filename().string());
    std::ofstream(dest / "samples.json") << j.dump(2) << '\n';
}

std::vector<fs::path> png_files(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw std::runtime_error("not a directory: " + dir.string());
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".png" && e.path().filename() != "grid.png")
            out.push_back(e.path());
    std::sort(out.begin(), out.end());
    if (out.empty()) throw std::runtime_error("no PNG images in " + dir.string());
    return out;
}

std::optional<int> scene_of(const fs::path& p) {
    static const std::regex re("^scene_([0-9]+)");
    std::smatch m;
    const std::string name = p.filename().string();
    if (std::regex_search(name, m, re)) return std::stoi(m[1]);
    return std::nullopt;
}

Tensor stack(const std::vector<std::vector<double>>& rows) {
    Tensor t = Tensor::zeros(rows.size(), rows.empty() ? 0 : rows[0].size());
    for (std::size_t r = 0; r < rows.size(); ++r) std::copy(rows[r].begin(), rows[r].end(), t.row(r).begin());
    return t;
}

json metric(const std::string& name, double value, std::size_t n, const std::string& checksum, std::uint64_t seed) {
    return {{"metric", name}, {"value", value}, {"n", n}, {"extractor_checksum", checksum}, {"seed", seed}};
}

}  // namespace

std::vector<fs::path> cmd_sample(const Workspace& ws, const SampleRequest& req, std::ostream& out) {
    if (req.count < 1) throw std::invalid_argument("sample: count must be positive");
    if (req.caption.has_value() == req.scene.has_value())
        throw std::invalid_argument("sample: give exactly one of a caption file or a scene spec");
    const Generator gen(ws, req.allow_mismatch);
    CaptionSequence caption;
    if (req.caption) {
        caption = read_caption(*req.caption);
    } else {
        (void)language(req.language);  // rejects unregistered languages
        Rng rng(derive_seed(req.seed, {0xca9}));
        caption = synthesize_caption(*req.scene, req.language, req.speaker, rng);
    }
    const auto y = gen.enc.embed(caption);
    fs::create_directories(req.dest);
    std::vector<Image> images(static_cast<std::size_t>(req.count));
    parallel_for(images.size(), [&](std::size_t i) { images[i] = gen.generate(y, derive_seed(req.seed, {i})); });
    std::vector<fs::path> files;
    for (std::size_t i = 0; i < images.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "sample_%02zu.png", i);
        files.push_back(req.dest / name);
        write_png(files.back(), images[i]);
    }
    write_png(req.dest / "grid.png", contact_sheet(images, std::min(req.count, 8)));
    write_sample_manifest(req.dest, ws, req.seed, files);
    out << "wrote " << files.size() << " samples and grid.png to " << req.dest.string() << '\n';
    return files;
}

std::vector<fs::path> cmd_sample_split(const Workspace& ws, Split split, const fs::path& dest, std::uint64_t seed,
                                       bool allow_mismatch, std::ostream& out) {
    const Generator gen(ws, allow_mismatch);
    const LoadedCorpus corpus = load_corpus(ws.corpus_dir());
    struct Job {
        std::vector<double> y;
        std::string name;
        std::uint64_t seed;
    };
    std::vector<const CaptionSequence*> caps;
    std::vector<std::string> stems;
    std::vector<std::uint64_t> ids;
    for (std::size_t i = 0; i < corpus.manifest.records.size(); ++i) {
        const auto& r = corpus.manifest.records[i];
        if (r.split != split) continue;
        for (const auto& [lang, path] : r.captions) {
            caps.push_back(&corpus.captions[i].at(lang));
            stems.push_back(fs::path(path).stem().string());
            ids.push_back(static_cast<std::uint64_t>(r.id) * 16 + static_cast<std::uint64_t>(std::distance(r.captions.begin(), r.captions.find(lang))));
        }
    }
    if (caps.empty()) throw std::runtime_error("split " + std::string(name_of(split)) + " has no captions");
    std::vector<std::vector<double>> ys(caps.size());
    parallel_for(caps.size(), [&](std::size_t i) { ys[i] = gen.enc.embed(*caps[i]); });

    const int per = ws.config.eval.samples_per_caption;
    std::vector<Job> jobs;
    for (std::size_t i = 0; i < caps.size(); ++i)
        for (int s = 0; s < per; ++s)
            jobs.push_back({ys[i], stems[i] + "_s" + std::to_string(s), derive_seed(seed, {ids[i], static_cast<std::uint64_t>(s)})});
    std::vector<Image> images(jobs.size());
    parallel_for(jobs.size(), [&](std::size_t i) { images[i] = gen.generate(jobs[i].y, jobs[i].seed); });

    fs::create_directories(dest);
    std::vector<fs::path> files;
    for (std::size_t i = 0; i < jobs.size(); ++i) {
        files.push_back(dest / (jobs[i].name + ".png"));
        write_png(files.back(), images[i]);
    }
    const std::vector<Image> head(images.begin(), images.begin() + static_cast<std::ptrdiff_t>(std::min<std::size_t>(images.size(), 64)));
    write_png(dest / "grid.png", contact_sheet(head, 8));
    write_sample_manifest(dest, ws, seed, files);
    out << "wrote " << files.size() << " samples for split " << name_of(split) << " to " << dest.string() << '\n';
    return files;
}

json cmd_evaluate(const Workspace& ws, const fs::path& generated, const fs::path& reference,
                  const EvaluateOptions& options, std::ostream& out) {
    const metrics::EvalClassifier clf = load_classifier(ws, options.allow_mismatch);
    if (fs::exists(generated / "samples.json") && !options.allow_mismatch) {
        const json meta = json::parse(std::ifstream(generated / "samples.json"));
        if (meta.value("config_digest", "") != ws.config.digest())
            throw std::runtime_error("generated images in " + generated.string() + " were produced under config digest " +
                                     meta.value("config_digest", std::string("?")) + ", current digest is " +
                                     ws.config.digest() + " (use --allow-mismatch to evaluate anyway)");
    }
    const auto gen_files = png_files(generated);
    const auto ref_files = png_files(reference);
    std::vector<Image> gen_images, ref_images;
    for (const auto& f : gen_files) gen_images.push_back(read_png(f));
    for (const auto& f : ref_files) ref_images.push_back(read_png(f));

    const auto gen_pred = clf.predict(gen_images);
    const auto ref_pred = clf.predict(ref_images);
    std::vector<std::vector<double>> gf, rf, probs;
    for (const auto& p : gen_pred) {
        gf.push_back(p.features);
        probs.push_back(p.color_shape());
    }
    for (const auto& p : ref_pred) rf.push_back(p.features);
    const std::string checksum = hex64(clf.checksum());
    const std::uint64_t seed = options.seed;

    json report{{"config_digest", ws.config.digest()},
                {"extractor_checksum", checksum},
                {"generated", generated.string()},
                {"reference", reference.string()},
                {"metrics", json::array()}};
    auto& m = report["metrics"];

    const auto ref_stats = metrics::feature_stats(stack(rf));
    const double fid = metrics::fid(metrics::feature_stats(stack(gf)), ref_stats);
    m.push_back(metric("fid", fid, gen_images.size(), checksum, seed));

    // Baseline: uniform noise images, as many as were generated.
    Rng noise_rng(derive_seed(seed, {0x9015e}));
    std::vector<Image> noise(gen_images.size(), Image(ws.config.data.image_size, ws.config.data.image_size));
    for (auto& img : noise)
        for (double& v : img.pixels) v = uniform01(noise_rng);
    std::vector<std::vector<double>> nf;
    for (const auto& p : clf.predict(noise)) nf.push_back(p.features);
    const double fid_noise = metrics::fid(metrics::feature_stats(stack(nf)), ref_stats);
    m.push_back(metric("fid_noise_baseline", fid_noise, noise.size(), checksum, seed));

    const int splits = std::min<int>(ws.config.eval.is_splits, static_cast<int>(probs.size()));
    const auto is = metrics::inception_score_splits(stack(probs), splits);
    m.push_back(metric("inception_score_mean", is.mean, probs.size(), checksum, seed));
    m.push_back(metric("inception_score_sd", is.sd, probs.size(), checksum, seed));
    report["inception_score_splits"] = splits;

    // Attributes of reference images are known exactly when they are renders.
    std::map<int, SceneSpec> ref_spec;
    for (std::size_t i = 0; i < ref_files.size(); ++i)
        if (const auto sc = scene_of(ref_files[i]))
            if (const auto spec = identify_render(ref_images[i])) ref_spec[*sc] = *spec;

    std::vector<int> gen_combo(gen_files.size(), -1);
    std::size_t scored = 0, correct = 0, color_ok = 0;
    for (std::size_t i = 0; i < gen_files.size(); ++i) {
        const auto sc = scene_of(gen_files[i]);
        if (!sc || !ref_spec.count(*sc)) continue;
        const SceneSpec& want = ref_spec.at(*sc);
        gen_combo[i] = want.combo_index();
        const SceneSpec got = gen_pred[i].argmax();
        ++scored;
        correct += got.color_shape_class() == want.color_shape_class();
        color_ok += got.color == want.color;
    }
    if (scored > 0) {
        m.push_back(metric("color_shape_accuracy", static_cast<double>(correct) / scored, scored, checksum, seed));
        m.push_back(metric("color_accuracy", static_cast<double>(color_ok) / scored, scored, checksum, seed));
    }

    // Recall@k: reference images whose scene was generated are the queries;
    // a hit is any generated image of the same attribute combination.
    const int k = options.k > 0 ? options.k : ws.config.eval.k;
    std::vector<std::vector<double>> queries;
    std::vector<int> query_combo;
    for (std::size_t i = 0; i < ref_files.size(); ++i) {
        const auto sc = scene_of(ref_files[i]);
        if (!sc || !ref_spec.count(*sc)) continue;
        const int combo = ref_spec.at(*sc).combo_index();
        if (std::find(gen_combo.begin(), gen_combo.end(), combo) == gen_combo.end()) continue;
        queries.push_back(rf[i]);
        query_combo.push_back(combo);
    }
    if (!queries.empty() && static_cast<std::size_t>(k) <= gen_files.size()) {
        const Tensor candidates = stack(gf);
        // A query counts as recalled when one of its top-k candidates carries
        // its combination; under a permutation some queries have no match.
        auto recall_with = [&](const std::vector<int>& combos) {
            std::size_t hit = 0;
            for (std::size_t i = 0; i < queries.size(); ++i) {
                const auto order = metrics::rank_candidates(candidates, queries[i]);
                for (int r = 0; r < k; ++r)
                    if (combos[static_cast<std::size_t>(order[static_cast<std::size_t>(r)])] == query_combo[i]) {
                        ++hit;
                        break;
                    }
            }
            return 100.0 * static_cast<double>(hit) / static_cast<double>(queries.size());
        };
        m.push_back(metric("recall_at_" + std::to_string(k), recall_with(gen_combo), queries.size(), checksum, seed));
        std::vector<int> shuffled = gen_combo;
        Rng perm_rng(derive_seed(seed, {0x5f1e}));
        std::shuffle(shuffled.begin(), shuffled.end(), perm_rng);
        m.push_back(metric("recall_at_" + std::to_string(k) + "_shuffled_baseline", recall_with(shuffled),
                           queries.size(), checksum, seed));
        report["k"] = k;
        report["candidates"] = gen_files.size();
        report["k_rationale"] = "k is scaled to the candidate set so the cut-off stays a few percent of it, "
                                "as 50 of 1000 would be at a larger scale";
    }
    out << "FID " << fid << " (noise baseline " << fid_noise << "), IS " << is.mean << " +- " << is.sd;
    if (scored > 0) out << ", colour+shape accuracy " << static_cast<double>(correct) / scored;
    out << '\n';
    return report;
}

json cmd_retrieval_eval(const Workspace& ws, bool untrained, bool allow_mismatch, std::ostream& out) {
    const encoder::SpeechEncoder enc =
        untrained ? encoder::SpeechEncoder(ws.config.encoder, derive_seed(stage_seed(ws.config, Stage::encoder), {0}))
                  : load_encoder(ws, allow_mismatch);
    const auto teacher = make_teacher(ws.config);
    const LoadedCorpus corpus = load_corpus(ws.corpus_dir());

    // Candidates for speech -> image: every corpus image.
    std::vector<int> image_scene;
    std::vector<std::vector<double>> image_emb;
    std::vector<int> image_combo;
    for (const auto& [scene, img] : corpus.images) {
        image_scene.push_back(scene);
        image_emb.push_back(teacher.embed_image(img));
        image_combo.push_back(identify_render(img)->combo_index());
    }
    struct Cap {
        std::string lang;
        int combo;
        bool test;
        std::vector<double> emb;
    };
    std::vector<Cap> caps;
    std::vector<const CaptionSequence*> seqs;
    for (std::size_t i = 0; i < corpus.manifest.records.size(); ++i) {
        const auto& r = corpus.manifest.records[i];
        for (const auto& [lang, c] : corpus.captions[i]) {
            caps.push_back({lang, r.spec.combo_index(), r.split == Split::test, {}});
            seqs.push_back(&c);
        }
    }
    parallel_for(caps.size(), [&](std::size_t i) { caps[i].emb = enc.embed(*seqs[i]); });

    auto speech_to_image = [&](const std::string& lang, int k) {
        std::vector<std::vector<double>> q;
        metrics::RetrievalIndex index{stack(image_emb), {}};
        for (const auto& c : caps) {
            if (!c.test || (!lang.empty() && c.lang != lang)) continue;
            q.push_back(c.emb);
            std::vector<int> hits;
            for (std::size_t j = 0; j < image_combo.size(); ++j)
                if (image_combo[j] == c.combo) hits.push_back(static_cast<int>(j));
            index.matches.push_back(hits);
        }
        return metrics::recall_at_k(index, stack(q), k);
    };
    auto image_to_speech = [&](const std::string& lang, int k) {
        std::vector<std::vector<double>> cand;
        std::vector<int> cand_combo;
        for (const auto& c : caps)
            if (lang.empty() || c.lang == lang) {
                cand.push_back(c.emb);
                cand_combo.push_back(c.combo);
            }
        metrics::RetrievalIndex index{stack(cand), {}};
        std::vector<std::vector<double>> q;
        std::set<int> done;
        for (const auto& r : corpus.manifest.records) {
            if (r.split != Split::test || !done.insert(r.scene).second) continue;
            q.push_back(teacher.embed(r.spec));
            std::vector<int> hits;
            for (std::size_t j = 0; j < cand_combo.size(); ++j)
                if (cand_combo[j] == r.spec.combo_index()) hits.push_back(static_cast<int>(j));
            index.matches.push_back(hits);
        }
        return metrics::recall_at_k(index, stack(q), k);
    };

    json report{{"encoder", untrained ? "untrained" : "trained"},
                {"candidates_images", image_emb.size()},
                {"chance_r1_speech_to_image", 100.0 / static_cast<double>(image_emb.size())}};
    std::vector<std::string> langs{""};
    for (const auto& l : corpus.manifest.config.languages) langs.push_back(l);
    for (const auto& lang : langs) {
        json row;
        for (int k : {1, 5, 10}) {
            row["speech_to_image"]["R@" + std::to_string(k)] = speech_to_image(lang, k);
            row["image_to_speech"]["R@" + std::to_string(k)] = image_to_speech(lang, k);
        }
        report[lang.empty() ? "all" : "language_" + lang] = row;
    }
    out << "retrieval (" << report["encoder"].get<std::string>() << " encoder) speech->image R@1 "
        << report["all"]["speech_to_image"]["R@1"].get<double>() << ", image->speech R@1 "
        << report["all"]["image_to_speech"]["R@1"].get<double>() << '\n';
    return report;
}

}  // namespace sta::pipeline
