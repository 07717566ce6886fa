#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <ostream>
#include <set>
#include <stdexcept>

#include "sta/numerics/parallel.hpp"
#include "sta/pipeline/models.hpp"

namespace sta::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// What the generic loop needs from a stage.
struct StageHooks {
    std::function<double(Rng&, int epoch)> train_epoch;
    std::function<double()> dev_loss;
    std::function<double()> current_lr;
    /// Writes model (and, for `full`, optimiser/bookkeeping) state.
    std::function<void(Checkpoint&, bool full)> save;
    std::function<void(const Checkpoint&)> load;
    std::function<void()> round;
    std::function<json()> report;
};

std::vector<int> unique_scenes(const LoadedCorpus& c, Split split) {
    std::vector<int> out;
    std::set<int> seen;
    for (const auto& r : c.manifest.records)
        if (r.split == split && seen.insert(r.scene).second) out.push_back(r.scene);
    return out;
}

SceneSpec spec_of(const LoadedCorpus& c, int scene) {
    for (const auto& r : c.manifest.records)
        if (r.scene == scene) return r.spec;
    throw std::logic_error("scene " + std::to_string(scene) + " not in manifest");
}

Image jittered(const SceneSpec& spec, int size, double amount, Rng& rng) {
    if (amount <= 0) return render(spec, size);
    const double dx = amount * (2 * uniform01(rng) - 1);
    const double dy = amount * (2 * uniform01(rng) - 1);
    return render(spec, size, dx, dy);
}

void rewrite_log(const fs::path& path, int keep_epochs) {
    std::vector<std::string> lines;
    if (std::ifstream in(path); in) {
        std::string line;
        while (std::getline(in, line) && static_cast<int>(lines.size()) < keep_epochs) lines.push_back(line);
    }
    if (static_cast<int>(lines.size()) < keep_epochs)
        throw std::runtime_error("training log " + path.string() + " is shorter than the resumed checkpoint");
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    for (const auto& l : lines) out << l << '\n';
}

TrainSummary run_stage(const Workspace& ws, Stage stage, const StageTraining& training, StageHooks& hooks,
                       const TrainOptions& options, std::ostream& out) {
    const std::string digest = ws.config.digest();
    const std::uint64_t base = stage_seed(ws.config, stage);
    const auto make_checkpoint = [&](bool full) {
        Checkpoint ck;
        ck.stage = std::string(name_of(stage));
        ck.digest = digest;
        hooks.save(ck, full);
        return ck;
    };

    int start = 0, best_epoch = -1, since_best = 0;
    double best = std::numeric_limits<double>::infinity();
    bool stopped = false;
    if (options.resume) {
        if (!fs::exists(ws.last_checkpoint(stage)))
            throw std::runtime_error("nothing to resume: " + ws.last_checkpoint(stage).string() + " does not exist");
        const Checkpoint ck = load_checkpoint(ws.last_checkpoint(stage),
                                              options.allow_mismatch ? std::nullopt : std::optional(digest));
        hooks.load(ck);
        start = std::stoi(ck.meta_at("epoch")) + 1;
        best = std::stod(ck.meta_at("best_dev_loss"));
        best_epoch = std::stoi(ck.meta_at("best_epoch"));
        since_best = std::stoi(ck.meta_at("since_best"));
        stopped = ck.meta_at("stopped") == "true";
        rewrite_log(ws.log_path(stage), start);
    } else {
        rewrite_log(ws.log_path(stage), 0);
    }
    archive_config(ws.config, ws.root);

    TrainSummary summary;
    std::ofstream log(ws.log_path(stage), std::ios::app);
    int ran = 0;
    for (int epoch = start; epoch < training.epochs && !stopped; ++epoch) {
        const std::uint64_t seed = derive_seed(base, {1, static_cast<std::uint64_t>(epoch)});
        Rng rng(seed);
        const double lr = hooks.current_lr();
        const double loss = hooks.train_epoch(rng, epoch);
        hooks.round();
        const double dev = hooks.dev_loss();
        const EpochLog entry{epoch, loss, dev, lr, seed};
        summary.epochs.push_back(entry);
        log << json{{"epoch", epoch}, {"loss", loss}, {"dev_loss", dev}, {"lr", lr}, {"seed", seed}}.dump() << '\n';
        log.flush();
        out << name_of(stage) << " epoch " << epoch << " loss " << loss << " dev " << dev << '\n';

        if (dev < best) {
            best = dev;
            best_epoch = epoch;
            since_best = 0;
            save_checkpoint(ws.checkpoint(stage), make_checkpoint(false));
        } else {
            ++since_best;
        }
        stopped = training.patience > 0 && since_best >= training.patience;
        Checkpoint last = make_checkpoint(true);
        last.meta["epoch"] = std::to_string(epoch);
        last.meta["best_dev_loss"] = json(best).dump();
        last.meta["best_epoch"] = std::to_string(best_epoch);
        last.meta["since_best"] = std::to_string(since_best);
        last.meta["stopped"] = stopped ? "true" : "false";
        save_checkpoint(ws.last_checkpoint(stage), last);
        ++ran;
        if (options.stop_after > 0 && ran >= options.stop_after) break;
    }
    if (best_epoch < 0) throw std::runtime_error(std::string(name_of(stage)) + ": no epoch produced a finite dev loss");
    summary.best_epoch = best_epoch;
    summary.best_dev_loss = best;
    summary.stopped_early = stopped;
    summary.finished = stopped || start + ran >= training.epochs;
    if (summary.finished && hooks.report) summary.extra = hooks.report();
    if (stopped) out << name_of(stage) << " stopped early after epoch " << (start + ran - 1) << '\n';
    return summary;
}

// Gaussian noise of standard deviation `sigma` per coordinate, then
// renormalised to the unit sphere the embeddings live on.
std::vector<double> perturb(std::vector<double> y, double sigma, Rng& rng) {
    if (sigma <= 0) return y;
    double n = 0;
    for (double& v : y) {
        v += normal(rng, 0.0, sigma);
        n += v * v;
    }
    n = std::sqrt(n);
    for (double& v : y) v /= n;
    return y;
}

TrainSummary train_vqvae(const Workspace& ws, const LoadedCorpus& corpus, const TrainOptions& options, std::ostream& out) {
    const PipelineConfig& cfg = ws.config;
    const std::uint64_t base = stage_seed(cfg, Stage::vqvae);
    vq::VqCodec codec(cfg.vq, derive_seed(base, {0}));
    vq::VqTrainer trainer(codec, cfg.vq_train.adamw(), derive_seed(base, {3}));
    std::vector<SceneSpec> train;
    for (int s : unique_scenes(corpus, Split::train)) train.push_back(spec_of(corpus, s));
    std::vector<Image> dev;
    for (int s : unique_scenes(corpus, Split::dev)) dev.push_back(corpus.images.at(s));
    if (dev.empty()) for (int s : unique_scenes(corpus, Split::train)) dev.push_back(corpus.images.at(s));

    StageHooks h;
    h.current_lr = [&] { return cfg.vq_train.lr; };
    h.train_epoch = [&](Rng& rng, int epoch) {
        trainer.rng().seed(derive_seed(base, {4, static_cast<std::uint64_t>(epoch)}));
        std::vector<Image> images;
        for (const auto& s : train) images.push_back(jittered(s, cfg.data.image_size, cfg.vq_jitter, rng));
        std::shuffle(images.begin(), images.end(), rng);
        double total = 0;
        int batches = 0;
        const auto b = static_cast<std::size_t>(cfg.vq_train.batch);
        for (std::size_t i = 0; i < images.size(); i += b) {
            const auto part = std::span<const Image>(images).subspan(i, std::min(b, images.size() - i));
            const vq::VqLosses l = trainer.step(part);
            total += l.reconstruction + l.codebook + cfg.vq.commitment * l.commitment;
            ++batches;
        }
        return total / batches;
    };
    h.dev_loss = [&] { return trainer.evaluate(dev).reconstruction; };
    h.round = [&] {
        nn::round_to_binary32(codec.params());
        nn::round_to_binary32(trainer.optimizer());
    };
    h.save = [&](Checkpoint& ck, bool full) {
        store_parameters(ck, "", codec.params());
        if (!full) return;
        store_optimizer(ck, "opt.", codec.params(), trainer.optimizer());
        std::vector<double> idle(trainer.idle_steps().begin(), trainer.idle_steps().end());
        ck.put("vq.idle_steps", nn::Tensor({idle.size()}, idle));
    };
    h.load = [&](const Checkpoint& ck) {
        restore_parameters(ck, "", codec.params());
        restore_optimizer(ck, "opt.", codec.params(), trainer.optimizer());
        const auto& idle = ck.get("vq.idle_steps").values();
        if (idle.size() != trainer.idle_steps().size()) throw std::runtime_error("vq checkpoint: idle counter size mismatch");
        for (std::size_t i = 0; i < idle.size(); ++i) trainer.idle_steps()[i] = static_cast<int>(idle[i]);
    };
    h.report = [&] {
        int used = 0;
        std::vector<bool> seen(static_cast<std::size_t>(cfg.vq.codebook_size), false);
        for (const auto& [s, img] : corpus.images)
            for (int t : codec.encode(img).tokens) seen[static_cast<std::size_t>(t)] = true;
        for (bool b : seen) used += b;
        return json{{"codes_used", used}, {"codes_reinitialised", trainer.reinitialised()}};
    };
    return run_stage(ws, Stage::vqvae, cfg.vq_train, h, options, out);
}

std::vector<encoder::Pair> caption_pairs(const LoadedCorpus& corpus, Split split, const encoder::TeacherEmbedder& teacher) {
    std::vector<encoder::Pair> pairs;
    for (std::size_t i = 0; i < corpus.manifest.records.size(); ++i) {
        const auto& r = corpus.manifest.records[i];
        if (r.split != split) continue;
        for (const auto& [lang, cap] : corpus.captions[i]) pairs.push_back({&cap, teacher.embed(r.spec), r.scene});
    }
    return pairs;
}

TrainSummary train_encoder(const Workspace& ws, const LoadedCorpus& corpus, const TrainOptions& options,
                           std::ostream& out) {
    const PipelineConfig& cfg = ws.config;
    const std::uint64_t base = stage_seed(cfg, Stage::encoder);
    encoder::SpeechEncoder enc(cfg.encoder, derive_seed(base, {0}));
    nn::OptimizerState opt(enc.params(), cfg.encoder_train.adamw());
    const auto teacher = make_teacher(cfg);
    const auto train = caption_pairs(corpus, Split::train, teacher);
    auto dev = caption_pairs(corpus, Split::dev, teacher);
    if (dev.size() < 2) dev = train;

    StageHooks h;
    h.current_lr = [&] { return cfg.encoder_train.lr; };
    h.train_epoch = [&](Rng& rng, int) {
        return encoder::train_encoder_epoch(enc, opt, train, cfg.encoder_train.batch, rng).loss;
    };
    h.dev_loss = [&] { return encoder::evaluate_encoder_loss(enc, dev, cfg.encoder_train.batch); };
    h.round = [&] {
        nn::round_to_binary32(enc.params());
        nn::round_to_binary32(opt);
    };
    h.save = [&](Checkpoint& ck, bool full) {
        store_parameters(ck, "", enc.params());
        ck.meta["teacher_checksum"] = hex64(teacher.checksum());
        if (full) store_optimizer(ck, "opt.", enc.params(), opt);
    };
    h.load = [&](const Checkpoint& ck) {
        restore_parameters(ck, "", enc.params());
        restore_optimizer(ck, "opt.", enc.params(), opt);
    };
    h.report = [&] { return json{{"inv_tau", enc.inv_tau()}}; };
    return run_stage(ws, Stage::encoder, cfg.encoder_train, h, options, out);
}

TrainSummary train_diffusion(const Workspace& ws, const LoadedCorpus& corpus, const TrainOptions& options,
                             std::ostream& out) {
    const PipelineConfig& cfg = ws.config;
    // Earlier stages are loaded read-only; nothing below updates them.
    const vq::VqCodec codec = load_vq(ws, options.allow_mismatch);
    const encoder::SpeechEncoder enc = load_encoder(ws, options.allow_mismatch);
    const std::uint64_t base = stage_seed(cfg, Stage::diffusion);
    const diffusion::Schedule schedule = cfg.schedule();
    schedule.require_terminal_mask();

    std::map<int, std::vector<int>> tokens;
    for (const auto& [s, img] : corpus.images) tokens[s] = codec.encode(img).tokens;
    auto pairs_for = [&](Split split) {
        std::vector<const CaptionSequence*> caps;
        std::vector<int> scenes;
        for (std::size_t i = 0; i < corpus.manifest.records.size(); ++i) {
            const auto& r = corpus.manifest.records[i];
            if (r.split != split) continue;
            for (const auto& [lang, cap] : corpus.captions[i]) {
                caps.push_back(&cap);
                scenes.push_back(r.scene);
            }
        }
        std::vector<denoiser::TrainingPair> pairs(caps.size());
        parallel_for(caps.size(), [&](std::size_t i) { pairs[i] = {tokens.at(scenes[i]), enc.embed(*caps[i])}; });
        return pairs;
    };
    const auto train = pairs_for(Split::train);
    auto dev = pairs_for(Split::dev);
    if (dev.empty()) dev = train;

    denoiser::Denoiser model(cfg.denoiser_config(), derive_seed(base, {0}));
    if (cfg.diffusion.freeze_condition) model.freeze_condition();
    nn::OptimizerState opt(model.params(), cfg.diffusion_train.adamw());
    const denoiser::TrainConfig tc{cfg.diffusion_train.batch, cfg.diffusion.lambda, cfg.diffusion.warmup};

    StageHooks h;
    h.current_lr = [&] { return nn::warmup_lr(cfg.diffusion_train.lr, opt.step, cfg.diffusion.warmup); };
    h.train_epoch = [&](Rng& rng, int) {
        auto noisy = train;
        for (auto& p : noisy) p.condition = perturb(std::move(p.condition), cfg.diffusion.condition_noise, rng);
        return denoiser::train_denoiser_epoch(model, opt, noisy, schedule, tc, rng);
    };
    h.dev_loss = [&] { return denoiser::evaluate_denoiser_loss(model, dev, schedule, tc, derive_seed(base, {2})); };
    h.round = [&] {
        nn::round_to_binary32(model.params());
        nn::round_to_binary32(opt);
    };
    h.save = [&](Checkpoint& ck, bool full) {
        store_parameters(ck, "", model.params());
        ck.schedule = ScheduleBlock{cfg.diffusion.steps, cfg.vq.codebook_size, cfg.diffusion.schedule};
        ck.meta["freeze_condition"] = cfg.diffusion.freeze_condition ? "true" : "false";
        if (full) store_optimizer(ck, "opt.", model.params(), opt);
    };
    h.load = [&](const Checkpoint& ck) {
        restore_parameters(ck, "", model.params());
        restore_optimizer(ck, "opt.", model.params(), opt);
    };
    return run_stage(ws, Stage::diffusion, cfg.diffusion_train, h, options, out);
}

TrainSummary train_classifier(const Workspace& ws, const LoadedCorpus& corpus, const TrainOptions& options,
                              std::ostream& out) {
    const PipelineConfig& cfg = ws.config;
    const std::uint64_t base = stage_seed(cfg, Stage::classifier);
    metrics::EvalClassifier model(cfg.classifier, derive_seed(base, {0}));
    nn::OptimizerState opt(model.params(), cfg.classifier_train.adamw());
    std::vector<SceneSpec> train;
    for (int s : unique_scenes(corpus, Split::train)) train.push_back(spec_of(corpus, s));
    auto labelled = [&](Split split) {
        std::vector<metrics::LabeledImage> v;
        for (int s : unique_scenes(corpus, split)) v.push_back({corpus.images.at(s), spec_of(corpus, s)});
        return v;
    };
    auto dev = labelled(Split::dev);
    if (dev.empty()) dev = labelled(Split::train);
    const auto test = labelled(Split::test);

    StageHooks h;
    h.current_lr = [&] { return cfg.classifier_train.lr; };
    h.train_epoch = [&](Rng& rng, int) {
        std::vector<metrics::LabeledImage> data;
        for (const auto& s : train) data.push_back({jittered(s, cfg.data.image_size, cfg.classifier_jitter, rng), s});
        return metrics::train_classifier_epoch(model, opt, data, cfg.classifier_train.batch, cfg.classifier_noise, rng);
    };
    h.dev_loss = [&] { return metrics::classifier_loss(model, dev); };
    h.round = [&] {
        nn::round_to_binary32(model.params());
        nn::round_to_binary32(opt);
    };
    h.save = [&](Checkpoint& ck, bool full) {
        store_parameters(ck, "", model.params());
        if (full) store_optimizer(ck, "opt.", model.params(), opt);
    };
    h.load = [&](const Checkpoint& ck) {
        restore_parameters(ck, "", model.params());
        restore_optimizer(ck, "opt.", model.params(), opt);
    };
    h.report = [&] {
        if (test.empty()) return json::object();
        const auto a = metrics::classifier_accuracy(load_classifier(ws, true), test);
        return json{{"test_accuracy",
                     {{"shape", a.shape}, {"color", a.color}, {"size", a.size}, {"position", a.position},
                      {"color_shape", a.color_shape}, {"all", a.all}}}};
    };
    return run_stage(ws, Stage::classifier, cfg.classifier_train, h, options, out);
}

}  // namespace

TrainSummary cmd_train(const Workspace& ws, Stage stage, const TrainOptions& options, std::ostream& out) {
    ws.config.validate();
    // Dependencies are checked before the corpus is read so the error names
    // the missing stage rather than whatever fails first.
    if (stage == Stage::diffusion)
        for (Stage dep : {Stage::vqvae, Stage::encoder}) (void)require_checkpoint(ws, dep, options.allow_mismatch);
    if (!fs::exists(ws.corpus_dir() / "manifest.json"))
        throw std::runtime_error("no corpus at " + ws.corpus_dir().string() + "; run `sta gen-data` first");
    const LoadedCorpus corpus = load_corpus(ws.corpus_dir());
    switch (stage) {
        case Stage::vqvae: return train_vqvae(ws, corpus, options, out);
        case Stage::encoder: return train_encoder(ws, corpus, options, out);
        case Stage::diffusion: return train_diffusion(ws, corpus, options, out);
        case Stage::classifier: return train_classifier(ws, corpus, options, out);
    }
    throw std::logic_error("unhandled stage");
}

}  // namespace sta::pipeline
