#include "sta/pipeline/commands.hpp"

#include <ostream>
#include <set>
#include <stdexcept>

#include "sta/pipeline/models.hpp"

namespace sta::pipeline {

namespace fs = std::filesystem;

std::string_view name_of(Stage s) {
    switch (s) {
        case Stage::vqvae: return "vqvae";
        case Stage::encoder: return "encoder";
        case Stage::diffusion: return "diffusion";
        case Stage::classifier: return "classifier";
    }
    return "?";
}

Stage parse_stage(std::string_view s) {
    for (Stage st : {Stage::vqvae, Stage::encoder, Stage::diffusion, Stage::classifier})
        if (name_of(st) == s) return st;
    throw std::invalid_argument("unknown stage '" + std::string(s) + "' (expected vqvae, encoder, diffusion or classifier)");
}

fs::path Workspace::corpus_dir() const {
    return config.corpus_dir.empty() ? root / "corpus" : fs::path(config.corpus_dir);
}
fs::path Workspace::checkpoint(Stage s) const { return root / "checkpoints" / (std::string(name_of(s)) + ".stak"); }
fs::path Workspace::last_checkpoint(Stage s) const {
    return root / "checkpoints" / (std::string(name_of(s)) + ".last.stak");
}
fs::path Workspace::log_path(Stage s) const { return root / "logs" / (std::string(name_of(s)) + ".jsonl"); }

std::uint64_t stage_seed(const PipelineConfig& config, Stage stage) {
    return derive_seed(config.seed, {0x57a9e, static_cast<std::uint64_t>(stage)});
}

Checkpoint require_checkpoint(const Workspace& ws, Stage stage, bool allow_mismatch) {
    const fs::path p = ws.checkpoint(stage);
    if (!fs::exists(p))
        throw std::runtime_error("missing " + std::string(name_of(stage)) + " checkpoint (" + p.string() +
                                 "); run `sta train --stage " + std::string(name_of(stage)) + "` first");
    Checkpoint ck = load_checkpoint(p, allow_mismatch ? std::nullopt : std::optional(ws.config.digest()));
    if (ck.stage != name_of(stage))
        throw std::runtime_error(p.string() + " holds stage '" + ck.stage + "', expected '" + std::string(name_of(stage)) + "'");
    return ck;
}

vq::VqCodec load_vq(const Workspace& ws, bool allow_mismatch) {
    vq::VqCodec codec(ws.config.vq, 0);
    restore_parameters(require_checkpoint(ws, Stage::vqvae, allow_mismatch), "", codec.params());
    return codec;
}

encoder::SpeechEncoder load_encoder(const Workspace& ws, bool allow_mismatch) {
    encoder::SpeechEncoder enc(ws.config.encoder, 0);
    restore_parameters(require_checkpoint(ws, Stage::encoder, allow_mismatch), "", enc.params());
    return enc;
}

denoiser::Denoiser load_denoiser(const Workspace& ws, bool allow_mismatch) {
    const Checkpoint ck = require_checkpoint(ws, Stage::diffusion, allow_mismatch);
    denoiser::Denoiser model(ws.config.denoiser_config(), 0);
    restore_parameters(ck, "", model.params());
    if (ck.schedule) {
        const ScheduleBlock want{ws.config.diffusion.steps, ws.config.vq.codebook_size, ws.config.diffusion.schedule};
        if (!(*ck.schedule == want) && !allow_mismatch)
            throw std::runtime_error("diffusion checkpoint was trained with a different schedule");
    }
    return model;
}

metrics::EvalClassifier load_classifier(const Workspace& ws, bool allow_mismatch) {
    metrics::EvalClassifier clf(ws.config.classifier, 0);
    restore_parameters(require_checkpoint(ws, Stage::classifier, allow_mismatch), "", clf.params());
    return clf;
}

encoder::TeacherEmbedder make_teacher(const PipelineConfig& config) {
    return encoder::TeacherEmbedder(config.encoder.d_emb, config.teacher_seed, config.data.image_size);
}

GenDataSummary cmd_gen_data(const Workspace& ws, bool force, std::ostream& out) {
    const fs::path dir = ws.corpus_dir();
    if (fs::exists(dir) && !fs::is_empty(dir)) {
        if (!force) throw std::runtime_error("corpus directory " + dir.string() + " is not empty (use --force to overwrite)");
        fs::remove_all(dir);
    }
    CorpusConfig cc = ws.config.data;
    const CorpusManifest m = generate_corpus(cc, dir);
    archive_config(ws.config, dir);

    GenDataSummary s;
    s.scenes = static_cast<int>(m.scene_count());
    s.records = static_cast<int>(m.records.size());
    s.captions = static_cast<int>(m.caption_count());
    s.languages = m.config.languages;
    std::set<int> seen;
    for (const auto& r : m.records)
        if (seen.insert(r.scene).second) ++s.scenes_per_split[static_cast<int>(r.split)];
    out << "corpus " << dir.string() << ": " << s.scenes << " scenes, " << s.records << " records, " << s.captions
        << " captions, languages";
    for (const auto& l : s.languages) out << ' ' << l;
    out << "; scenes train/dev/test " << s.scenes_per_split[0] << '/' << s.scenes_per_split[1] << '/'
        << s.scenes_per_split[2] << '\n';
    return s;
}

}  // namespace sta::pipeline
