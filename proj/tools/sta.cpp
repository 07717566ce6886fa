#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "sta/pipeline/commands.hpp"

namespace fs = std::filesystem;
using namespace sta;
using namespace sta::pipeline;

namespace {

struct Common {
    std::string out = "run";
    std::string config;
    std::optional<std::uint64_t> seed;
    std::vector<std::string> overrides;
    bool allow_mismatch = false;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--out", c.out, "Run directory")->capture_default_str();
    cmd->add_option("--config", c.config, "Config file (default: <out>/config.resolved when present)");
    cmd->add_option("--seed", c.seed, "Run seed");
    cmd->add_option("--set", c.overrides, "Override a config key, key=value")->type_name("KEY=VALUE");
    cmd->add_flag("--allow-mismatch", c.allow_mismatch, "Accept checkpoints and samples from a different config");
}

// --seed is the run seed for gen-data and train, and the sampling seed
// elsewhere, so it only touches the config (and its digest) in the former.
Workspace workspace(const Common& c, bool seed_is_config) {
    Workspace ws{c.out, {}};
    if (!c.config.empty())
        ws.config = load_config(c.config);
    else if (fs::exists(ws.root / "config.resolved"))
        ws.config = load_config(ws.root / "config.resolved");
    if (c.seed && seed_is_config) ws.config.seed = *c.seed;
    for (const auto& kv : c.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
        set_config_value(ws.config, kv.substr(0, eq), kv.substr(eq + 1));
    }
    ws.config.validate();
    return ws;
}

void write_report(const nlohmann::json& report, const std::string& path) {
    if (path.empty()) {
        std::cout << report.dump(2) << '\n';
        return;
    }
    std::ofstream(path) << report.dump(2) << '\n';
    std::cout << "report written to " << path << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Speech-to-image synthesis on a synthetic shapes corpus"};
    app.require_subcommand(1);

    Common common;
    bool force = false;
    auto* gen = app.add_subcommand("gen-data", "Generate the synthetic corpus");
    add_common(gen, common);
    gen->add_flag("--force", force, "Overwrite a non-empty corpus directory");

    std::string stage_name;
    TrainOptions train_opts;
    auto* train = app.add_subcommand("train", "Train one stage");
    add_common(train, common);
    train->add_option("--stage", stage_name, "vqvae | encoder | diffusion | classifier")->required();
    train->add_flag("--resume", train_opts.resume, "Continue from the last saved epoch");
    train->add_option("--stop-after", train_opts.stop_after, "Stop after this many epochs");

    SampleRequest req;
    std::string caption, scene, split, dest;
    auto* sample = app.add_subcommand("sample", "Generate images from a caption");
    add_common(sample, common);
    auto* cap_opt = sample->add_option("--caption", caption, "Caption file (.stac)");
    auto* scene_opt = sample->add_option("--scene", scene, "Synthesise a caption, e.g. shape=circle,color=red,size=small,position=4");
    auto* split_opt = sample->add_option("--split", split, "Generate for every caption of a corpus split");
    cap_opt->excludes(scene_opt)->excludes(split_opt);
    scene_opt->excludes(split_opt);
    sample->add_option("--language", req.language)->capture_default_str();
    sample->add_option("--speaker", req.speaker)->capture_default_str();
    sample->add_option("--count", req.count)->capture_default_str();
    sample->add_option("--dest", dest, "Output directory (default: <out>/samples)");

    std::string generated, reference, report_path;
    EvaluateOptions eval_opts;
    auto* evaluate = app.add_subcommand("evaluate", "Score generated images against reference images");
    add_common(evaluate, common);
    evaluate->add_option("--generated", generated)->required();
    evaluate->add_option("--reference", reference, "Reference images (default: <corpus>/images)");
    evaluate->add_option("--k", eval_opts.k, "Recall cut-off (default: eval.k)");
    evaluate->add_option("--report", report_path, "Write the JSON report here instead of stdout");

    bool untrained = false;
    auto* retrieval = app.add_subcommand("retrieval-eval", "Speech/image retrieval with the encoder");
    add_common(retrieval, common);
    retrieval->add_flag("--untrained", untrained, "Score a freshly initialised encoder");
    retrieval->add_option("--report", report_path, "Write the JSON report here instead of stdout");

    CLI11_PARSE(app, argc, argv);

    try {
        const Workspace ws = workspace(common, gen->parsed() || train->parsed());
        if (gen->parsed()) {
            cmd_gen_data(ws, force, std::cout);
        } else if (train->parsed()) {
            train_opts.allow_mismatch = common.allow_mismatch;
            cmd_train(ws, parse_stage(stage_name), train_opts, std::cout);
        } else if (sample->parsed()) {
            const std::uint64_t seed = common.seed.value_or(ws.config.seed);
            const fs::path to = dest.empty() ? ws.root / "samples" : fs::path(dest);
            if (!split.empty()) {
                cmd_sample_split(ws, parse_split(split), to, seed, common.allow_mismatch, std::cout);
            } else {
                if (!caption.empty()) req.caption = caption;
                if (!scene.empty()) req.scene = SceneSpec::parse(scene);
                req.seed = seed;
                req.dest = to;
                req.allow_mismatch = common.allow_mismatch;
                cmd_sample(ws, req, std::cout);
            }
        } else if (evaluate->parsed()) {
            eval_opts.allow_mismatch = common.allow_mismatch;
            eval_opts.seed = common.seed.value_or(ws.config.seed);
            const fs::path ref = reference.empty() ? ws.corpus_dir() / "images" : fs::path(reference);
            write_report(cmd_evaluate(ws, generated, ref, eval_opts, std::cout), report_path);
        } else if (retrieval->parsed()) {
            write_report(cmd_retrieval_eval(ws, untrained, common.allow_mismatch, std::cout), report_path);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
