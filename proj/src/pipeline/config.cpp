#include "sta/pipeline/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

namespace sta::pipeline {
namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::string format(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

template <typename T>
T parse_number(std::string_view text) {
    T v{};
    const auto r = std::from_chars(text.data(), text.data() + text.size(), v);
    if (r.ec != std::errc() || r.ptr != text.data() + text.size())
        throw std::invalid_argument("not a valid number: '" + std::string(text) + "'");
    return v;
}

bool parse_bool(std::string_view t) {
    if (t == "true" || t == "1") return true;
    if (t == "false" || t == "0") return false;
    throw std::invalid_argument("not a boolean: '" + std::string(t) + "'");
}

std::vector<double> parse_list(std::string_view t) {
    std::vector<double> out;
    std::stringstream ss{std::string(t)};
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_number<double>(trim(item)));
    return out;
}

std::string join(const std::vector<double>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format(v[i]);
    return s;
}

struct Key {
    std::string name;
    std::function<void(PipelineConfig&, std::string_view)> set;
    std::function<std::string(const PipelineConfig&)> get;
};

template <typename T>
Key number(std::string name, std::function<T&(PipelineConfig&)> at) {
    return {std::move(name), [at](PipelineConfig& c, std::string_view v) { at(c) = parse_number<T>(v); },
            [at](const PipelineConfig& c) {
                const T& v = at(const_cast<PipelineConfig&>(c));
                if constexpr (std::is_floating_point_v<T>) return format(v);
                else return std::to_string(v);
            }};
}

void training_keys(std::vector<Key>& keys, const std::string& section, StageTraining PipelineConfig::*stage) {
    keys.push_back(number<double>(section + ".lr", [stage](PipelineConfig& c) -> double& { return (c.*stage).lr; }));
    keys.push_back(number<double>(section + ".beta1", [stage](PipelineConfig& c) -> double& { return (c.*stage).beta1; }));
    keys.push_back(number<double>(section + ".beta2", [stage](PipelineConfig& c) -> double& { return (c.*stage).beta2; }));
    keys.push_back(number<double>(section + ".eps", [stage](PipelineConfig& c) -> double& { return (c.*stage).eps; }));
    keys.push_back(number<double>(section + ".weight_decay",
                                  [stage](PipelineConfig& c) -> double& { return (c.*stage).weight_decay; }));
    keys.push_back(number<int>(section + ".batch", [stage](PipelineConfig& c) -> int& { return (c.*stage).batch; }));
    keys.push_back(number<int>(section + ".epochs", [stage](PipelineConfig& c) -> int& { return (c.*stage).epochs; }));
    keys.push_back(number<int>(section + ".patience", [stage](PipelineConfig& c) -> int& { return (c.*stage).patience; }));
}

const std::vector<Key>& registry() {
    static const std::vector<Key> keys = [] {
        using C = PipelineConfig;
        std::vector<Key> k;
        k.push_back(number<std::uint64_t>("run.seed", [](C& c) -> std::uint64_t& { return c.seed; }));
        k.push_back({"data.dir", [](C& c, std::string_view v) { c.corpus_dir = std::string(v); },
                     [](const C& c) { return c.corpus_dir; }});
        k.push_back(number<int>("data.scenes", [](C& c) -> int& { return c.data.n_scenes; }));
        k.push_back({"data.languages",
                     [](C& c, std::string_view v) {
                         c.data.languages.clear();
                         std::stringstream ss{std::string(v)};
                         std::string item;
                         while (std::getline(ss, item, ',')) c.data.languages.push_back(trim(item));
                     },
                     [](const C& c) {
                         std::string s;
                         for (std::size_t i = 0; i < c.data.languages.size(); ++i) s += (i ? "," : "") + c.data.languages[i];
                         return s;
                     }});
        k.push_back(number<int>("data.speakers_per_caption", [](C& c) -> int& { return c.data.speakers_per_caption; }));
        k.push_back(number<int>("data.speaker_pool", [](C& c) -> int& { return c.data.speaker_pool; }));
        k.push_back(number<std::uint64_t>("data.seed", [](C& c) -> std::uint64_t& { return c.data.seed; }));
        k.push_back(number<int>("data.image_size", [](C& c) -> int& { return c.data.image_size; }));
        k.push_back(number<double>("data.test_fraction", [](C& c) -> double& { return c.data.test_fraction; }));
        k.push_back(number<double>("data.dev_fraction", [](C& c) -> double& { return c.data.dev_fraction; }));
        k.push_back(number<int>("data.max_repeats", [](C& c) -> int& { return c.data.max_repeats; }));

        k.push_back(number<int>("vqvae.stride", [](C& c) -> int& { return c.vq.stride; }));
        k.push_back(number<int>("vqvae.hidden", [](C& c) -> int& { return c.vq.hidden; }));
        k.push_back(number<int>("vqvae.d_code", [](C& c) -> int& { return c.vq.d_code; }));
        k.push_back(number<int>("vqvae.codebook_size", [](C& c) -> int& { return c.vq.codebook_size; }));
        k.push_back(number<double>("vqvae.commitment", [](C& c) -> double& { return c.vq.commitment; }));
        k.push_back(number<int>("vqvae.dead_code_steps", [](C& c) -> int& { return c.vq.dead_code_steps; }));
        k.push_back(number<double>("vqvae.jitter", [](C& c) -> double& { return c.vq_jitter; }));
        training_keys(k, "vqvae", &C::vq_train);

        k.push_back(number<int>("encoder.width", [](C& c) -> int& { return c.encoder.width; }));
        k.push_back(number<int>("encoder.heads", [](C& c) -> int& { return c.encoder.heads; }));
        k.push_back(number<int>("encoder.layers", [](C& c) -> int& { return c.encoder.layers; }));
        k.push_back(number<int>("encoder.ff_hidden", [](C& c) -> int& { return c.encoder.ff_hidden; }));
        k.push_back(number<int>("encoder.d_emb", [](C& c) -> int& { return c.encoder.d_emb; }));
        k.push_back(number<int>("encoder.conv_kernel", [](C& c) -> int& { return c.encoder.conv_kernel; }));
        k.push_back(number<double>("encoder.init_inv_tau", [](C& c) -> double& { return c.encoder.init_inv_tau; }));
        k.push_back(number<double>("encoder.max_inv_tau", [](C& c) -> double& { return c.encoder.max_inv_tau; }));
        k.push_back(number<std::uint64_t>("encoder.teacher_seed", [](C& c) -> std::uint64_t& { return c.teacher_seed; }));
        training_keys(k, "encoder", &C::encoder_train);

        k.push_back(number<int>("diffusion.T", [](C& c) -> int& { return c.diffusion.steps; }));
        k.push_back({"diffusion.schedule",
                     [](C& c, std::string_view v) {
                         if (v == "linear") c.diffusion.schedule.kind = diffusion::ScheduleSpec::Kind::linear;
                         else if (v == "per_step") c.diffusion.schedule.kind = diffusion::ScheduleSpec::Kind::per_step;
                         else throw std::invalid_argument("schedule must be linear or per_step");
                     },
                     [](const C& c) {
                         return std::string(c.diffusion.schedule.kind == diffusion::ScheduleSpec::Kind::linear ? "linear"
                                                                                                               : "per_step");
                     }});
        k.push_back(number<double>("diffusion.gamma_end", [](C& c) -> double& { return c.diffusion.schedule.gamma_end; }));
        k.push_back(number<double>("diffusion.beta_end", [](C& c) -> double& { return c.diffusion.schedule.beta_end; }));
        k.push_back({"diffusion.alpha", [](C& c, std::string_view v) { c.diffusion.schedule.alpha = parse_list(v); },
                     [](const C& c) { return join(c.diffusion.schedule.alpha); }});
        k.push_back({"diffusion.gamma", [](C& c, std::string_view v) { c.diffusion.schedule.gamma = parse_list(v); },
                     [](const C& c) { return join(c.diffusion.schedule.gamma); }});
        k.push_back(number<double>("diffusion.lambda", [](C& c) -> double& { return c.diffusion.lambda; }));
        k.push_back(number<std::uint64_t>("diffusion.warmup", [](C& c) -> std::uint64_t& { return c.diffusion.warmup; }));
        k.push_back(number<double>("diffusion.condition_noise",
                                   [](C& c) -> double& { return c.diffusion.condition_noise; }));
        k.push_back({"diffusion.freeze_condition",
                     [](C& c, std::string_view v) { c.diffusion.freeze_condition = parse_bool(v); },
                     [](const C& c) { return std::string(c.diffusion.freeze_condition ? "true" : "false"); }});
        k.push_back({"diffusion.conditioning",
                     [](C& c, std::string_view v) {
                         if (v == "adaln") c.diffusion.conditioning = denoiser::Conditioning::adaln;
                         else if (v == "additive") c.diffusion.conditioning = denoiser::Conditioning::additive;
                         else throw std::invalid_argument("conditioning must be adaln or additive");
                     },
                     [](const C& c) {
                         return std::string(c.diffusion.conditioning == denoiser::Conditioning::adaln ? "adaln" : "additive");
                     }});
        k.push_back(number<int>("diffusion.width", [](C& c) -> int& { return c.diffusion.width; }));
        k.push_back(number<int>("diffusion.heads", [](C& c) -> int& { return c.diffusion.heads; }));
        k.push_back(number<int>("diffusion.blocks", [](C& c) -> int& { return c.diffusion.blocks; }));
        k.push_back(number<int>("diffusion.ff_hidden", [](C& c) -> int& { return c.diffusion.ff_hidden; }));
        training_keys(k, "diffusion", &C::diffusion_train);

        k.push_back(number<int>("classifier.conv1", [](C& c) -> int& { return c.classifier.conv1; }));
        k.push_back(number<int>("classifier.conv2", [](C& c) -> int& { return c.classifier.conv2; }));
        k.push_back(number<int>("classifier.features", [](C& c) -> int& { return c.classifier.features; }));
        k.push_back(number<double>("classifier.noise", [](C& c) -> double& { return c.classifier_noise; }));
        k.push_back(number<double>("classifier.jitter", [](C& c) -> double& { return c.classifier_jitter; }));
        training_keys(k, "classifier", &C::classifier_train);

        k.push_back(number<int>("eval.k", [](C& c) -> int& { return c.eval.k; }));
        k.push_back(number<int>("eval.is_splits", [](C& c) -> int& { return c.eval.is_splits; }));
        k.push_back(number<int>("eval.samples_per_caption", [](C& c) -> int& { return c.eval.samples_per_caption; }));
        return k;
    }();
    return keys;
}

}  // namespace

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h) {
    for (unsigned char b : bytes) h = (h ^ b) * 1099511628211ULL;
    return h;
}

std::string hex64(std::uint64_t v) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xF];
    return s;
}

PipelineConfig::PipelineConfig() {
    vq_train = {2e-3, 0.9, 0.99, 1e-8, 0.0, 8, 80, 0};
    encoder_train = {2e-3, 0.9, 0.999, 1e-8, 1e-6, 16, 30, 5};
    diffusion_train = {3e-3, 0.9, 0.96, 1e-8, 0.01, 16, 100, 0};
    classifier_train = {5e-3, 0.9, 0.999, 1e-8, 1e-4, 16, 300, 0};
}

denoiser::DenoiserConfig PipelineConfig::denoiser_config() const {
    denoiser::DenoiserConfig d;
    d.classes = vq.codebook_size;
    const int side = data.image_size / vq.stride;
    d.positions = side * side;
    d.steps = diffusion.steps;
    d.d_cond = encoder.d_emb;
    d.width = diffusion.width;
    d.heads = diffusion.heads;
    d.blocks = diffusion.blocks;
    d.ff_hidden = diffusion.ff_hidden;
    d.conditioning = diffusion.conditioning;
    return d;
}

diffusion::Schedule PipelineConfig::schedule() const {
    return diffusion::Schedule(diffusion.steps, vq.codebook_size, diffusion.schedule);
}

void PipelineConfig::validate() const {
    auto require = [](bool ok, const std::string& what) {
        if (!ok) throw std::invalid_argument("config: " + what);
    };
    require(!data.languages.empty(), "data.languages must name at least one language");
    for (const auto& l : data.languages) language(l);  // throws for unregistered languages
    require(data.image_size == vq.image_size, "data.image_size and the VQ image size differ");
    require(classifier.image_size == data.image_size, "classifier image size differs from data.image_size");
    for (const StageTraining* s : {&vq_train, &encoder_train, &diffusion_train, &classifier_train}) {
        require(s->lr > 0 && s->batch >= 1 && s->epochs >= 1 && s->patience >= 0,
                "training sections need lr > 0, batch >= 1, epochs >= 1, patience >= 0");
        require(s->beta1 >= 0 && s->beta1 < 1 && s->beta2 >= 0 && s->beta2 < 1 && s->eps > 0 && s->weight_decay >= 0,
                "optimizer settings out of range");
    }
    require(encoder_train.batch >= 2, "encoder.batch must be at least 2");
    require(diffusion.lambda >= 0, "diffusion.lambda must be non-negative");
    require(diffusion.condition_noise >= 0, "diffusion.condition_noise must be non-negative");
    require(eval.k >= 1 && eval.is_splits >= 1 && eval.samples_per_caption >= 1, "eval settings must be positive");
    require(vq_jitter >= 0 && classifier_jitter >= 0 && classifier_noise >= 0, "augmentation strengths must be >= 0");
    (void)schedule();  // validates the schedule against T and M
    (void)vq::VqCodec(vq, 0);
}

std::string PipelineConfig::to_text() const {
    std::string out;
    for (const Key& k : registry()) out += k.name + " = " + k.get(*this) + "\n";
    return out;
}

std::string PipelineConfig::digest() const { return hex64(fnv1a(to_text())); }

std::vector<std::string> config_keys() {
    std::vector<std::string> names;
    for (const Key& k : registry()) names.push_back(k.name);
    return names;
}

void set_config_value(PipelineConfig& config, std::string_view key, std::string_view value) {
    for (const Key& k : registry())
        if (k.name == key) {
            try {
                k.set(config, trim(value));
            } catch (const std::invalid_argument& e) {
                throw std::invalid_argument("config key '" + std::string(key) + "': " + e.what());
            }
            return;
        }
    throw std::invalid_argument("unknown config key '" + std::string(key) + "'");
}

PipelineConfig parse_config(std::string_view text, PipelineConfig base) {
    std::stringstream in{std::string(text)};
    std::string line;
    int number = 0;
    while (std::getline(in, line)) {
        ++number;
        const std::string body = trim(line.substr(0, line.find('#')));
        if (body.empty()) continue;
        const auto eq = body.find('=');
        try {
            if (eq == std::string::npos) throw std::invalid_argument("expected 'key = value'");
            set_config_value(base, trim(std::string_view(body).substr(0, eq)), std::string_view(body).substr(eq + 1));
        } catch (const std::invalid_argument& e) {
            throw std::invalid_argument("config line " + std::to_string(number) + ": " + e.what());
        }
    }
    base.validate();
    return base;
}

PipelineConfig load_config(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot read config " + path.string());
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config(ss.str());
}

void archive_config(const PipelineConfig& config, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::ofstream f(dir / "config.resolved", std::ios::binary);
    f << "# digest " << config.digest() << "\n" << config.to_text();
    if (!f) throw std::runtime_error("cannot write " + (dir / "config.resolved").string());
}

}  // namespace sta::pipeline
