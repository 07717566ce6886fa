#include "sta/pipeline/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace sta::pipeline {
namespace {

class Writer {
public:
    void bytes(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
    template <typename T>
    void le(T v) {
        using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint8_t>>;
        U u = std::bit_cast<U>(v);
        for (std::size_t i = 0; i < sizeof(U); ++i) buf_.push_back(static_cast<char>((u >> (8 * i)) & 0xFF));
    }
    void str(const std::string& s) {
        le<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }
    const std::string& data() const { return buf_; }

private:
    std::string buf_;
};

class Reader {
public:
    Reader(std::string data, std::string origin) : buf_(std::move(data)), origin_(std::move(origin)) {}
    void need(std::size_t n) const {
        if (pos_ + n > buf_.size()) throw std::runtime_error(origin_ + ": truncated checkpoint");
    }
    template <typename T>
    T le() {
        using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint8_t>>;
        need(sizeof(U));
        U u = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) u |= static_cast<U>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
        pos_ += sizeof(U);
        return std::bit_cast<T>(u);
    }
    std::string str() {
        const auto n = le<std::uint32_t>();
        need(n);
        std::string s = buf_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::string raw(std::size_t n) {
        need(n);
        std::string s = buf_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == buf_.size(); }

private:
    std::string buf_;
    std::string origin_;
    std::size_t pos_ = 0;
};

void put_doubles(Writer& w, const std::vector<double>& v) {
    w.le<std::uint32_t>(static_cast<std::uint32_t>(v.size()));
    for (double x : v) w.le<double>(x);
}

std::vector<double> get_doubles(Reader& r) {
    std::vector<double> v(r.le<std::uint32_t>());
    for (double& x : v) x = r.le<double>();
    return v;
}

}  // namespace

void Checkpoint::put(std::string name, nn::Tensor value) {
    for (auto& [n, t] : tensors)
        if (n == name) {
            t = std::move(value);
            return;
        }
    tensors.emplace_back(std::move(name), std::move(value));
}

const nn::Tensor* Checkpoint::find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return &t;
    return nullptr;
}

const nn::Tensor& Checkpoint::get(const std::string& name) const {
    if (const auto* t = find(name)) return *t;
    throw std::runtime_error("checkpoint (" + stage + "): missing tensor '" + name + "'");
}

const std::string& Checkpoint::meta_at(const std::string& key) const {
    const auto it = meta.find(key);
    if (it == meta.end()) throw std::runtime_error("checkpoint (" + stage + "): missing metadata '" + key + "'");
    return it->second;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    Writer w;
    w.bytes("STAK", 4);
    w.le<std::uint32_t>(kCheckpointVersion);
    w.str(ck.stage);
    w.str(ck.digest);
    w.le<std::uint32_t>(static_cast<std::uint32_t>(ck.meta.size()));
    for (const auto& [k, v] : ck.meta) {
        w.str(k);
        w.str(v);
    }
    w.le<std::uint8_t>(ck.schedule ? 1 : 0);
    if (ck.schedule) {
        w.le<std::uint32_t>(static_cast<std::uint32_t>(ck.schedule->steps));
        w.le<std::uint32_t>(static_cast<std::uint32_t>(ck.schedule->classes));
        w.le<std::uint8_t>(ck.schedule->spec.kind == diffusion::ScheduleSpec::Kind::linear ? 0 : 1);
        w.le<double>(ck.schedule->spec.gamma_end);
        w.le<double>(ck.schedule->spec.beta_end);
        put_doubles(w, ck.schedule->spec.alpha);
        put_doubles(w, ck.schedule->spec.gamma);
    }
    w.le<std::uint32_t>(static_cast<std::uint32_t>(ck.tensors.size()));
    for (const auto& [name, t] : ck.tensors) {
        w.str(name);
        w.le<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
        for (std::size_t d : t.shape()) w.le<std::uint64_t>(d);
        for (double v : t.values()) w.le<float>(static_cast<float>(v));
    }

    std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary);
        f.write(w.data().data(), static_cast<std::streamsize>(w.data().size()));
        if (!f) throw std::runtime_error("cannot write checkpoint " + path.string());
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const std::optional<std::string>& expected_digest) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read checkpoint " + path.string());
    std::stringstream ss;
    ss << f.rdbuf();
    Reader r(ss.str(), path.string());
    const std::string where = "checkpoint " + path.string();
    if (r.raw(4) != "STAK") throw std::runtime_error(where + ": bad magic (not a STAK file)");
    const auto version = r.le<std::uint32_t>();
    if (version != kCheckpointVersion)
        throw std::runtime_error(where + ": unsupported format version " + std::to_string(version));
    Checkpoint ck;
    ck.stage = r.str();
    ck.digest = r.str();
    if (expected_digest && *expected_digest != ck.digest)
        throw std::runtime_error(where + " (" + ck.stage + ") was written under config digest " + ck.digest +
                                 ", current config digest is " + *expected_digest);
    for (auto n = r.le<std::uint32_t>(); n > 0; --n) {
        std::string k = r.str();
        ck.meta[k] = r.str();
    }
    if (r.le<std::uint8_t>()) {
        ScheduleBlock b;
        b.steps = static_cast<int>(r.le<std::uint32_t>());
        b.classes = static_cast<int>(r.le<std::uint32_t>());
        b.spec.kind = r.le<std::uint8_t>() == 0 ? diffusion::ScheduleSpec::Kind::linear : diffusion::ScheduleSpec::Kind::per_step;
        b.spec.gamma_end = r.le<double>();
        b.spec.beta_end = r.le<double>();
        b.spec.alpha = get_doubles(r);
        b.spec.gamma = get_doubles(r);
        ck.schedule = std::move(b);
    }
    for (auto n = r.le<std::uint32_t>(); n > 0; --n) {
        std::string name = r.str();
        std::vector<std::size_t> shape(r.le<std::uint32_t>());
        for (auto& d : shape) d = static_cast<std::size_t>(r.le<std::uint64_t>());
        std::vector<double> values(nn::element_count(shape));
        for (double& v : values) v = r.le<float>();
        ck.tensors.emplace_back(std::move(name), nn::Tensor(std::move(shape), std::move(values)));
    }
    if (!r.done()) throw std::runtime_error(where + ": trailing bytes after the tensor table");
    return ck;
}

void store_parameters(Checkpoint& ck, const std::string& prefix, const nn::ParameterStore& params) {
    for (const auto& p : params) ck.put(prefix + p.name, p.value);
}

void restore_parameters(const Checkpoint& ck, const std::string& prefix, nn::ParameterStore& params) {
    for (auto& p : params) {
        const nn::Tensor& t = ck.get(prefix + p.name);
        if (!t.same_shape(p.value))
            throw std::runtime_error("checkpoint (" + ck.stage + "): tensor '" + prefix + p.name + "' has shape " +
                                     t.shape_string() + ", model expects " + p.value.shape_string());
        p.value = t;
    }
}

void store_optimizer(Checkpoint& ck, const std::string& prefix, const nn::ParameterStore& params,
                     const nn::OptimizerState& state) {
    for (std::size_t i = 0; i < params.size(); ++i) {
        ck.put(prefix + "m." + params[i].name, nn::Tensor(params[i].value.shape(), state.m[i]));
        ck.put(prefix + "v." + params[i].name, nn::Tensor(params[i].value.shape(), state.v[i]));
    }
    ck.meta[prefix + "step"] = std::to_string(state.step);
}

void restore_optimizer(const Checkpoint& ck, const std::string& prefix, const nn::ParameterStore& params,
                       nn::OptimizerState& state) {
    for (std::size_t i = 0; i < params.size(); ++i) {
        state.m[i] = ck.get(prefix + "m." + params[i].name).values();
        state.v[i] = ck.get(prefix + "v." + params[i].name).values();
        if (state.m[i].size() != params[i].value.size() || state.v[i].size() != params[i].value.size())
            throw std::runtime_error("checkpoint (" + ck.stage + "): optimizer moments for '" + params[i].name +
                                     "' have the wrong size");
    }
    state.step = std::stoull(ck.meta_at(prefix + "step"));
}

}  // namespace sta::pipeline
