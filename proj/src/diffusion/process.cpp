#include "sta/diffusion/process.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace sta::diffusion {

using nn::Graph;
using nn::Tensor;
using nn::Var;

namespace {

void check_clean(std::span<const int> k0, const Schedule& s) {
    for (std::size_t n = 0; n < k0.size(); ++n)
        if (k0[n] < 0 || k0[n] >= s.classes())
            throw std::out_of_range("diffusion: clean token " + std::to_string(k0[n]) + " at position " +
                                    std::to_string(n) + " outside [0, " + std::to_string(s.classes()) + ")");
}

void check_noisy(std::span<const int> kt, const Schedule& s) {
    for (std::size_t n = 0; n < kt.size(); ++n)
        if (kt[n] < 0 || kt[n] > s.classes())
            throw std::out_of_range("diffusion: token " + std::to_string(kt[n]) + " at position " +
                                    std::to_string(n) + " outside [0, " + std::to_string(s.classes()) + "]");
}

void check_t(int t, const Schedule& s) {
    if (t < 1 || t > s.steps())
        throw std::out_of_range("diffusion: t = " + std::to_string(t) + " outside [1, " + std::to_string(s.steps()) + "]");
}

}  // namespace

Field forward_marginal(std::span<const int> k0, int t, const Schedule& schedule) {
    check_t(t, schedule);
    check_clean(k0, schedule);
    const auto states = static_cast<std::size_t>(schedule.states());
    Field f({k0.size(), states});
    for (std::size_t n = 0; n < k0.size(); ++n)
        for (std::size_t s = 0; s < states; ++s) f.at(n, s) = schedule.cumulative_prob(t, k0[n], static_cast<int>(s));
    return f;
}

std::vector<int> forward_sample(std::span<const int> k0, int t, const Schedule& schedule, Rng& rng) {
    const Field f = forward_marginal(k0, t, schedule);
    std::vector<int> out(k0.size());
    for (std::size_t n = 0; n < k0.size(); ++n) out[n] = sample_categorical(f.row(n), rng);
    return out;
}

Field posterior(std::span<const int> kt, std::span<const int> k0, int t, const Schedule& schedule) {
    check_t(t, schedule);
    check_clean(k0, schedule);
    check_noisy(kt, schedule);
    if (kt.size() != k0.size()) throw std::invalid_argument("posterior: k_t and k0 lengths differ");
    const auto states = static_cast<std::size_t>(schedule.states());
    Field f({k0.size(), states});
    for (std::size_t n = 0; n < k0.size(); ++n) {
        double z = 0.0;
        for (std::size_t s = 0; s < states; ++s) {
            const int prev = static_cast<int>(s);
            f.at(n, s) = schedule.step_prob(t, prev, kt[n]) * schedule.cumulative_prob(t - 1, k0[n], prev);
            z += f.at(n, s);
        }
        if (!(z > 0.0)) {
            std::ostringstream os;
            os << "posterior: position " << n << " cannot reach k_t = " << kt[n] << " from k0 = " << k0[n] << " in " << t
               << " steps";
            throw std::domain_error(os.str());
        }
        for (std::size_t s = 0; s < states; ++s) f.at(n, s) /= z;
    }
    return f;
}

Field model_reverse(std::span<const int> kt, const Tensor& x0_probs, int t, const Schedule& schedule) {
    check_t(t, schedule);
    check_noisy(kt, schedule);
    const auto m = static_cast<std::size_t>(schedule.classes());
    if (x0_probs.rows() != kt.size() || x0_probs.cols() != m)
        throw std::invalid_argument("model_reverse: expected " + std::to_string(kt.size()) + "x" + std::to_string(m) +
                                    " clean-token probabilities, got " + x0_probs.shape_string());
    // sum_x0 p(x0) Q_t(s->k_t) Qbar_{t-1}(x0->s) / Qbar_t(x0->k_t), with the
    // inner sum over x0 collapsed using the mask-and-replace structure.
    const double ab = schedule.alpha_bar(t - 1), bb = schedule.beta_bar(t - 1), gb = schedule.gamma_bar(t - 1);
    Field f({kt.size(), m + 1});
    std::vector<double> w(m);
    for (std::size_t n = 0; n < kt.size(); ++n) {
        double wsum = 0.0;
        for (std::size_t x = 0; x < m; ++x) {
            const double reach = schedule.cumulative_prob(t, static_cast<int>(x), kt[n]);
            w[x] = reach > 0.0 ? x0_probs.at(n, x) / reach : 0.0;
            wsum += w[x];
        }
        double z = 0.0;
        for (std::size_t s = 0; s <= m; ++s) {
            const double u = s == m ? wsum * gb : w[s] * ab + wsum * bb;
            f.at(n, s) = schedule.step_prob(t, static_cast<int>(s), kt[n]) * u;
            z += f.at(n, s);
        }
        if (!(z > 0.0))
            throw std::domain_error("model_reverse: no predicted clean token can reach k_t at position " +
                                    std::to_string(n));
        for (std::size_t s = 0; s <= m; ++s) f.at(n, s) /= z;
    }
    return f;
}

LossTerms diffusion_loss(Graph& g, Var logits, std::span<const int> k0, std::span<const int> kt, std::span<const int> t,
                         const Schedule& schedule, double lambda, std::size_t samples) {
    if (lambda < 0) throw std::invalid_argument("diffusion_loss: lambda must be non-negative");
    if (samples == 0) throw std::invalid_argument("diffusion_loss: samples must be positive");
    const Tensor& L = g.value(logits);
    const bool logits_finite = L.all_finite();
    const std::size_t rows = k0.size();
    const auto m = static_cast<std::size_t>(schedule.classes());
    if (L.rows() != rows || L.cols() != m)
        throw std::invalid_argument("diffusion_loss: logits " + L.shape_string() + " but expected " +
                                    std::to_string(rows) + "x" + std::to_string(m));
    if (kt.size() != rows || t.size() != rows) throw std::invalid_argument("diffusion_loss: row counts disagree");
    check_clean(k0, schedule);
    check_noisy(kt, schedule);

    // Constants of the composed reverse distribution, per row:
    //   p(s) ∝ step(s->k_t) * (ab * w(s) + bb * W)   for clean s
    //   p(M) ∝ step(M->k_t) * gb * W
    // with w(x) = softmax(x) / Qbar_t(x->k_t) and W = sum_x w(x).
    Tensor reach_inv({rows, m}), step_to({rows, m + 1}), ab({rows, 1}), bb({rows, 1}), gb({rows, 1});
    Tensor target({rows, m + 1}), direct({rows, m});
    double entropy_term = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        check_t(t[r], schedule);
        if (t[r] == 1) {
            direct.at(r, static_cast<std::size_t>(k0[r])) = 1.0;
            // Keep the composed branch well defined; its weight is zero.
            for (std::size_t x = 0; x < m; ++x) reach_inv.at(r, x) = 1.0;
            for (std::size_t s = 0; s <= m; ++s) step_to.at(r, s) = 1.0;
            ab.at(r, 0) = 1.0;
            continue;
        }
        const Field q = posterior(kt.subspan(r, 1), k0.subspan(r, 1), t[r], schedule);
        for (std::size_t s = 0; s <= m; ++s) {
            target.at(r, s) = q.at(0, s);
            if (q.at(0, s) > 0.0) entropy_term += q.at(0, s) * std::log(q.at(0, s));
            step_to.at(r, s) = schedule.step_prob(t[r], static_cast<int>(s), kt[r]);
        }
        for (std::size_t x = 0; x < m; ++x) {
            const double reach = schedule.cumulative_prob(t[r], static_cast<int>(x), kt[r]);
            reach_inv.at(r, x) = reach > 0.0 ? 1.0 / reach : 0.0;
        }
        ab.at(r, 0) = schedule.alpha_bar(t[r] - 1);
        bb.at(r, 0) = schedule.beta_bar(t[r] - 1);
        gb.at(r, 0) = schedule.gamma_bar(t[r] - 1);
    }

    Var probs = g.softmax(logits);
    Var w = g.mul(probs, g.input(std::move(reach_inv)));
    Var wsum = g.matmul(w, g.input(Tensor({m, 1}, 1.0)));
    Var wsum_b = g.matmul(wsum, g.input(Tensor({1, m}, 1.0)));
    Var clean = g.add(g.mul(w, g.matmul(g.input(std::move(ab)), g.input(Tensor({1, m}, 1.0)))),
                      g.mul(wsum_b, g.matmul(g.input(std::move(bb)), g.input(Tensor({1, m}, 1.0)))));
    Var masked = g.mul(wsum, g.input(std::move(gb)));
    const Var parts[] = {clean, masked};
    Var unnorm = g.mul(g.concat_cols(parts), g.input(std::move(step_to)));
    Var log_z = g.log(g.matmul(unnorm, g.input(Tensor({m + 1, 1}, 1.0))));
    Var log_p = g.sub(g.log(unnorm), g.matmul(log_z, g.input(Tensor({1, m + 1}, 1.0))));

    Var cross = g.sum(g.mul(log_p, g.input(std::move(target))));
    Var nll = g.sum(g.mul(g.log_softmax(logits), g.input(std::move(direct))));
    Var variational = g.scale(g.add(g.scalar(entropy_term), g.scale(g.add(cross, nll), -1.0)),
                              1.0 / static_cast<double>(samples));
    Var aux = g.scale(g.cross_entropy(logits, k0), lambda);
    Var total = g.add(variational, aux);

    if (!std::isfinite(g.item(total))) {
        std::ostringstream os;
        os << "diffusion_loss: non-finite loss (variational=" << g.item(variational) << ", auxiliary=" << g.item(aux)
           << ", rows=" << rows << ", logits finite=" << logits_finite << ")";
        throw std::runtime_error(os.str());
    }
    return {total, variational, aux};
}

std::vector<int> sample(const DenoiseFn& denoise, int positions, const Schedule& schedule, Rng& rng,
                        const SamplerOptions& options) {
    if (positions < 1) throw std::invalid_argument("sample: need at least one position");
    const auto n = static_cast<std::size_t>(positions);
    const auto m = static_cast<std::size_t>(schedule.classes());
    const std::uint64_t base = rng();
    std::vector<int> k(n, schedule.mask());
    if (options.random_start) {
        Rng start(derive_seed(base, {0}));
        for (int& v : k) v = uniform_int(start, 0, schedule.classes() - 1);
    } else {
        schedule.require_terminal_mask();
    }

    for (int t = schedule.steps(); t >= 1; --t) {
        Tensor probs = denoise(k, t);
        if (probs.rows() != n || probs.cols() != m)
            throw std::invalid_argument("sample: denoiser returned " + probs.shape_string() + ", expected " +
                                        std::to_string(n) + "x" + std::to_string(m));
        for (std::size_t r = 0; r < n; ++r) {
            auto row = probs.row(r);
            double mx = row[0];
            for (double v : row) mx = std::max(mx, v);
            double z = 0.0;
            for (double& v : row) z += (v = std::exp(v - mx));
            for (double& v : row) v /= z;
        }
        const Field rev = t == 1 ? probs : model_reverse(k, probs, t, schedule);
        for (std::size_t r = 0; r < n; ++r) {
            Rng pos(derive_seed(base, {static_cast<std::uint64_t>(t), r + 1}));
            k[r] = sample_categorical(rev.row(r), pos);
        }
    }
    for (std::size_t r = 0; r < n; ++r)
        if (k[r] == schedule.mask())
            throw std::logic_error("sample: [MASK] left at position " + std::to_string(r) + " after the last step");
    return k;
}

}  // namespace sta::diffusion
