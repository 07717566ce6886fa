#include "sta/diffusion/schedule.hpp"

#include <cmath>
#include <stdexcept>

namespace sta::diffusion {

ScheduleSpec ScheduleSpec::linear(double gamma_end, double beta_end) {
    ScheduleSpec s;
    s.kind = Kind::linear;
    s.gamma_end = gamma_end;
    s.beta_end = beta_end;
    return s;
}

ScheduleSpec ScheduleSpec::per_step(std::vector<double> alpha, std::vector<double> gamma) {
    ScheduleSpec s;
    s.kind = Kind::per_step;
    s.alpha = std::move(alpha);
    s.gamma = std::move(gamma);
    return s;
}

Schedule::Schedule(int steps, int classes, const ScheduleSpec& spec) : steps_(steps), classes_(classes), spec_(spec) {
    if (steps < 1) throw std::invalid_argument("schedule: T must be at least 1");
    if (classes < 1) throw std::invalid_argument("schedule: need at least one clean state");
    const auto n = static_cast<std::size_t>(steps) + 1;
    const double m = classes;
    alpha_.assign(n, 1.0);
    beta_.assign(n, 0.0);
    gamma_.assign(n, 0.0);

    if (spec.kind == ScheduleSpec::Kind::linear) {
        if (!(spec.gamma_end >= 0 && spec.beta_end >= 0 && spec.gamma_end + spec.beta_end <= 1.0))
            throw std::invalid_argument("schedule: linear endpoints need gamma_end, beta_end >= 0 and a sum <= 1");
        for (int t = 1; t <= steps; ++t) {
            const double f1 = static_cast<double>(t) / steps, f0 = static_cast<double>(t - 1) / steps;
            const double ab1 = 1.0 - (spec.gamma_end + spec.beta_end) * f1;
            const double ab0 = 1.0 - (spec.gamma_end + spec.beta_end) * f0;
            const double gb1 = spec.gamma_end * f1, gb0 = spec.gamma_end * f0;
            alpha_[t] = ab0 > 0.0 ? ab1 / ab0 : 0.0;
            gamma_[t] = 1.0 - (1.0 - gb1) / (1.0 - gb0);
        }
    } else {
        if (spec.alpha.size() != static_cast<std::size_t>(steps) || spec.gamma.size() != static_cast<std::size_t>(steps))
            throw std::invalid_argument("schedule: per-step spec needs exactly T alpha and gamma values");
        for (int t = 1; t <= steps; ++t) {
            alpha_[t] = spec.alpha[static_cast<std::size_t>(t - 1)];
            gamma_[t] = spec.gamma[static_cast<std::size_t>(t - 1)];
        }
    }

    for (int t = 1; t <= steps; ++t) {
        if (!(alpha_[t] >= 0.0) || alpha_[t] > 1.0)
            throw std::invalid_argument("schedule: alpha_" + std::to_string(t) + " = " + std::to_string(alpha_[t]) +
                                        " outside [0, 1]");
        if (!(gamma_[t] >= 0.0) || gamma_[t] > 1.0)
            throw std::invalid_argument("schedule: gamma_" + std::to_string(t) + " outside [0, 1]");
        const double rest = 1.0 - alpha_[t] - gamma_[t];
        if (rest < -1e-15)
            throw std::invalid_argument("schedule: alpha_" + std::to_string(t) + " + gamma_" + std::to_string(t) +
                                        " exceeds 1");
        beta_[t] = std::max(rest, 0.0) / m;
    }

    alpha_bar_.assign(n, 1.0);
    gamma_bar_.assign(n, 0.0);
    beta_bar_.assign(n, 0.0);
    double keep_unmasked = 1.0;
    for (int t = 1; t <= steps; ++t) {
        alpha_bar_[t] = alpha_bar_[t - 1] * alpha_[t];
        keep_unmasked *= 1.0 - gamma_[t];
        gamma_bar_[t] = 1.0 - keep_unmasked;
        beta_bar_[t] = std::max(0.0, 1.0 - alpha_bar_[t] - gamma_bar_[t]) / m;
    }
}

void Schedule::check_step(int t, bool allow_zero) const {
    if (t < (allow_zero ? 0 : 1) || t > steps_)
        throw std::out_of_range("schedule: step " + std::to_string(t) + " outside [" + (allow_zero ? "0" : "1") +
                                ", " + std::to_string(steps_) + "]");
}

void Schedule::check_state(int s) const {
    if (s < 0 || s > classes_)
        throw std::out_of_range("schedule: state " + std::to_string(s) + " outside [0, " + std::to_string(classes_) + "]");
}

double Schedule::step_prob(int t, int from, int to) const {
    check_step(t, false);
    check_state(from);
    check_state(to);
    if (from == mask()) return to == mask() ? 1.0 : 0.0;
    if (to == mask()) return gamma(t);
    return to == from ? alpha(t) + beta(t) : beta(t);
}

double Schedule::cumulative_prob(int t, int from, int to) const {
    check_step(t, true);
    check_state(from);
    check_state(to);
    if (from == mask()) return to == mask() ? 1.0 : 0.0;
    if (to == mask()) return gamma_bar(t);
    return to == from ? alpha_bar(t) + beta_bar(t) : beta_bar(t);
}

std::vector<double> Schedule::transition_row(int state, int t) const {
    check_state(state);
    std::vector<double> row(static_cast<std::size_t>(states()));
    for (int j = 0; j < states(); ++j) row[static_cast<std::size_t>(j)] = step_prob(t, state, j);
    return row;
}

void Schedule::require_terminal_mask(double min_gamma_bar) const {
    if (gamma_bar(steps_) < min_gamma_bar)
        throw std::invalid_argument("schedule: terminal mask probability " + std::to_string(gamma_bar(steps_)) +
                                    " is below " + std::to_string(min_gamma_bar) +
                                    "; an all-[MASK] start would not match the forward process");
}

}  // namespace sta::diffusion
