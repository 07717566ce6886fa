#pragma once

#include <string>
#include <vector>

namespace sta::diffusion {

/// How a schedule is specified. `linear` fixes cumulative targets
/// gamma_bar_t = gamma_end * t / T and M * beta_bar_t = beta_end * t / T and
/// recovers per-step values; `per_step` takes alpha_t and gamma_t directly and
/// derives beta_t = (1 - alpha_t - gamma_t) / M.
struct ScheduleSpec {
    enum class Kind { linear, per_step };
    Kind kind = Kind::linear;
    double gamma_end = 0.99;
    double beta_end = 0.01;
    std::vector<double> alpha;
    std::vector<double> gamma;

    static ScheduleSpec linear(double gamma_end, double beta_end);
    static ScheduleSpec per_step(std::vector<double> alpha, std::vector<double> gamma);

    bool operator==(const ScheduleSpec&) const = default;
};

/// Mask-and-replace transition schedule over M clean states plus [MASK] = M.
/// Index 0 of each vector is t = 0 (identity); entries 1..T are the steps.
class Schedule {
public:
    Schedule() = default;
    Schedule(int steps, int classes, const ScheduleSpec& spec);

    int steps() const { return steps_; }
    int classes() const { return classes_; }
    int mask() const { return classes_; }
    int states() const { return classes_ + 1; }
    const ScheduleSpec& spec() const { return spec_; }

    double alpha(int t) const { return alpha_.at(static_cast<std::size_t>(t)); }
    double beta(int t) const { return beta_.at(static_cast<std::size_t>(t)); }
    double gamma(int t) const { return gamma_.at(static_cast<std::size_t>(t)); }
    double alpha_bar(int t) const { return alpha_bar_.at(static_cast<std::size_t>(t)); }
    double beta_bar(int t) const { return beta_bar_.at(static_cast<std::size_t>(t)); }
    double gamma_bar(int t) const { return gamma_bar_.at(static_cast<std::size_t>(t)); }

    /// Q_t(from -> to) for one step t in [1, T].
    double step_prob(int t, int from, int to) const;
    /// Qbar_t(from -> to) after t steps, t in [0, T].
    double cumulative_prob(int t, int from, int to) const;

    /// Row `state` of Q_t as a probability vector over M + 1 states.
    std::vector<double> transition_row(int state, int t) const;

    /// The reverse sampler starts from an all-[MASK] grid, which matches the
    /// forward process only if almost everything is masked at T.
    void require_terminal_mask(double min_gamma_bar = 0.99) const;

    bool operator==(const Schedule& o) const = default;

private:
    void check_step(int t, bool allow_zero) const;
    void check_state(int s) const;

    int steps_ = 0;
    int classes_ = 0;
    ScheduleSpec spec_;
    std::vector<double> alpha_, beta_, gamma_, alpha_bar_, beta_bar_, gamma_bar_;
};

}  // namespace sta::diffusion
