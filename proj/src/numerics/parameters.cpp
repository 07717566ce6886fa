#include "sta/numerics/parameters.hpp"

#include <cmath>
#include <stdexcept>

namespace sta::nn {

std::size_t ParameterStore::add(std::string name, Tensor value) {
    if (find(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    params_.push_back({std::move(name), std::move(value), false});
    return params_.size() - 1;
}

Parameter* ParameterStore::find(std::string_view name) {
    for (auto& p : params_)
        if (p.name == name) return &p;
    return nullptr;
}

const Parameter* ParameterStore::find(std::string_view name) const {
    for (const auto& p : params_)
        if (p.name == name) return &p;
    return nullptr;
}

std::size_t ParameterStore::index_of(std::string_view name) const {
    for (std::size_t i = 0; i < params_.size(); ++i)
        if (params_[i].name == name) return i;
    throw std::out_of_range("no parameter named " + std::string(name));
}

std::size_t ParameterStore::scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
}

Gradients::Gradients(const ParameterStore& store) : store_(&store) {
    grads_.reserve(store.size());
    for (const auto& p : store) grads_.emplace_back(p.value.size(), 0.0);
}

void Gradients::add(const Gradients& other) {
    if (other.store_ != store_) throw std::invalid_argument("gradients belong to different stores");
    for (std::size_t i = 0; i < grads_.size(); ++i)
        for (std::size_t j = 0; j < grads_[i].size(); ++j) grads_[i][j] += other.grads_[i][j];
}

void Gradients::scale(double factor) {
    for (auto& g : grads_)
        for (double& v : g) v *= factor;
}

void Gradients::zero() {
    for (auto& g : grads_) std::fill(g.begin(), g.end(), 0.0);
}

double Gradients::norm() const {
    double s = 0.0;
    for (const auto& g : grads_)
        for (double v : g) s += v * v;
    return std::sqrt(s);
}

}  // namespace sta::nn
