#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "sta/numerics/tensor.hpp"

namespace sta::nn {

struct Parameter {
    std::string name;
    Tensor value;
    bool frozen = false;
};

/// Owns the trainable tensors of one model. Indices are stable for the
/// lifetime of the store; graphs refer to parameters by (store, index).
class ParameterStore {
public:
    std::size_t add(std::string name, Tensor value);

    std::size_t size() const { return params_.size(); }
    Parameter& operator[](std::size_t i) { return params_[i]; }
    const Parameter& operator[](std::size_t i) const { return params_[i]; }

    Parameter* find(std::string_view name);
    const Parameter* find(std::string_view name) const;
    std::size_t index_of(std::string_view name) const;

    std::size_t scalar_count() const;

    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }

private:
    std::vector<Parameter> params_;
};

/// Per-parameter gradient buffers shaped like a ParameterStore.
class Gradients {
public:
    explicit Gradients(const ParameterStore& store);

    const ParameterStore& store() const { return *store_; }
    std::size_t size() const { return grads_.size(); }
    std::vector<double>& operator[](std::size_t i) { return grads_[i]; }
    const std::vector<double>& operator[](std::size_t i) const { return grads_[i]; }

    void add(const Gradients& other);
    void scale(double factor);
    void zero();
    double norm() const;

private:
    const ParameterStore* store_;
    std::vector<std::vector<double>> grads_;
};

}  // namespace sta::nn
