#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sta/diffusion/schedule.hpp"
#include "sta/numerics/optim.hpp"
#include "sta/numerics/parameters.hpp"

namespace sta::pipeline {

struct ScheduleBlock {
    int steps = 0;
    int classes = 0;
    diffusion::ScheduleSpec spec;

    friend bool operator==(const ScheduleBlock&, const ScheduleBlock&) = default;
};

/// Named binary32 tensors plus string metadata, tagged with the stage and the
/// digest of the config that produced them.
struct Checkpoint {
    std::string stage;
    std::string digest;
    std::map<std::string, std::string> meta;
    std::optional<ScheduleBlock> schedule;
    std::vector<std::pair<std::string, nn::Tensor>> tensors;

    void put(std::string name, nn::Tensor value);
    const nn::Tensor* find(const std::string& name) const;
    /// Throws naming the tensor if it is absent.
    const nn::Tensor& get(const std::string& name) const;
    const std::string& meta_at(const std::string& key) const;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
/// Reads a checkpoint. When `expected_digest` is given, a different stored
/// digest is an error.
Checkpoint load_checkpoint(const std::filesystem::path& path,
                           const std::optional<std::string>& expected_digest = std::nullopt);

void store_parameters(Checkpoint& ck, const std::string& prefix, const nn::ParameterStore& params);
/// Copies tensors back by name; a missing name or a shape mismatch throws.
void restore_parameters(const Checkpoint& ck, const std::string& prefix, nn::ParameterStore& params);

void store_optimizer(Checkpoint& ck, const std::string& prefix, const nn::ParameterStore& params,
                     const nn::OptimizerState& state);
void restore_optimizer(const Checkpoint& ck, const std::string& prefix, const nn::ParameterStore& params,
                       nn::OptimizerState& state);

}  // namespace sta::pipeline
