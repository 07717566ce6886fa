#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "sta/numerics/tensor.hpp"

namespace sta::metrics {

/// Gaussian fit of a feature set.
struct FeatureStats {
    std::vector<double> mean;
    nn::Tensor cov;  // d x d, unbiased
    std::size_t n = 0;

    std::size_t dim() const { return mean.size(); }
};

/// Mean and unbiased covariance of the rows of an n x d matrix (n >= 2).
FeatureStats feature_stats(const nn::Tensor& features);

/// Frechet distance between two Gaussian fits. The matrix square root is
/// taken through the symmetric product sqrt(A) B sqrt(A); eigenvalues in
/// (-1e-10, 0) are clamped, anything more negative is rejected.
double fid(const FeatureStats& a, const FeatureStats& b);

/// exp(mean_x KL(p(y|x) || p(y))) over rows of class probabilities.
double inception_score(const nn::Tensor& probs);

struct MeanSd {
    double mean = 0.0;
    double sd = 0.0;
};

/// Inception score over `splits` contiguous, near-equal chunks of the rows.
MeanSd inception_score_splits(const nn::Tensor& probs, int splits = 10);

/// Candidate features plus, for every query, the indices of its matches.
struct RetrievalIndex {
    nn::Tensor candidates;
    std::vector<std::vector<int>> matches;

    void validate(std::size_t queries) const;
};

/// Candidates ordered by descending cosine similarity to `query`, ties by index.
std::vector<int> rank_candidates(const nn::Tensor& candidates, std::span<const double> query);

/// Percentage of queries with at least one match among their top-k candidates.
double recall_at_k(const RetrievalIndex& index, const nn::Tensor& queries, int k);

}  // namespace sta::metrics
