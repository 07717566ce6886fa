#include "sta/metrics/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace sta::metrics {
namespace {

using Mat = Eigen::MatrixXd;

Mat to_eigen(const nn::Tensor& t) {
    Mat m(t.rows(), t.cols());
    for (std::size_t r = 0; r < t.rows(); ++r)
        for (std::size_t c = 0; c < t.cols(); ++c) m(r, c) = t.at(r, c);
    return m;
}

// Symmetric PSD square root, clamping tiny negative eigenvalues. The
// tolerance is 1e-10 relative to the largest eigenvalue (absolute below 1),
// since rank-deficient covariances of large features round to about
// -1e-16 * lambda_max.
Mat psd_sqrt(const Mat& a, const char* what) {
    Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (a + a.transpose()));
    if (es.info() != Eigen::Success) throw std::runtime_error(std::string("fid: eigendecomposition of ") + what + " failed");
    Eigen::VectorXd ev = es.eigenvalues();
    const double tol = 1e-10 * std::max(1.0, ev.size() ? ev.maxCoeff() : 0.0);
    for (Eigen::Index i = 0; i < ev.size(); ++i) {
        if (ev(i) < -tol)
            throw std::domain_error(std::string("fid: ") + what + " is not positive semi-definite (smallest eigenvalue " +
                                    std::to_string(ev.minCoeff()) + ", tolerance " + std::to_string(tol) + ")");
        ev(i) = std::sqrt(std::max(ev(i), 0.0));
    }
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

double kl_to_marginal(const nn::Tensor& p, std::size_t begin, std::size_t end) {
    const std::size_t c = p.cols();
    std::vector<double> marginal(c, 0.0);
    for (std::size_t r = begin; r < end; ++r)
        for (std::size_t j = 0; j < c; ++j) marginal[j] += p.at(r, j);
    for (double& m : marginal) m /= static_cast<double>(end - begin);
    double total = 0.0;
    for (std::size_t r = begin; r < end; ++r)
        for (std::size_t j = 0; j < c; ++j) {
            const double v = p.at(r, j);
            if (v > 0.0) total += v * (std::log(std::max(v, 1e-12)) - std::log(std::max(marginal[j], 1e-12)));
        }
    return std::exp(total / static_cast<double>(end - begin));
}

void check_probs(const nn::Tensor& p) {
    if (p.rank() != 2 || p.rows() == 0 || p.cols() == 0) throw std::invalid_argument("inception_score: need N x C probabilities");
    for (std::size_t r = 0; r < p.rows(); ++r) {
        double s = 0.0;
        for (double v : p.row(r)) {
            if (!(v >= 0.0) || !std::isfinite(v))
                throw std::invalid_argument("inception_score: row " + std::to_string(r) + " has an invalid probability");
            s += v;
        }
        if (std::abs(s - 1.0) > 1e-9)
            throw std::invalid_argument("inception_score: row " + std::to_string(r) + " sums to " + std::to_string(s));
    }
}

}  // namespace

FeatureStats feature_stats(const nn::Tensor& features) {
    if (features.rank() != 2 || features.rows() < 2)
        throw std::invalid_argument("feature_stats: need at least two feature rows");
    const std::size_t n = features.rows();
    const std::size_t d = features.cols();
    FeatureStats s;
    s.n = n;
    s.mean.assign(d, 0.0);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < d; ++j) s.mean[j] += features.at(r, j);
    for (double& m : s.mean) m /= static_cast<double>(n);

    Mat centered = to_eigen(features);
    for (std::size_t j = 0; j < d; ++j) centered.col(j).array() -= s.mean[j];
    Mat cov = centered.transpose() * centered / static_cast<double>(n - 1);
    cov = 0.5 * (cov + cov.transpose());
    s.cov = nn::Tensor::zeros(d, d);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) s.cov.at(i, j) = cov(i, j);
    return s;
}

double fid(const FeatureStats& a, const FeatureStats& b) {
    if (a.dim() != b.dim() || a.cov.rows() != a.dim() || b.cov.rows() != b.dim())
        throw std::invalid_argument("fid: feature dimensions differ (" + std::to_string(a.dim()) + " vs " +
                                    std::to_string(b.dim()) + ")");
    double mean_term = 0.0;
    for (std::size_t j = 0; j < a.dim(); ++j) mean_term += (a.mean[j] - b.mean[j]) * (a.mean[j] - b.mean[j]);
    const Mat sa = to_eigen(a.cov);
    const Mat sb = to_eigen(b.cov);
    const Mat root_a = psd_sqrt(sa, "covariance a");
    const Mat cross = psd_sqrt(root_a * sb * root_a, "covariance product");
    return mean_term + sa.trace() + sb.trace() - 2.0 * cross.trace();
}

double inception_score(const nn::Tensor& probs) {
    check_probs(probs);
    return kl_to_marginal(probs, 0, probs.rows());
}

MeanSd inception_score_splits(const nn::Tensor& probs, int splits) {
    check_probs(probs);
    if (splits < 1 || static_cast<std::size_t>(splits) > probs.rows())
        throw std::invalid_argument("inception_score: " + std::to_string(splits) + " splits for " +
                                    std::to_string(probs.rows()) + " rows");
    const std::size_t n = probs.rows();
    std::vector<double> scores;
    for (int s = 0; s < splits; ++s) {
        const std::size_t begin = n * s / splits;
        const std::size_t end = n * (s + 1) / splits;
        scores.push_back(kl_to_marginal(probs, begin, end));
    }
    MeanSd out;
    out.mean = std::accumulate(scores.begin(), scores.end(), 0.0) / splits;
    for (double v : scores) out.sd += (v - out.mean) * (v - out.mean);
    out.sd = std::sqrt(out.sd / splits);
    return out;
}

void RetrievalIndex::validate(std::size_t queries) const {
    if (candidates.rank() != 2 || candidates.rows() == 0) throw std::invalid_argument("recall_at_k: no candidates");
    if (matches.size() != queries)
        throw std::invalid_argument("recall_at_k: " + std::to_string(matches.size()) + " match lists for " +
                                    std::to_string(queries) + " queries");
    for (std::size_t q = 0; q < matches.size(); ++q) {
        if (matches[q].empty()) throw std::invalid_argument("recall_at_k: query " + std::to_string(q) + " has no match");
        for (int m : matches[q])
            if (m < 0 || static_cast<std::size_t>(m) >= candidates.rows())
                throw std::invalid_argument("recall_at_k: query " + std::to_string(q) + " matches unknown candidate " +
                                            std::to_string(m));
    }
}

std::vector<int> rank_candidates(const nn::Tensor& candidates, std::span<const double> query) {
    if (query.size() != candidates.cols()) throw std::invalid_argument("rank_candidates: dimension mismatch");
    double qn = 0.0;
    for (double v : query) qn += v * v;
    qn = std::sqrt(qn);
    std::vector<double> sim(candidates.rows());
    for (std::size_t c = 0; c < candidates.rows(); ++c) {
        double dot = 0.0, cn = 0.0;
        for (std::size_t j = 0; j < query.size(); ++j) {
            dot += candidates.at(c, j) * query[j];
            cn += candidates.at(c, j) * candidates.at(c, j);
        }
        const double denom = qn * std::sqrt(cn);
        sim[c] = denom > 0.0 ? dot / denom : 0.0;
    }
    std::vector<int> order(candidates.rows());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int x, int y) { return sim[x] > sim[y]; });
    return order;
}

double recall_at_k(const RetrievalIndex& index, const nn::Tensor& queries, int k) {
    if (queries.rank() != 2 || queries.rows() == 0) throw std::invalid_argument("recall_at_k: no queries");
    index.validate(queries.rows());
    if (k < 1 || static_cast<std::size_t>(k) > index.candidates.rows())
        throw std::invalid_argument("recall_at_k: k=" + std::to_string(k) + " outside [1, " +
                                    std::to_string(index.candidates.rows()) + "]");
    std::size_t hits = 0;
    for (std::size_t q = 0; q < queries.rows(); ++q) {
        const auto order = rank_candidates(index.candidates, queries.row(q));
        const auto& want = index.matches[q];
        for (int i = 0; i < k; ++i)
            if (std::find(want.begin(), want.end(), order[i]) != want.end()) {
                ++hits;
                break;
            }
    }
    return 100.0 * static_cast<double>(hits) / static_cast<double>(queries.rows());
}

}  // namespace sta::metrics
