#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "kegraph/common.hpp"
#include "kegraph/tensor.hpp"

namespace kegraph {

// Rank-based AUC with ties counted 0.5: the probability that a random
// positive outranks a random negative.
inline double auc(const std::vector<double>& scores, const std::vector<uint8_t>& labels) {
    if (scores.size() != labels.size()) throw DimensionError("auc: size mismatch");
    const size_t n = scores.size();
    size_t n_pos = 0;
    for (uint8_t l : labels) n_pos += l != 0;
    const size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) throw MetricError("auc: both classes must be present");

    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&scores](size_t a, size_t b) { return scores[a] < scores[b]; });

    double rank_sum_pos = 0.0;
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // ranks are 1-based
        for (size_t k = i; k < j; ++k)
            if (labels[order[k]] != 0) rank_sum_pos += avg_rank;
        i = j;
    }
    const double np = static_cast<double>(n_pos);
    return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

struct ClassWeights {
    double w0 = 1.0, w1 = 1.0;
    double of(uint8_t label) const { return label ? w1 : w0; }
};

// Inverse class frequency over the given subset, normalized to mean 1.
inline ClassWeights class_weights(const std::vector<uint8_t>& labels,
                                  const std::vector<uint32_t>& subset) {
    size_t n1 = 0;
    for (uint32_t i : subset) n1 += labels[i] != 0;
    const size_t n0 = subset.size() - n1;
    if (n0 == 0 || n1 == 0)
        throw DomainError("class_weights: a class has zero frequency in the subset");
    const double inv0 = static_cast<double>(subset.size()) / static_cast<double>(n0);
    const double inv1 = static_cast<double>(subset.size()) / static_cast<double>(n1);
    const double mean = 0.5 * (inv0 + inv1);
    return {inv0 / mean, inv1 / mean};
}

// Mean over nodes of -w_y * log(yhat_y); yhat rows hold (non-fraud, fraud).
inline double weighted_cross_entropy(const Tensor& yhat, const std::vector<uint8_t>& labels,
                                     const ClassWeights& w) {
    if (yhat.rows() != labels.size() || yhat.cols() != 2)
        throw DimensionError("weighted_cross_entropy: shape mismatch");
    double total = 0.0;
    for (size_t i = 0; i < labels.size(); ++i) {
        const double p = yhat.at(i, labels[i] == 0 ? 0 : 1);
        if (p <= 0.0) throw DomainError("weighted_cross_entropy: probability outside (0,1)");
        total += -w.of(labels[i]) * std::log(p);
    }
    return total / static_cast<double>(labels.size());
}

struct MeanStderr {
    double mean = 0.0;
    double stderr_ = 0.0;
};

inline MeanStderr mean_stderr(const std::vector<double>& xs) {
    MeanStderr out;
    if (xs.empty()) return out;
    out.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
    if (xs.size() < 2) return out;
    double ss = 0.0;
    for (double x : xs) ss += (x - out.mean) * (x - out.mean);
    out.stderr_ = std::sqrt(ss / static_cast<double>(xs.size() - 1)) /
                  std::sqrt(static_cast<double>(xs.size()));
    return out;
}

}  // namespace kegraph
