#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "morerec/io.hpp"

namespace morerec {

/// 1-based position of `target` in `ranked`, or nullopt when absent.
inline std::optional<std::size_t> rank_of_target(const std::vector<std::string>& ranked,
                                                 const std::string& target) {
    for (std::size_t i = 0; i < ranked.size(); ++i)
        if (ranked[i] == target) return i + 1;
    return std::nullopt;
}

/// With a single relevant item, DCG@k reduces to 1/log2(rank+1) for
/// rank <= k and the ideal DCG is 1, so NDCG@k is the discount itself.
inline double ndcg_at_k(std::optional<std::size_t> rank, std::size_t k) {
    if (!rank || *rank > k) return 0.0;
    return 1.0 / std::log2(static_cast<double>(*rank) + 1.0);
}

inline double hit_at_k(std::optional<std::size_t> rank, std::size_t k) {
    return (rank && *rank <= k) ? 1.0 : 0.0;
}

struct UserRank {
    std::string user_id;
    std::optional<std::size_t> rank;  // nullopt = target unranked, scores 0
};

struct MetricResult {
    std::string metric;  // "HR" or "NDCG"
    std::size_t k = 0;
    double value = 0.0;
    std::vector<UserRank> per_user;

    std::string name() const { return metric + "@" + std::to_string(k); }
};

/// Mean of the per-user metric over all evaluated users, in input order.
inline std::vector<MetricResult> compute_metrics(const std::vector<UserRank>& ranks,
                                                 const std::vector<std::size_t>& ks) {
    if (ranks.empty()) throw std::invalid_argument("compute_metrics: empty user set");
    std::vector<MetricResult> out;
    for (std::size_t k : ks) {
        MetricResult hr{"HR", k, 0.0, ranks};
        MetricResult ndcg{"NDCG", k, 0.0, ranks};
        double hr_sum = 0.0, ndcg_sum = 0.0;
        for (const auto& r : ranks) {
            hr_sum += hit_at_k(r.rank, k);
            ndcg_sum += ndcg_at_k(r.rank, k);
        }
        hr.value = hr_sum / static_cast<double>(ranks.size());
        ndcg.value = ndcg_sum / static_cast<double>(ranks.size());
        out.push_back(std::move(hr));
        out.push_back(std::move(ndcg));
    }
    return out;
}

/// Looks up a single metric by name, e.g. "ndcg@10" or "hr@5".
inline double single_user_metric(const std::string& metric_name,
                                 std::optional<std::size_t> rank) {
    auto at = metric_name.find('@');
    if (at == std::string::npos)
        throw std::invalid_argument("metric name must look like ndcg@10: " + metric_name);
    std::string kind = metric_name.substr(0, at);
    for (auto& c : kind) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    const std::size_t k = std::stoul(metric_name.substr(at + 1));
    if (kind == "ndcg") return ndcg_at_k(rank, k);
    if (kind == "hr") return hit_at_k(rank, k);
    throw std::invalid_argument("unknown metric kind: " + metric_name);
}

}  // namespace morerec
