#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "morerec/cf.hpp"
#include "morerec/rng.hpp"

namespace morerec {

struct KMeansResult {
    std::vector<std::size_t> assignments;
    std::vector<std::vector<double>> centroids;
    std::vector<double> sse_trajectory;  // one entry per Lloyd iteration
    std::size_t iterations = 0;
};

namespace detail {

inline double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

}  // namespace detail

/// Lloyd's algorithm with D^2-weighted seeding. Runs to an assignment
/// fixpoint or max_iters, whichever first. Empty clusters are re-seeded with
/// the point farthest from its current centroid.
inline KMeansResult kmeans(const std::vector<std::vector<double>>& points, std::size_t k,
                           std::uint64_t seed, std::size_t max_iters = 100) {
    if (k == 0) throw std::invalid_argument("kmeans: k must be > 0");
    if (k > points.size())
        throw std::invalid_argument("kmeans: k exceeds number of points (" +
                                    std::to_string(points.size()) + ")");
    const std::size_t n = points.size();
    const std::size_t dim = points.front().size();

    Rng rng(mix_seed(seed, "kmeans-seed"));
    std::vector<std::vector<double>> centroids;
    centroids.reserve(k);
    centroids.push_back(points[rng.index(n)]);
    std::vector<double> d2(n, std::numeric_limits<double>::max());
    while (centroids.size() < k) {
        for (std::size_t i = 0; i < n; ++i)
            d2[i] = std::min(d2[i], detail::sq_dist(points[i], centroids.back()));
        double total = 0.0;
        for (double d : d2) total += d;
        std::size_t next;
        if (total > 0.0) {
            next = rng.pick_weighted(d2);
        } else {
            next = rng.index(n);  // all points coincide with chosen centroids
        }
        centroids.push_back(points[next]);
    }

    KMeansResult result;
    result.assignments.assign(n, 0);
    std::vector<std::size_t> counts(k, 0);

    for (std::size_t iter = 0; iter < max_iters; ++iter) {
        bool changed = (iter == 0);
        double sse = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t best = 0;
            double best_d = std::numeric_limits<double>::max();
            for (std::size_t c = 0; c < k; ++c) {
                const double d = detail::sq_dist(points[i], centroids[c]);
                if (d < best_d) {
                    best_d = d;
                    best = c;
                }
            }
            sse += best_d;
            if (result.assignments[i] != best) {
                result.assignments[i] = best;
                changed = true;
            }
        }
        result.sse_trajectory.push_back(sse);
        result.iterations = iter + 1;
        if (!changed) {
            result.centroids = centroids;
            break;
        }

        counts.assign(k, 0);
        for (auto& c : centroids) c.assign(dim, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            counts[result.assignments[i]]++;
            for (std::size_t d = 0; d < dim; ++d) centroids[result.assignments[i]][d] += points[i][d];
        }
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] == 0) {
                // re-seed with the point farthest from its own centroid
                std::size_t far_i = 0;
                double far_d = -1.0;
                for (std::size_t i = 0; i < n; ++i) {
                    const double d = detail::sq_dist(points[i], centroids[result.assignments[i]]);
                    if (d > far_d) {
                        far_d = d;
                        far_i = i;
                    }
                }
                centroids[c] = points[far_i];
            } else {
                for (std::size_t d = 0; d < dim; ++d) centroids[c][d] /= static_cast<double>(counts[c]);
            }
        }
        result.centroids = centroids;
    }
    return result;
}

struct UserClustering {
    std::size_t k = 0;
    std::map<std::string, std::size_t> assignments;
    std::vector<std::vector<double>> centroids;
    std::uint64_t seed = 0;
    std::vector<double> sse_trajectory;

    std::size_t cluster_of(const std::string& user_id) const {
        auto it = assignments.find(user_id);
        if (it == assignments.end()) throw CfError("no cluster assignment for user " + user_id);
        return it->second;
    }

    Json to_json() const {
        Json a = Json::object();
        for (const auto& [u, c] : assignments) a[u] = c;
        return Json{{"k", k},
                    {"seed", seed},
                    {"assignments", a},
                    {"centroids", centroids},
                    {"sse_trajectory", sse_trajectory}};
    }

    static UserClustering from_json(const Json& j) {
        UserClustering c;
        c.k = j.at("k").get<std::size_t>();
        c.seed = j.at("seed").get<std::uint64_t>();
        for (auto& [u, v] : j.at("assignments").items()) c.assignments[u] = v.get<std::size_t>();
        c.centroids = j.at("centroids").get<std::vector<std::vector<double>>>();
        c.sse_trajectory = j.at("sse_trajectory").get<std::vector<double>>();
        return c;
    }
};

/// Clusters users by their CF embeddings.
inline UserClustering cluster_users(const CfModel& model, std::size_t k, std::uint64_t seed) {
    if (k == 0) throw std::invalid_argument("cluster_users: k must be > 0");
    if (k > model.user_ids().size())
        throw std::invalid_argument("cluster_users: k exceeds user count");
    KMeansResult res = kmeans(model.user_matrix(), k, seed);
    UserClustering out;
    out.k = k;
    out.seed = seed;
    out.centroids = std::move(res.centroids);
    out.sse_trajectory = std::move(res.sse_trajectory);
    for (std::size_t i = 0; i < model.user_ids().size(); ++i)
        out.assignments[model.user_ids()[i]] = res.assignments[i];
    return out;
}

}  // namespace morerec
