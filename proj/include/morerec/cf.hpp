#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "morerec/corpus.hpp"
#include "morerec/io.hpp"
#include "morerec/rng.hpp"

namespace morerec {

class CfError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Squash { Logistic, Identity };

inline const char* squash_name(Squash s) { return s == Squash::Logistic ? "logistic" : "identity"; }

inline Squash squash_from_name(const std::string& s) {
    if (s == "logistic") return Squash::Logistic;
    if (s == "identity") return Squash::Identity;
    throw CfError("unknown squash: " + s);
}

struct CfConfig {
    std::size_t dim = 64;
    double lr = 0.05;
    std::size_t epochs = 30;
    std::size_t negatives_per_positive = 4;
    std::uint64_t seed = 0;
    std::string loss_kind = "bce";
    Squash squash = Squash::Logistic;

    Json to_json() const {
        return Json{{"dim", dim},
                    {"lr", lr},
                    {"epochs", epochs},
                    {"negatives_per_positive", negatives_per_positive},
                    {"seed", seed},
                    {"loss_kind", loss_kind},
                    {"squash", squash_name(squash)}};
    }

    static CfConfig from_json(const Json& j) {
        CfConfig c;
        c.dim = j.at("dim").get<std::size_t>();
        c.lr = j.at("lr").get<double>();
        c.epochs = j.at("epochs").get<std::size_t>();
        c.negatives_per_positive = j.at("negatives_per_positive").get<std::size_t>();
        c.seed = j.at("seed").get<std::uint64_t>();
        c.loss_kind = j.at("loss_kind").get<std::string>();
        c.squash = squash_from_name(j.at("squash").get<std::string>());
        return c;
    }
};

struct CfRating {
    std::string user_id;
    std::string item_id;
    double score = 0.0;
};

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Two-sided matrix factorization. Rows are keyed by opaque user/item ids;
/// the embedding tables are immutable once training finishes.
class CfModel {
public:
    CfModel() = default;

    CfModel(std::vector<std::string> user_ids, std::vector<std::string> item_ids, CfConfig config)
        : config_(std::move(config)), user_ids_(std::move(user_ids)), item_ids_(std::move(item_ids)) {
        for (std::size_t i = 0; i < user_ids_.size(); ++i) user_index_[user_ids_[i]] = i;
        for (std::size_t i = 0; i < item_ids_.size(); ++i) item_index_[item_ids_[i]] = i;
        user_emb_.assign(user_ids_.size(), std::vector<double>(config_.dim, 0.0));
        item_emb_.assign(item_ids_.size(), std::vector<double>(config_.dim, 0.0));
    }

    std::size_t dim() const { return config_.dim; }
    const CfConfig& config() const { return config_; }
    const std::vector<std::string>& user_ids() const { return user_ids_; }
    const std::vector<std::string>& item_ids() const { return item_ids_; }
    const std::vector<double>& training_loss() const { return loss_trajectory_; }

    std::vector<double>& user_embedding(const std::string& user_id) {
        return user_emb_[user_row(user_id)];
    }
    const std::vector<double>& user_embedding(const std::string& user_id) const {
        return user_emb_[user_row(user_id)];
    }
    std::vector<double>& item_embedding(const std::string& item_id) {
        return item_emb_[item_row(item_id)];
    }
    const std::vector<double>& item_embedding(const std::string& item_id) const {
        return item_emb_[item_row(item_id)];
    }

    std::size_t user_row(const std::string& user_id) const {
        auto it = user_index_.find(user_id);
        if (it == user_index_.end()) throw CfError("unknown user id: " + user_id);
        return it->second;
    }

    std::size_t item_row(const std::string& item_id) const {
        auto it = item_index_.find(item_id);
        if (it == item_index_.end()) throw CfError("unknown item id: " + item_id);
        return it->second;
    }

    const std::vector<std::vector<double>>& user_matrix() const { return user_emb_; }
    const std::vector<std::vector<double>>& item_matrix() const { return item_emb_; }
    std::vector<std::vector<double>>& mutable_user_matrix() { return user_emb_; }
    std::vector<std::vector<double>>& mutable_item_matrix() { return item_emb_; }
    void set_training_loss(std::vector<double> t) { loss_trajectory_ = std::move(t); }

    double raw_score(const std::string& user_id, const std::string& item_id) const {
        const auto& u = user_embedding(user_id);
        const auto& v = item_embedding(item_id);
        double s = 0.0;
        for (std::size_t i = 0; i < u.size(); ++i) s += u[i] * v[i];
        return s;
    }

    double score(const std::string& user_id, const std::string& item_id) const {
        double s = raw_score(user_id, item_id);
        return config_.squash == Squash::Logistic ? sigmoid(s) : s;
    }

    Json to_json() const {
        Json users = Json::object();
        for (std::size_t i = 0; i < user_ids_.size(); ++i) users[user_ids_[i]] = user_emb_[i];
        Json items = Json::object();
        for (std::size_t i = 0; i < item_ids_.size(); ++i) items[item_ids_[i]] = item_emb_[i];
        return Json{{"header",
                     Json{{"dim", config_.dim},
                          {"n_users", user_ids_.size()},
                          {"n_items", item_ids_.size()},
                          {"seed", config_.seed},
                          {"config", config_.to_json()},
                          {"config_hash", sha256_hex(config_.to_json().dump())}}},
                    {"training_loss", loss_trajectory_},
                    {"user_embeddings", users},
                    {"item_embeddings", items}};
    }

    static CfModel from_json(const Json& j) {
        CfConfig config = CfConfig::from_json(j.at("header").at("config"));
        std::vector<std::string> users, items;
        for (auto& [k, v] : j.at("user_embeddings").items()) users.push_back(k);
        for (auto& [k, v] : j.at("item_embeddings").items()) items.push_back(k);
        CfModel m(std::move(users), std::move(items), config);
        for (auto& [k, v] : j.at("user_embeddings").items())
            m.user_embedding(k) = v.get<std::vector<double>>();
        for (auto& [k, v] : j.at("item_embeddings").items())
            m.item_embedding(k) = v.get<std::vector<double>>();
        m.set_training_loss(j.at("training_loss").get<std::vector<double>>());
        return m;
    }

private:
    CfConfig config_;
    std::vector<std::string> user_ids_;
    std::vector<std::string> item_ids_;
    std::unordered_map<std::string, std::size_t> user_index_;
    std::unordered_map<std::string, std::size_t> item_index_;
    std::vector<std::vector<double>> user_emb_;
    std::vector<std::vector<double>> item_emb_;
    std::vector<double> loss_trajectory_;
};

/// Trains the factorization with sampled-negative binary cross-entropy SGD.
/// Only training prefixes are visited: the two held-out targets per user are
/// never read, not even for negative-sample exclusion.
inline CfModel train_cf(const Corpus& corpus, const CfConfig& config) {
    if (corpus.sequences().empty()) throw CfError("cannot train on an empty corpus");

    std::vector<std::string> user_ids = corpus.user_ids();
    std::vector<std::string> item_ids;
    item_ids.reserve(corpus.items().size());
    for (const auto& it : corpus.items()) item_ids.push_back(it.item_id);

    CfModel model(user_ids, item_ids, config);

    Rng init_rng(mix_seed(config.seed, "cf-init"));
    const double scale = 0.1;
    for (auto& row : model.mutable_user_matrix())
        for (auto& x : row) x = init_rng.normal(0.0, scale);
    for (auto& row : model.mutable_item_matrix())
        for (auto& x : row) x = init_rng.normal(0.0, scale);

    // Positive pairs come from training prefixes only.
    struct Positive {
        std::size_t user = 0;
        std::size_t item = 0;
    };
    std::vector<Positive> positives;
    std::vector<std::unordered_set<std::size_t>> seen(user_ids.size());
    for (std::size_t u = 0; u < corpus.sequences().size(); ++u) {
        const auto& events = corpus.sequences()[u].events;
        for (std::size_t i = 0; i + 2 < events.size(); ++i) {
            std::size_t row = model.item_row(events[i].item_id);
            positives.push_back({u, row});
            seen[u].insert(row);
        }
    }
    if (positives.empty()) throw CfError("no training events after leave-one-out split");

    auto& U = model.mutable_user_matrix();
    auto& V = model.mutable_item_matrix();
    const std::size_t n_items = item_ids.size();
    std::vector<double> losses;
    Rng rng(mix_seed(config.seed, "cf-sgd"));

    auto sgd_step = [&](std::size_t u, std::size_t v, double label) {
        double s = 0.0;
        for (std::size_t k = 0; k < config.dim; ++k) s += U[u][k] * V[v][k];
        const double p = sigmoid(s);
        const double g = p - label;
        for (std::size_t k = 0; k < config.dim; ++k) {
            const double uk = U[u][k];
            U[u][k] -= config.lr * g * V[v][k];
            V[v][k] -= config.lr * g * uk;
        }
        const double eps = 1e-12;
        return label > 0.5 ? -std::log(p + eps) : -std::log(1.0 - p + eps);
    };

    std::vector<std::size_t> order(positives.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        rng.shuffle(order);
        double loss_sum = 0.0;
        std::size_t steps = 0;
        for (std::size_t idx : order) {
            const auto& pos = positives[idx];
            loss_sum += sgd_step(pos.user, pos.item, 1.0);
            ++steps;
            for (std::size_t n = 0; n < config.negatives_per_positive; ++n) {
                std::size_t neg = rng.index(n_items);
                // resample while hitting the user's own training items
                std::size_t guard = 0;
                while (seen[pos.user].count(neg) && guard++ < 100) neg = rng.index(n_items);
                if (seen[pos.user].count(neg)) continue;
                loss_sum += sgd_step(pos.user, neg, 0.0);
                ++steps;
            }
        }
        const double mean_loss = loss_sum / static_cast<double>(steps);
        if (!std::isfinite(mean_loss))
            throw CfError("training diverged (non-finite loss) at epoch " + std::to_string(epoch));
        losses.push_back(mean_loss);
    }
    model.set_training_loss(std::move(losses));
    return model;
}

/// One rating per requested item, in request order.
inline std::vector<CfRating> rate(const CfModel& model, const std::string& user_id,
                                  const std::vector<std::string>& item_ids) {
    std::vector<CfRating> out;
    out.reserve(item_ids.size());
    for (const auto& item_id : item_ids)
        out.push_back({user_id, item_id, model.score(user_id, item_id)});
    return out;
}

/// Bandit state: user embedding concatenated with the mean embedding of the
/// history items. Dimension is 2 * dim.
inline std::vector<double> embed_state(const CfModel& model, const std::string& user_id,
                                       const std::vector<std::string>& history_item_ids) {
    if (history_item_ids.empty())
        throw CfError("embed_state requires a non-empty history for user " + user_id);
    std::vector<double> state = model.user_embedding(user_id);
    std::vector<double> mean(model.dim(), 0.0);
    for (const auto& item_id : history_item_ids) {
        const auto& e = model.item_embedding(item_id);
        for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += e[k];
    }
    for (auto& x : mean) x /= static_cast<double>(history_item_ids.size());
    state.insert(state.end(), mean.begin(), mean.end());
    return state;
}

}  // namespace morerec
