#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "morerec/banks.hpp"
#include "morerec/cf.hpp"
#include "morerec/rng.hpp"

namespace morerec {

class BanditError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr std::size_t kArms = 3;  // one per reflection perspective

struct PpoConfig {
    double clip_delta = 0.2;
    double epsilon = 0.1;
    double actor_lr = 3e-3;
    double critic_lr = 1e-2;
    std::size_t epochs = 4;
    std::size_t batch_size = 64;
    std::size_t steps = 5000;
    std::size_t buffer_capacity = 4096;
    std::size_t hidden_width = 0;  // 0 = affine actor
    double entropy_coef = 0.0;
    bool advantage_norm = false;
    double tau = 1.0;  // reward-sampling softmax temperature
    std::uint64_t seed = 0;

    Json to_json() const {
        return Json{{"clip_delta", clip_delta},
                    {"epsilon", epsilon},
                    {"actor_lr", actor_lr},
                    {"critic_lr", critic_lr},
                    {"epochs", epochs},
                    {"batch_size", batch_size},
                    {"steps", steps},
                    {"buffer_capacity", buffer_capacity},
                    {"hidden_width", hidden_width},
                    {"entropy_coef", entropy_coef},
                    {"advantage_norm", advantage_norm},
                    {"tau", tau},
                    {"seed", seed}};
    }
};

/// Actor + critic parameters. The actor is affine (hidden_width == 0) or one
/// tanh hidden layer; the critic is always affine.
struct PolicyParams {
    std::size_t input_dim = 0;
    std::size_t hidden_width = 0;

    std::vector<std::vector<double>> w1;  // hidden_width x input_dim (hidden actor only)
    std::vector<double> b1;               // hidden_width
    std::vector<std::vector<double>> w2;  // kArms x (hidden_width ? hidden_width : input_dim)
    std::vector<double> b2;               // kArms

    std::vector<double> critic_w;  // input_dim
    double critic_b = 0.0;

    std::uint64_t seed = 0;

    static PolicyParams init(std::size_t input_dim, std::size_t hidden_width, std::uint64_t seed) {
        PolicyParams p;
        p.input_dim = input_dim;
        p.hidden_width = hidden_width;
        p.seed = seed;
        Rng rng(mix_seed(seed, "policy-init"));
        const double scale = 0.01;
        auto fill = [&](std::vector<double>& v, std::size_t n) {
            v.resize(n);
            for (auto& x : v) x = rng.normal(0.0, scale);
        };
        if (hidden_width > 0) {
            p.w1.resize(hidden_width);
            for (auto& row : p.w1) fill(row, input_dim);
            fill(p.b1, hidden_width);
        }
        const std::size_t in2 = hidden_width > 0 ? hidden_width : input_dim;
        p.w2.resize(kArms);
        for (auto& row : p.w2) fill(row, in2);
        fill(p.b2, kArms);
        fill(p.critic_w, input_dim);
        p.critic_b = rng.normal(0.0, scale);
        return p;
    }

    bool finite() const {
        auto ok = [](double x) { return std::isfinite(x); };
        for (const auto& row : w1)
            for (double x : row)
                if (!ok(x)) return false;
        for (double x : b1)
            if (!ok(x)) return false;
        for (const auto& row : w2)
            for (double x : row)
                if (!ok(x)) return false;
        for (double x : b2)
            if (!ok(x)) return false;
        for (double x : critic_w)
            if (!ok(x)) return false;
        return ok(critic_b);
    }

    Json to_json() const {
        return Json{{"input_dim", input_dim}, {"hidden_width", hidden_width},
                    {"w1", w1},               {"b1", b1},
                    {"w2", w2},               {"b2", b2},
                    {"critic_w", critic_w},   {"critic_b", critic_b},
                    {"seed", seed}};
    }

    static PolicyParams from_json(const Json& j) {
        PolicyParams p;
        p.input_dim = j.at("input_dim").get<std::size_t>();
        p.hidden_width = j.at("hidden_width").get<std::size_t>();
        p.w1 = j.at("w1").get<std::vector<std::vector<double>>>();
        p.b1 = j.at("b1").get<std::vector<double>>();
        p.w2 = j.at("w2").get<std::vector<std::vector<double>>>();
        p.b2 = j.at("b2").get<std::vector<double>>();
        p.critic_w = j.at("critic_w").get<std::vector<double>>();
        p.critic_b = j.at("critic_b").get<double>();
        p.seed = j.at("seed").get<std::uint64_t>();
        return p;
    }
};

struct ActorForward {
    std::array<double, kArms> logits{};
    std::array<double, kArms> probs{};
    std::vector<double> hidden;  // post-tanh, hidden actor only
};

inline std::array<double, kArms> softmax3(const std::array<double, kArms>& logits) {
    const double m = std::max({logits[0], logits[1], logits[2]});
    std::array<double, kArms> out{};
    double sum = 0.0;
    for (std::size_t i = 0; i < kArms; ++i) {
        out[i] = std::exp(logits[i] - m);
        sum += out[i];
    }
    for (auto& x : out) x /= sum;
    return out;
}

inline ActorForward actor_forward(const PolicyParams& p, const std::vector<double>& z) {
    if (z.size() != p.input_dim)
        throw BanditError("state dimension mismatch: got " + std::to_string(z.size()) +
                          ", expected " + std::to_string(p.input_dim));
    ActorForward f;
    const std::vector<double>* in = &z;
    if (p.hidden_width > 0) {
        f.hidden.resize(p.hidden_width);
        for (std::size_t h = 0; h < p.hidden_width; ++h) {
            double s = p.b1[h];
            for (std::size_t k = 0; k < p.input_dim; ++k) s += p.w1[h][k] * z[k];
            f.hidden[h] = std::tanh(s);
        }
        in = &f.hidden;
    }
    for (std::size_t a = 0; a < kArms; ++a) {
        double s = p.b2[a];
        for (std::size_t k = 0; k < in->size(); ++k) s += p.w2[a][k] * (*in)[k];
        f.logits[a] = s;
    }
    f.probs = softmax3(f.logits);
    return f;
}

inline double critic_value(const PolicyParams& p, const std::vector<double>& z) {
    if (z.size() != p.input_dim) throw BanditError("state dimension mismatch in critic");
    double s = p.critic_b;
    for (std::size_t k = 0; k < p.input_dim; ++k) s += p.critic_w[k] * z[k];
    return s;
}

/// One bandit interaction. behavior_prob is the epsilon-mixture probability
/// of the recorded action at collection time.
struct BanditTransition {
    std::vector<double> state;
    int action = 0;
    double reward = 0.0;
    std::vector<double> next_state;
    double behavior_prob = 1.0;
};

class ReplayBuffer {
public:
    explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {}

    void push(BanditTransition t) {
        buffer_.push_back(std::move(t));
        if (buffer_.size() > capacity_) buffer_.pop_front();
    }

    std::size_t size() const { return buffer_.size(); }
    std::size_t capacity() const { return capacity_; }
    const BanditTransition& operator[](std::size_t i) const { return buffer_[i]; }
    BanditTransition& back() { return buffer_.back(); }

    /// Newest n transitions, oldest first.
    std::vector<BanditTransition> last(std::size_t n) const {
        const std::size_t take = std::min(n, buffer_.size());
        return {buffer_.end() - static_cast<long>(take), buffer_.end()};
    }

private:
    std::size_t capacity_;
    std::deque<BanditTransition> buffer_;
};

struct ActResult {
    int action = 0;
    double behavior_prob = 0.0;
};

/// Epsilon-greedy over the softmax policy. The recorded probability is the
/// mixture eps/3 + (1-eps) * pi(a|z), which is what the PPO ratio divides by.
inline ActResult act(const PolicyParams& params, const std::vector<double>& z, double epsilon,
                     Rng& rng) {
    ActorForward f = actor_forward(params, z);
    int action;
    if (epsilon > 0.0 && rng.u01() < epsilon) {
        action = static_cast<int>(rng.index(kArms));
    } else {
        const double r = rng.u01();
        double acc = 0.0;
        action = kArms - 1;
        for (std::size_t a = 0; a < kArms; ++a) {
            acc += f.probs[a];
            if (r < acc) {
                action = static_cast<int>(a);
                break;
            }
        }
    }
    const double prob = epsilon / 3.0 + (1.0 - epsilon) * f.probs[action];
    return {action, prob};
}

inline ActResult act(const PolicyParams& params, const std::vector<double>& z, double epsilon,
                     std::uint64_t seed) {
    Rng rng(mix_seed(seed, "act"));
    return act(params, z, epsilon, rng);
}

struct RewardDraw {
    double reward = 0.0;
    std::string reflection_id;
    bool void_arm = false;  // chosen bank was empty, reward forced to 0
};

/// Reward for pulling an arm: draw one stored reflection from that bank with
/// probability softmax(imp / tau) and pay out its measured improvement. No
/// LLM call happens here.
inline RewardDraw reward_for(const BankSet& banks, const std::string& user_id, int action,
                             double tau, Rng& rng) {
    const MemoryBank* bank = banks.find(user_id, perspective_from_code(action));
    if (bank == nullptr || bank->empty()) return {0.0, "", true};
    std::vector<const Reflection*> pool;
    for (const auto& e : bank->entries()) pool.push_back(&e);
    double max_imp = -1e300;
    for (const Reflection* r : pool) max_imp = std::max(max_imp, *r->imp);
    std::vector<double> weights;
    for (const Reflection* r : pool) weights.push_back(std::exp((*r->imp - max_imp) / tau));
    const std::size_t pick = rng.pick_weighted(weights);
    return {*pool[pick]->imp, pool[pick]->reflection_id, false};
}

inline RewardDraw reward_for(const BankSet& banks, const std::string& user_id, int action,
                             double tau, std::uint64_t seed) {
    Rng rng(mix_seed(seed, "reward"));
    return reward_for(banks, user_id, action, tau, rng);
}

/// Clipped-surrogate value for a single sample.
inline double clipped_surrogate(double ratio, double advantage, double clip_delta) {
    const double clipped = std::clamp(ratio, 1.0 - clip_delta, 1.0 + clip_delta);
    return std::min(ratio * advantage, clipped * advantage);
}

/// Mean clipped surrogate over a batch (plus the optional entropy bonus).
/// Advantages are passed in explicitly: they are computed from the critic
/// before an update and held fixed while the actor moves.
inline double actor_objective(const PolicyParams& params,
                              const std::vector<BanditTransition>& batch,
                              const std::vector<double>& advantages, const PpoConfig& config) {
    double total = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        ActorForward f = actor_forward(params, batch[i].state);
        const double ratio = f.probs[batch[i].action] / batch[i].behavior_prob;
        total += clipped_surrogate(ratio, advantages[i], config.clip_delta);
        if (config.entropy_coef != 0.0) {
            double h = 0.0;
            for (double p : f.probs)
                if (p > 0.0) h -= p * std::log(p);
            total += config.entropy_coef * h;
        }
    }
    return total / static_cast<double>(batch.size());
}

inline double critic_loss(const PolicyParams& params, const std::vector<BanditTransition>& batch) {
    double total = 0.0;
    for (const auto& t : batch) {
        const double d = critic_value(params, t.state) - t.reward;
        total += d * d;
    }
    return total / static_cast<double>(batch.size());
}

struct ActorGrad {
    std::vector<std::vector<double>> w1;
    std::vector<double> b1;
    std::vector<std::vector<double>> w2;
    std::vector<double> b2;
};

struct CriticGrad {
    std::vector<double> w;
    double b = 0.0;
};

/// Analytic gradient of actor_objective with respect to the actor params.
inline ActorGrad actor_gradient(const PolicyParams& params,
                                const std::vector<BanditTransition>& batch,
                                const std::vector<double>& advantages, const PpoConfig& config) {
    ActorGrad g;
    const std::size_t in2 = params.hidden_width > 0 ? params.hidden_width : params.input_dim;
    g.w2.assign(kArms, std::vector<double>(in2, 0.0));
    g.b2.assign(kArms, 0.0);
    if (params.hidden_width > 0) {
        g.w1.assign(params.hidden_width, std::vector<double>(params.input_dim, 0.0));
        g.b1.assign(params.hidden_width, 0.0);
    }

    const double inv_n = 1.0 / static_cast<double>(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto& t = batch[i];
        ActorForward f = actor_forward(params, t.state);
        const int a = t.action;
        const double ratio = f.probs[a] / t.behavior_prob;
        const double clipped = std::clamp(ratio, 1.0 - config.clip_delta, 1.0 + config.clip_delta);
        const double term_raw = ratio * advantages[i];
        const double term_clip = clipped * advantages[i];

        // d(objective)/d(logit_j) accumulated here
        std::array<double, kArms> dlogits{};

        if (term_raw <= term_clip) {
            // min() selects the unclipped branch; gradient flows through ratio
            const double coef = advantages[i] / t.behavior_prob;
            for (std::size_t j = 0; j < kArms; ++j) {
                const double dpa_dlj = f.probs[a] * ((static_cast<int>(j) == a ? 1.0 : 0.0) - f.probs[j]);
                dlogits[j] += coef * dpa_dlj;
            }
        }
        if (config.entropy_coef != 0.0) {
            double h = 0.0;
            for (double p : f.probs)
                if (p > 0.0) h -= p * std::log(p);
            for (std::size_t j = 0; j < kArms; ++j) {
                const double pj = f.probs[j];
                if (pj > 0.0) dlogits[j] += config.entropy_coef * (-pj * (std::log(pj) + h));
            }
        }

        const std::vector<double>& in = params.hidden_width > 0 ? f.hidden : t.state;
        for (std::size_t j = 0; j < kArms; ++j) {
            g.b2[j] += inv_n * dlogits[j];
            for (std::size_t k = 0; k < in.size(); ++k) g.w2[j][k] += inv_n * dlogits[j] * in[k];
        }
        if (params.hidden_width > 0) {
            for (std::size_t hgt = 0; hgt < params.hidden_width; ++hgt) {
                double dh = 0.0;
                for (std::size_t j = 0; j < kArms; ++j) dh += dlogits[j] * params.w2[j][hgt];
                const double dpre = dh * (1.0 - f.hidden[hgt] * f.hidden[hgt]);  // tanh'
                g.b1[hgt] += inv_n * dpre;
                for (std::size_t k = 0; k < params.input_dim; ++k)
                    g.w1[hgt][k] += inv_n * dpre * t.state[k];
            }
        }
    }
    return g;
}

inline CriticGrad critic_gradient(const PolicyParams& params,
                                  const std::vector<BanditTransition>& batch) {
    CriticGrad g;
    g.w.assign(params.input_dim, 0.0);
    const double inv_n = 1.0 / static_cast<double>(batch.size());
    for (const auto& t : batch) {
        const double d = 2.0 * (critic_value(params, t.state) - t.reward);
        g.b += inv_n * d;
        for (std::size_t k = 0; k < params.input_dim; ++k) g.w[k] += inv_n * d * t.state[k];
    }
    return g;
}

struct PpoLosses {
    double actor_objective = 0.0;  // before the step
    double critic_loss = 0.0;      // before the step
};

/// One PPO step on a batch: advantages r - V(z) from the current critic,
/// then one actor ascent step and one critic descent step.
inline PpoLosses ppo_update(PolicyParams& params, const std::vector<BanditTransition>& batch,
                            const PpoConfig& config) {
    if (batch.empty()) throw BanditError("ppo_update: empty batch");
    for (const auto& t : batch)
        if (!(t.behavior_prob > 0.0)) throw BanditError("ppo_update: behavior_prob must be > 0");

    std::vector<double> advantages(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i)
        advantages[i] = batch[i].reward - critic_value(params, batch[i].state);
    if (config.advantage_norm) {
        double mean = 0.0;
        for (double a : advantages) mean += a;
        mean /= static_cast<double>(advantages.size());
        double var = 0.0;
        for (double a : advantages) var += (a - mean) * (a - mean);
        var /= static_cast<double>(advantages.size());
        const double sd = std::sqrt(var) + 1e-8;
        for (double& a : advantages) a = (a - mean) / sd;
    }

    PpoLosses losses;
    losses.actor_objective = actor_objective(params, batch, advantages, config);
    losses.critic_loss = critic_loss(params, batch);

    ActorGrad ag = actor_gradient(params, batch, advantages, config);
    CriticGrad cg = critic_gradient(params, batch);

    for (std::size_t j = 0; j < kArms; ++j) {
        params.b2[j] += config.actor_lr * ag.b2[j];
        for (std::size_t k = 0; k < params.w2[j].size(); ++k)
            params.w2[j][k] += config.actor_lr * ag.w2[j][k];
    }
    if (params.hidden_width > 0) {
        for (std::size_t h = 0; h < params.hidden_width; ++h) {
            params.b1[h] += config.actor_lr * ag.b1[h];
            for (std::size_t k = 0; k < params.input_dim; ++k)
                params.w1[h][k] += config.actor_lr * ag.w1[h][k];
        }
    }
    params.critic_b -= config.critic_lr * cg.b;
    for (std::size_t k = 0; k < params.input_dim; ++k)
        params.critic_w[k] -= config.critic_lr * cg.w[k];

    if (!params.finite())
        throw BanditError("ppo_update produced non-finite parameters (actor_obj=" +
                          std::to_string(losses.actor_objective) +
                          ", critic_loss=" + std::to_string(losses.critic_loss) + ")");
    return losses;
}

struct TrainLogRow {
    std::size_t step = 0;
    double mean_reward = 0.0;  // over the last batch window
    double actor_objective = 0.0;
    double critic_loss = 0.0;
};

struct TrainResult {
    PolicyParams params;
    std::vector<TrainLogRow> log;
    std::size_t void_arm_draws = 0;
};

/// PPO training over precomputed bank rewards: sample a user, act, pay the
/// sampled reflection's improvement as reward, and update every batch_size
/// steps for the configured number of epochs.
inline TrainResult train_policy(const BankSet& banks, const CfModel& cf_model,
                                const std::vector<std::string>& users,
                                const std::map<std::string, std::vector<std::string>>& histories,
                                const PpoConfig& config) {
    if (users.empty()) throw BanditError("train_policy: no users");

    std::map<std::string, std::vector<double>> states;
    for (const auto& u : users) states[u] = embed_state(cf_model, u, histories.at(u));
    const std::size_t dim = states.begin()->second.size();

    TrainResult result;
    result.params = PolicyParams::init(dim, config.hidden_width, config.seed);
    if (config.steps == 0) return result;

    ReplayBuffer buffer(config.buffer_capacity);
    Rng rng(mix_seed(config.seed, "train"));
    double window_reward = 0.0;
    std::size_t window_count = 0;

    for (std::size_t step = 1; step <= config.steps; ++step) {
        const std::string& user = users[rng.index(users.size())];
        const std::vector<double>& z = states[user];
        ActResult a = act(result.params, z, config.epsilon, rng);
        RewardDraw draw = reward_for(banks, user, a.action, config.tau, rng);
        if (draw.void_arm) ++result.void_arm_draws;

        if (buffer.size() > 0) buffer.back().next_state = z;  // single-step bandit chaining
        BanditTransition t;
        t.state = z;
        t.action = a.action;
        t.reward = draw.reward;
        t.next_state = z;
        t.behavior_prob = a.behavior_prob;
        buffer.push(std::move(t));

        window_reward += draw.reward;
        ++window_count;

        if (step % config.batch_size == 0) {
            const std::vector<BanditTransition> batch = buffer.last(config.batch_size);
            PpoLosses losses{};
            for (std::size_t e = 0; e < config.epochs; ++e)
                losses = ppo_update(result.params, batch, config);
            result.log.push_back({step, window_reward / static_cast<double>(window_count),
                                  losses.actor_objective, losses.critic_loss});
            window_reward = 0.0;
            window_count = 0;
        }
    }
    return result;
}

struct InferResult {
    Perspective perspective = Perspective::EP;
    std::optional<Reflection> reflection;  // empty bank -> no-reflection fallback
    std::array<double, kArms> probs{};
};

/// Greedy inference: argmax arm from the actor, then the highest-imp
/// reflection from that bank. An empty bank falls back to no reflection.
inline InferResult infer(const PolicyParams& params, const BankSet& banks,
                         const CfModel& cf_model, const std::string& user_id,
                         const std::vector<std::string>& history) {
    ActorForward f = actor_forward(params, embed_state(cf_model, user_id, history));
    std::size_t best = 0;
    for (std::size_t a = 1; a < kArms; ++a)
        if (f.probs[a] > f.probs[best]) best = a;
    InferResult out;
    out.perspective = perspective_from_code(static_cast<int>(best));
    out.probs = f.probs;
    const MemoryBank* bank = banks.find(user_id, out.perspective);
    if (bank != nullptr && !bank->empty()) out.reflection = bank->best();
    return out;
}

}  // namespace morerec
