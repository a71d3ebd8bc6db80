#include "morerec/policy.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace morerec;

namespace {

PolicyParams zero_affine(std::size_t dim) {
    PolicyParams p;
    p.input_dim = dim;
    p.hidden_width = 0;
    p.w2.assign(kArms, std::vector<double>(dim, 0.0));
    p.b2.assign(kArms, 0.0);
    p.critic_w.assign(dim, 0.0);
    return p;
}

std::vector<double> random_state(Rng& rng, std::size_t dim) {
    std::vector<double> z(dim);
    for (auto& x : z) x = rng.normal();
    return z;
}

BanditTransition transition(std::vector<double> z, int action, double reward,
                            double behavior_prob) {
    BanditTransition t;
    t.state = std::move(z);
    t.next_state = t.state;
    t.action = action;
    t.reward = reward;
    t.behavior_prob = behavior_prob;
    return t;
}

Reflection bank_entry(const std::string& id, const std::string& user, Perspective p, double imp) {
    Reflection r;
    r.reflection_id = id;
    r.user_id = user;
    r.perspective = p;
    r.text = "t";
    r.imp = imp;
    r.effective = imp > 0.1;
    r.metric_name = "ndcg@10";
    return r;
}

}  // namespace

TEST(Act, ZeroParamsGiveUniformPolicy) {
    PolicyParams p = zero_affine(4);
    ActorForward f = actor_forward(p, {1.0, -2.0, 0.5, 3.0});
    for (double prob : f.probs) EXPECT_DOUBLE_EQ(prob, 1.0 / 3.0);

    Rng rng(7);
    std::array<int, 3> counts{};
    for (int i = 0; i < 10000; ++i) counts[act(p, {1.0, -2.0, 0.5, 3.0}, 0.0, rng).action]++;
    for (int c : counts) EXPECT_NEAR(c / 10000.0, 1.0 / 3.0, 0.02);
}

TEST(Act, FullExplorationIsUniform) {
    PolicyParams p = zero_affine(2);
    p.b2 = {100.0, 0.0, 0.0};  // heavily biased policy, ignored at eps = 1
    Rng rng(11);
    std::array<int, 3> counts{};
    for (int i = 0; i < 10000; ++i) counts[act(p, {0.0, 0.0}, 1.0, rng).action]++;
    for (int c : counts) EXPECT_NEAR(c / 10000.0, 1.0 / 3.0, 0.02);
}

TEST(Act, DominantLogitWinsWithoutExploration) {
    PolicyParams p = zero_affine(2);
    p.b2 = {10.0, 0.0, 0.0};
    Rng rng(13);
    int arm0 = 0;
    for (int i = 0; i < 10000; ++i)
        if (act(p, {0.0, 0.0}, 0.0, rng).action == 0) ++arm0;
    EXPECT_GE(arm0 / 10000.0, 0.99);
}

TEST(Act, BehaviorProbIsTheMixture) {
    PolicyParams p = zero_affine(2);
    Rng rng(3);
    ActResult r = act(p, {0.0, 0.0}, 0.3, rng);
    // uniform policy: mixture = 0.3/3 + 0.7/3 = 1/3 for every arm
    EXPECT_NEAR(r.behavior_prob, 1.0 / 3.0, 1e-12);
}

TEST(Act, DimensionMismatchRaises) {
    PolicyParams p = zero_affine(4);
    Rng rng(1);
    EXPECT_THROW(act(p, {1.0, 2.0}, 0.0, rng), BanditError);
}

TEST(Softmax, NormalizesToOne) {
    Rng rng(5);
    for (int i = 0; i < 200; ++i) {
        std::array<double, kArms> logits{rng.normal(0, 10), rng.normal(0, 10), rng.normal(0, 10)};
        auto probs = softmax3(logits);
        EXPECT_NEAR(probs[0] + probs[1] + probs[2], 1.0, 1e-9);
    }
}

TEST(ClippedSurrogate, PinnedArithmetic) {
    EXPECT_DOUBLE_EQ(clipped_surrogate(1.5, 1.0, 0.2), 1.2);
    EXPECT_DOUBLE_EQ(clipped_surrogate(0.5, -1.0, 0.2), -0.8);
    EXPECT_DOUBLE_EQ(clipped_surrogate(1.0, 0.7, 0.2), 0.7);
}

TEST(ClippedSurrogate, NeverExceedsClipBound) {
    Rng rng(17);
    for (int i = 0; i < 1000; ++i) {
        const double ratio = 0.05 + 3.0 * rng.u01();
        const double adv = rng.normal();
        const double delta = 0.1 + 0.3 * rng.u01();
        EXPECT_LE(clipped_surrogate(ratio, adv, delta), (1.0 + delta) * std::abs(adv) + 1e-12);
    }
}

TEST(PpoUpdate, ZeroAdvantageLeavesActorUnchanged) {
    PolicyParams p = PolicyParams::init(4, 0, 3);
    p.critic_w.assign(4, 0.0);
    p.critic_b = 0.0;
    PolicyParams before = p;

    Rng rng(9);
    std::vector<BanditTransition> batch;
    for (int i = 0; i < 8; ++i)
        batch.push_back(transition(random_state(rng, 4), i % 3, 0.0, 0.4));  // r = V = 0

    PpoConfig cfg;
    ppo_update(p, batch, cfg);
    EXPECT_EQ(p.w2, before.w2);
    EXPECT_EQ(p.b2, before.b2);
}

TEST(PpoUpdate, EmptyBatchAndBadProbRaise) {
    PolicyParams p = PolicyParams::init(2, 0, 1);
    PpoConfig cfg;
    EXPECT_THROW(ppo_update(p, {}, cfg), BanditError);
    std::vector<BanditTransition> bad = {transition({0.0, 0.0}, 0, 1.0, 0.0)};
    EXPECT_THROW(ppo_update(p, bad, cfg), BanditError);
}

// Central finite differences over every actor parameter, affine and hidden.
TEST(Gradients, ActorMatchesFiniteDifferences) {
    for (std::size_t hidden : {0u, 8u}) {
        Rng rng(mix_seed(23, hidden));
        PolicyParams p = PolicyParams::init(5, hidden, 31 + hidden);
        // put some scale into the params so probs are not uniform
        for (auto& row : p.w2)
            for (auto& x : row) x = rng.normal(0, 0.5);
        std::vector<BanditTransition> batch;
        std::vector<double> advantages;
        for (int i = 0; i < 6; ++i) {
            batch.push_back(transition(random_state(rng, 5), static_cast<int>(rng.index(3)),
                                       rng.normal(), 0.2 + 0.6 * rng.u01()));
            advantages.push_back(rng.normal());
        }
        PpoConfig cfg;
        cfg.entropy_coef = 0.05;  // exercise the entropy path too

        ActorGrad g = actor_gradient(p, batch, advantages, cfg);
        const double h = 1e-6;
        auto check = [&](double& param, double analytic) {
            const double saved = param;
            param = saved + h;
            const double up = actor_objective(p, batch, advantages, cfg);
            param = saved - h;
            const double down = actor_objective(p, batch, advantages, cfg);
            param = saved;
            const double fd = (up - down) / (2 * h);
            const double denom = std::max({std::abs(fd), std::abs(analytic), 1e-8});
            EXPECT_LT(std::abs(fd - analytic) / denom, 1e-4)
                << "fd=" << fd << " analytic=" << analytic << " hidden=" << hidden;
        };
        for (std::size_t j = 0; j < kArms; ++j) {
            check(p.b2[j], g.b2[j]);
            for (std::size_t k = 0; k < p.w2[j].size(); ++k) check(p.w2[j][k], g.w2[j][k]);
        }
        if (hidden > 0) {
            for (std::size_t hh = 0; hh < hidden; ++hh) {
                check(p.b1[hh], g.b1[hh]);
                for (std::size_t k = 0; k < 5; ++k) check(p.w1[hh][k], g.w1[hh][k]);
            }
        }
    }
}

TEST(Gradients, CriticMatchesFiniteDifferences) {
    Rng rng(29);
    PolicyParams p = PolicyParams::init(4, 0, 7);
    std::vector<BanditTransition> batch;
    for (int i = 0; i < 6; ++i)
        batch.push_back(transition(random_state(rng, 4), 0, rng.normal(), 0.5));
    CriticGrad g = critic_gradient(p, batch);
    const double h = 1e-6;
    auto check = [&](double& param, double analytic) {
        const double saved = param;
        param = saved + h;
        const double up = critic_loss(p, batch);
        param = saved - h;
        const double down = critic_loss(p, batch);
        param = saved;
        const double fd = (up - down) / (2 * h);
        EXPECT_NEAR(fd, analytic, 1e-4 * std::max(1.0, std::abs(fd)));
    };
    check(p.critic_b, g.b);
    for (std::size_t k = 0; k < 4; ++k) check(p.critic_w[k], g.w[k]);
}

// With a zero-bias affine actor, scaling the state by a positive constant
// rescales logits but keeps the argmax arm.
TEST(Actor, ArgmaxInvariantUnderPositiveScaling) {
    Rng rng(41);
    for (int trial = 0; trial < 100; ++trial) {
        PolicyParams p = zero_affine(6);
        for (auto& row : p.w2)
            for (auto& x : row) x = rng.normal();
        std::vector<double> z = random_state(rng, 6);
        std::vector<double> scaled = z;
        const double c = 0.1 + 5.0 * rng.u01();
        for (auto& x : scaled) x *= c;

        auto argmax = [&](const std::vector<double>& state) {
            ActorForward f = actor_forward(p, state);
            return std::distance(f.logits.begin(),
                                 std::max_element(f.logits.begin(), f.logits.end()));
        };
        EXPECT_EQ(argmax(z), argmax(scaled));
    }
}

TEST(ReplayBuffer, FifoEviction) {
    ReplayBuffer buf(5);
    for (int i = 0; i < 8; ++i) buf.push(transition({double(i)}, 0, i, 1.0));
    EXPECT_EQ(buf.size(), 5u);
    // first 3 are gone; oldest remaining is reward 3
    EXPECT_DOUBLE_EQ(buf[0].reward, 3.0);
    auto last2 = buf.last(2);
    EXPECT_DOUBLE_EQ(last2[0].reward, 6.0);
    EXPECT_DOUBLE_EQ(last2[1].reward, 7.0);
}

TEST(RewardFor, SingletonBankPaysItsImp) {
    BankSet banks;
    banks.bank("u1", Perspective::IP).append(bank_entry("R000001-u1-IP-r0", "u1", Perspective::IP, 0.25));
    Rng rng(3);
    RewardDraw d = reward_for(banks, "u1", perspective_code(Perspective::IP), 1.0, rng);
    EXPECT_DOUBLE_EQ(d.reward, 0.25);
    EXPECT_FALSE(d.void_arm);
    EXPECT_EQ(d.reflection_id, "R000001-u1-IP-r0");
}

TEST(RewardFor, SoftmaxExpectationMatchesClosedForm) {
    BankSet banks;
    banks.bank("u1", Perspective::EP).append(bank_entry("Ra", "u1", Perspective::EP, 0.5));
    banks.bank("u1", Perspective::EP).append(bank_entry("Rb", "u1", Perspective::EP, -0.5));
    const double p_first = std::exp(0.5) / (std::exp(0.5) + std::exp(-0.5));
    const double expected = 0.5 * p_first + (-0.5) * (1.0 - p_first);
    EXPECT_NEAR(expected, 0.2310585786300049, 1e-15);

    double total = 0.0;
    const int trials = 10000;
    for (int t = 0; t < trials; ++t) {
        Rng rng(mix_seed(777, t));
        total += reward_for(banks, "u1", 0, 1.0, rng).reward;
    }
    EXPECT_NEAR(total / trials, expected, 0.02);
}

TEST(RewardFor, EmptyBankIsVoidArm) {
    BankSet banks;
    Rng rng(1);
    RewardDraw d = reward_for(banks, "ghost", 2, 1.0, rng);
    EXPECT_TRUE(d.void_arm);
    EXPECT_DOUBLE_EQ(d.reward, 0.0);
}

namespace {

/// Tiny world for train/infer tests: n users with cluster-aligned states.
struct BanditWorld {
    CfModel model;
    std::vector<std::string> users;
    std::map<std::string, std::vector<std::string>> histories;
    BankSet banks;

    explicit BanditWorld(std::size_t n_users, std::uint64_t seed = 1)
        : model(make_model(n_users, seed)) {
        for (std::size_t i = 0; i < n_users; ++i) {
            users.push_back(user_name(i));
            histories[user_name(i)] = {"item0"};
        }
    }

    static std::string user_name(std::size_t i) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "u%03zu", i);
        return buf;
    }

    static CfModel make_model(std::size_t n_users, std::uint64_t seed) {
        std::vector<std::string> ids;
        for (std::size_t i = 0; i < n_users; ++i) ids.push_back(user_name(i));
        CfConfig cfg;
        cfg.dim = 4;
        CfModel m(ids, {"item0"}, cfg);
        Rng rng(seed);
        for (auto& id : ids)
            for (auto& x : m.user_embedding(id)) x = rng.normal();
        return m;
    }

    void fill_uniform_rewards(int best_arm, double best = 0.5, double others = -0.2) {
        for (const auto& u : users) {
            for (Perspective p : kAllPerspectives) {
                const double imp = perspective_code(p) == best_arm ? best : others;
                Reflection r = bank_entry("", u, p, imp);
                banks.assign_id(r);
                banks.bank(u, p).append(std::move(r));
            }
        }
    }
};

}  // namespace

TEST(Train, ZeroStepsReturnsSeededInit) {
    BanditWorld w(8);
    w.fill_uniform_rewards(2);
    PpoConfig cfg;
    cfg.steps = 0;
    cfg.seed = 5;
    TrainResult r = train_policy(w.banks, w.model, w.users, w.histories, cfg);
    PolicyParams expected = PolicyParams::init(8, 0, 5);
    EXPECT_EQ(r.params.w2, expected.w2);
    EXPECT_EQ(r.params.b2, expected.b2);
    EXPECT_TRUE(r.log.empty());
}

TEST(Train, DeterministicPerSeed) {
    BanditWorld w(8);
    w.fill_uniform_rewards(1);
    PpoConfig cfg;
    cfg.steps = 300;
    cfg.batch_size = 32;
    cfg.seed = 9;
    TrainResult a = train_policy(w.banks, w.model, w.users, w.histories, cfg);
    TrainResult b = train_policy(w.banks, w.model, w.users, w.histories, cfg);
    EXPECT_EQ(a.params.w2, b.params.w2);
    EXPECT_EQ(a.params.b2, b.params.b2);
    ASSERT_EQ(a.log.size(), b.log.size());
    for (std::size_t i = 0; i < a.log.size(); ++i)
        EXPECT_DOUBLE_EQ(a.log[i].mean_reward, b.log[i].mean_reward);
}

TEST(Train, LearnsTheBestArmQuickly) {
    BanditWorld w(12);
    w.fill_uniform_rewards(2);
    PpoConfig cfg;
    cfg.steps = 2000;
    cfg.seed = 3;
    TrainResult r = train_policy(w.banks, w.model, w.users, w.histories, cfg);
    int correct = 0;
    for (const auto& u : w.users) {
        InferResult inf = infer(r.params, w.banks, w.model, u, w.histories.at(u));
        correct += inf.perspective == Perspective::CF;
    }
    EXPECT_GE(correct, 11);  // >= ~95%
}

TEST(Infer, ArgmaxPerspectiveAndBestReflection) {
    BanditWorld w(2);
    PolicyParams p = zero_affine(8);
    p.b2 = {0.2, 0.9, 0.1};
    w.banks.bank("u000", Perspective::IP)
        .append(bank_entry("Ra", "u000", Perspective::IP, 0.1));
    w.banks.bank("u000", Perspective::IP)
        .append(bank_entry("Rb", "u000", Perspective::IP, 0.4));
    InferResult r = infer(p, w.banks, w.model, "u000", {"item0"});
    EXPECT_EQ(r.perspective, Perspective::IP);
    ASSERT_TRUE(r.reflection.has_value());
    EXPECT_EQ(r.reflection->reflection_id, "Rb");
}

TEST(Infer, EmptyBankFallsBackToNoReflection) {
    BanditWorld w(2);
    PolicyParams p = zero_affine(8);
    p.b2 = {0.0, 0.0, 1.0};
    InferResult r = infer(p, w.banks, w.model, "u000", {"item0"});
    EXPECT_EQ(r.perspective, Perspective::CF);
    EXPECT_FALSE(r.reflection.has_value());
}

TEST(PolicyParams, JsonRoundTrip) {
    PolicyParams p = PolicyParams::init(6, 4, 77);
    PolicyParams q = PolicyParams::from_json(Json::parse(p.to_json().dump()));
    EXPECT_EQ(p.w1, q.w1);
    EXPECT_EQ(p.b1, q.b1);
    EXPECT_EQ(p.w2, q.w2);
    EXPECT_EQ(p.b2, q.b2);
    EXPECT_EQ(p.critic_w, q.critic_w);
    EXPECT_DOUBLE_EQ(p.critic_b, q.critic_b);
}
