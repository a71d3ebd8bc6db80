#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "morerec/config.hpp"
#include "morerec/eval.hpp"

namespace morerec {

class PipelineError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline const std::vector<std::string>& pipeline_stages() {
    static const std::vector<std::string> stages = {
        "ingest",  "split",   "train-cf", "cluster",      "predict-offline", "reflect",
        "score",   "iterate", "refine",   "train-bandit", "eval"};
    return stages;
}

/// Runs the offline/online pipeline stage by stage. Every stage reads its
/// inputs from files the previous stages wrote and commits its own outputs
/// atomically, so a run killed at any stage boundary resumes to an identical
/// result. The manifest records completion and artifact hashes.
class Pipeline {
public:
    explicit Pipeline(RunConfig config)
        : config_(std::move(config)), run_dir_(config_.run_dir) {
        config_.validate();
    }

    const fs::path& run_dir() const { return run_dir_; }
    const RunConfig& config() const { return config_; }

    /// Runs stages in order, skipping the already-completed ones. Stops
    /// after `stop_after` when given (inclusive); empty = run everything.
    void run(const std::string& stop_after = "") {
        fs::create_directories(run_dir_);
        load_or_init_manifest();
        for (const auto& stage : pipeline_stages()) {
            run_stage(stage);
            if (stage == stop_after) break;
        }
    }

    /// Runs one named stage (plus nothing else); its inputs must exist.
    void run_stage(const std::string& stage) {
        fs::create_directories(run_dir_);
        load_or_init_manifest();
        if (completed(stage)) return;
        try {
            execute(stage);
        } catch (const PipelineError&) {
            throw;
        } catch (const std::exception& e) {
            throw PipelineError("stage '" + stage + "' failed: " + e.what() +
                                " (resume token: " + stage + ")");
        }
        mark_completed(stage);
    }

    bool completed(const std::string& stage) const {
        for (const auto& s : manifest_.at("completed"))
            if (s.get<std::string>() == stage) return true;
        return false;
    }

    Json manifest() const { return manifest_; }

private:
    void load_or_init_manifest() {
        const fs::path path = run_dir_ / "manifest.json";
        if (fs::exists(path)) {
            manifest_ = Json::parse(read_file(path));
            if (manifest_.at("config_hash").get<std::string>() != config_.config_hash())
                throw PipelineError("run directory was created with a different config (hash " +
                                    manifest_.at("config_hash").get<std::string>() + ")");
            return;
        }
        manifest_ = Json{{"config_hash", config_.config_hash()},
                         {"config", config_.to_json()},
                         {"template_hashes",
                          Json{{"REC", template_hash(TemplateId::Rec)},
                               {"EP", template_hash(TemplateId::Ep)},
                               {"IP", template_hash(TemplateId::Ip)},
                               {"CF", template_hash(TemplateId::Cf)}}},
                         {"completed", Json::array()},
                         {"artifacts", Json::object()}};
        save_manifest();
    }

    void save_manifest() { write_file_atomic(run_dir_ / "manifest.json", manifest_.dump(2)); }

    void mark_completed(const std::string& stage) {
        manifest_["completed"].push_back(stage);
        save_manifest();
    }

    void record_artifact(const std::string& stage, const fs::path& file) {
        manifest_["artifacts"][stage][file.filename().string()] = sha256_hex(read_file(file));
    }

    void write_artifact(const std::string& stage, const fs::path& file,
                        const std::string& content) {
        write_file_atomic(file, content);
        record_artifact(stage, file);
    }

    // ---- stage inputs -----------------------------------------------------

    Corpus load_corpus() const {
        return Corpus::from_json(Json::parse(read_file(run_dir_ / "corpus.json")));
    }

    std::map<std::string, Split> load_splits() const {
        std::map<std::string, Split> out;
        Json j = Json::parse(read_file(run_dir_ / "splits.json"));
        for (const auto& sj : j) {
            Split s;
            s.user_id = sj.at("user_id").get<std::string>();
            s.train_prefix = sj.at("train_prefix").get<std::vector<std::string>>();
            s.validation_target = sj.at("validation_target").get<std::string>();
            s.test_target = sj.at("test_target").get<std::string>();
            out.emplace(s.user_id, std::move(s));
        }
        return out;
    }

    std::map<std::string, CandidateSet> load_candidates(Phase phase) const {
        std::map<std::string, CandidateSet> out;
        const fs::path file = run_dir_ / (phase == Phase::Validation ? "candidates_val.jsonl"
                                                                     : "candidates_test.jsonl");
        for_each_jsonl(file, [&](std::size_t, const Json& j) {
            CandidateSet cs = CandidateSet::from_json(j);
            out.emplace(cs.user_id, std::move(cs));
        });
        return out;
    }

    std::map<std::string, RankedList> load_baselines() const {
        std::map<std::string, RankedList> out;
        for_each_jsonl(run_dir_ / "offline_baselines.jsonl", [&](std::size_t, const Json& j) {
            RankedList r = RankedList::from_json(j);
            out.emplace(r.user_id, std::move(r));
        });
        return out;
    }

    CfModel load_cf_model() const {
        return CfModel::from_json(Json::parse(read_file(run_dir_ / "cf_model.json")));
    }

    UserClustering load_clusters() const {
        return UserClustering::from_json(Json::parse(read_file(run_dir_ / "clusters.json")));
    }

    std::shared_ptr<LlmBackend> make_backend() {
        if (backend_) return backend_;
        std::shared_ptr<LlmBackend> transport;
        if (config_.backend == BackendKind::Mock) {
            transport = mock_policy(MockScenario::builtin(config_.mock_scenario,
                                                          config_.master_seed));
        } else {
            HttpBackendConfig http;
            http.endpoint = config_.endpoint;
            if (const char* ep = std::getenv("MOREREC_ENDPOINT"); ep && *ep)
                http.endpoint = ep;
            http.model = config_.model;
            http.timeout_ms = config_.timeout_ms;
            http.retry.max_retries = config_.retries;
            http.max_concurrency = config_.max_concurrency;
            transport = std::make_shared<HttpBackend>(http);
        }
        auto audit = std::make_shared<AuditLog>(run_dir_ / "llm_audit.jsonl");
        if (!config_.cache_dir.empty()) {
            auto cache = std::make_shared<CacheStore>(fs::path(config_.cache_dir));
            backend_ = std::make_shared<CachingBackend>(transport, cache, audit);
        } else {
            backend_ = std::make_shared<AuditingBackend>(transport, audit);
        }
        return backend_;
    }

    OfflineContext offline_context(const Corpus& corpus, const std::map<std::string, Split>& splits,
                                   const std::map<std::string, CandidateSet>& val_candidates,
                                   const std::map<std::string, RankedList>& baselines,
                                   const CfModel* cf_model, const UserClustering* clustering,
                                   LlmBackend& backend) const {
        OfflineContext ctx{corpus,   splits,   val_candidates, baselines,
                           backend,  cf_model, clustering,     config_.prompt_config()};
        ctx.metric_name = config_.metric;
        ctx.threshold_h = config_.threshold_h;
        ctx.tau = config_.tau;
        ctx.n_demos = config_.n_demos;
        ctx.seed = mix_seed(config_.master_seed, "offline");
        return ctx;
    }

    // ---- stages -----------------------------------------------------------

    void execute(const std::string& stage) {
        if (stage == "ingest") stage_ingest();
        else if (stage == "split") stage_split();
        else if (stage == "train-cf") stage_train_cf();
        else if (stage == "cluster") stage_cluster();
        else if (stage == "predict-offline") stage_predict_offline();
        else if (stage == "reflect") stage_reflect();
        else if (stage == "score") stage_score();
        else if (stage == "iterate") stage_iterate();
        else if (stage == "refine") stage_refine();
        else if (stage == "train-bandit") stage_train_bandit();
        else if (stage == "eval") stage_eval();
        else throw PipelineError("unknown stage: " + stage + " (resume token: " + stage + ")");
    }

    void stage_ingest() {
        Corpus corpus = ingest(config_.catalog_file, config_.interactions_file);
        write_artifact("ingest", run_dir_ / "corpus.json", corpus.to_json().dump());
        write_artifact("ingest", run_dir_ / "ingest_report.json",
                       corpus.report().to_json().dump(2));
    }

    void stage_split() {
        Corpus corpus = load_corpus();
        Json splits_json = Json::array();
        std::string val_lines, test_lines;
        const std::uint64_t seed = mix_seed(config_.master_seed, "candidates");
        for (const auto& split : make_split(corpus)) {
            splits_json.push_back(Json{{"user_id", split.user_id},
                                       {"train_prefix", split.train_prefix},
                                       {"validation_target", split.validation_target},
                                       {"test_target", split.test_target}});
            val_lines += sample_candidates(corpus, split, Phase::Validation, config_.pool_size,
                                           seed)
                             .to_json()
                             .dump() +
                         "\n";
            test_lines += sample_candidates(corpus, split, Phase::Test, config_.pool_size, seed)
                              .to_json()
                              .dump() +
                          "\n";
        }
        write_artifact("split", run_dir_ / "splits.json", splits_json.dump());
        write_artifact("split", run_dir_ / "candidates_val.jsonl", val_lines);
        write_artifact("split", run_dir_ / "candidates_test.jsonl", test_lines);
    }

    void stage_train_cf() {
        Corpus corpus = load_corpus();
        CfConfig cfg;
        cfg.dim = config_.cf_dim;
        cfg.lr = config_.cf_lr;
        cfg.epochs = config_.cf_epochs;
        cfg.negatives_per_positive = config_.cf_negatives;
        cfg.seed = mix_seed(config_.master_seed, "cf-train");
        cfg.squash = squash_from_name(config_.cf_squash);
        CfModel model = train_cf(corpus, cfg);
        write_artifact("train-cf", run_dir_ / "cf_model.json", model.to_json().dump());
    }

    void stage_cluster() {
        CfModel model = load_cf_model();
        const std::size_t k = std::min(config_.k_clusters, model.user_ids().size());
        UserClustering clustering =
            cluster_users(model, k, mix_seed(config_.master_seed, "cluster"));
        write_artifact("cluster", run_dir_ / "clusters.json", clustering.to_json().dump());
    }

    void stage_predict_offline() {
        Corpus corpus = load_corpus();
        auto splits = load_splits();
        auto val_candidates = load_candidates(Phase::Validation);
        auto backend = make_backend();
        std::string lines;
        for (const auto& seq : corpus.sequences()) {
            const Split& split = splits.at(seq.user_id);
            RankedList baseline =
                recommend_with_llm(*backend, corpus, seq.user_id, split.train_prefix,
                                   val_candidates.at(seq.user_id), {}, config_.prompt_config());
            lines += baseline.to_json().dump() + "\n";
        }
        write_artifact("predict-offline", run_dir_ / "offline_baselines.jsonl", lines);
    }

    void stage_reflect() {
        Corpus corpus = load_corpus();
        auto splits = load_splits();
        auto val_candidates = load_candidates(Phase::Validation);
        auto baselines = load_baselines();
        CfModel cf_model = load_cf_model();
        auto backend = make_backend();

        // round-0 reflections, unscored; the score stage commits them
        std::string lines;
        std::size_t failures = 0;
        for (const auto& seq : corpus.sequences()) {
            const std::string& user = seq.user_id;
            for (Perspective p : kAllPerspectives) {
                try {
                    PerspectiveView view = build_view(
                        p, corpus, splits.at(user), val_candidates.at(user), baselines.at(user),
                        splits.at(user).validation_target, &cf_model, config_.max_history);
                    Reflection r = reflect(p, view, {}, *backend, config_.prompt_config());
                    lines += r.to_json().dump() + "\n";
                } catch (const LlmError&) {
                    ++failures;
                } catch (const ReflectionError&) {
                    ++failures;
                }
            }
        }
        write_artifact("reflect", run_dir_ / "pending_reflections.jsonl", lines);
        write_artifact("reflect", run_dir_ / "reflect_report.json",
                       Json{{"failures", failures}}.dump(2));
    }

    void stage_score() {
        Corpus corpus = load_corpus();
        auto splits = load_splits();
        auto val_candidates = load_candidates(Phase::Validation);
        auto baselines = load_baselines();
        CfModel cf_model = load_cf_model();
        auto backend = make_backend();
        OfflineContext ctx = offline_context(corpus, splits, val_candidates, baselines, &cf_model,
                                             nullptr, *backend);

        BankSet banks(config_.bank_capacity);
        std::size_t failures = 0;
        std::vector<Reflection> pending;
        for_each_jsonl(run_dir_ / "pending_reflections.jsonl", [&](std::size_t, const Json& j) {
            pending.push_back(Reflection::from_json(j));
        });
        for (Reflection& r : pending) {
            try {
                banks.assign_id(r);
                score_reflection(r, ctx);
                banks.commit(r);
            } catch (const LlmError&) {
                ++failures;
            }
        }
        banks.save(run_dir_ / "banks");
        for (const auto& file : sorted_dir(run_dir_ / "banks")) record_artifact("score", file);
        write_artifact("score", run_dir_ / "score_report.json",
                       Json{{"scored", banks.total_entries()}, {"failures", failures}}.dump(2));
    }

    void stage_iterate() {
        Corpus corpus = load_corpus();
        auto splits = load_splits();
        auto val_candidates = load_candidates(Phase::Validation);
        auto baselines = load_baselines();
        CfModel cf_model = load_cf_model();
        UserClustering clustering = load_clusters();
        auto backend = make_backend();
        OfflineContext ctx = offline_context(corpus, splits, val_candidates, baselines, &cf_model,
                                             &clustering, *backend);

        BankSet banks = BankSet::load(run_dir_ / "banks", config_.bank_capacity);
        const RefineLevel level = refine_level_from_name(config_.refine_level);
        auto trajectory = iterate(banks, ctx, config_.rounds, level);
        banks.save(run_dir_ / "banks");
        for (const auto& file : sorted_dir(run_dir_ / "banks")) record_artifact("iterate", file);

        // round 0 row recomputed from the committed round-0 entries
        std::string csv = "round,generated,failures,mean_imp,ep_mean,ip_mean,cf_mean\n";
        {
            double sum = 0.0;
            std::array<double, 3> psum{};
            std::array<std::size_t, 3> pcount{};
            std::size_t n = 0;
            for (const auto& [key, bank] : banks.all())
                for (const auto& e : bank.entries())
                    if (e.iteration_round == 0) {
                        sum += *e.imp;
                        psum[perspective_code(e.perspective)] += *e.imp;
                        pcount[perspective_code(e.perspective)]++;
                        ++n;
                    }
            csv += "0," + std::to_string(n) + ",0," +
                   EvalReport::format_double(n ? sum / n : 0.0);
            for (int p = 0; p < 3; ++p)
                csv += "," + EvalReport::format_double(
                                 pcount[p] ? psum[p] / static_cast<double>(pcount[p]) : 0.0);
            csv += "\n";
        }
        Json traj_json = Json::array();
        for (const auto& row : trajectory) {
            traj_json.push_back(row.to_json());
            csv += std::to_string(row.round) + "," + std::to_string(row.generated) + "," +
                   std::to_string(row.failures) + "," + EvalReport::format_double(row.mean_imp);
            for (int p = 0; p < 3; ++p)
                csv += "," + EvalReport::format_double(row.mean_imp_by_perspective[p]);
            csv += "\n";
        }
        write_artifact("iterate", run_dir_ / "trajectory.csv", csv);
        write_artifact("iterate", run_dir_ / "iterate_report.json", traj_json.dump(2));
    }

    void stage_refine() {
        BankSet banks = BankSet::load(run_dir_ / "banks");
        UserClustering clustering = load_clusters();
        const RefineLevel level = refine_level_from_name(config_.refine_level);
        RefinePlan plan = refine(imp_table(banks), level, &clustering, config_.threshold_h,
                                 config_.tau);
        write_artifact("refine", run_dir_ / "refine_plan.json", plan.to_json().dump(2));
    }

    void stage_train_bandit() {
        Corpus corpus = load_corpus();
        auto splits = load_splits();
        CfModel cf_model = load_cf_model();
        BankSet banks = BankSet::load(run_dir_ / "banks");

        std::vector<std::string> users;
        std::map<std::string, std::vector<std::string>> histories;
        for (const auto& seq : corpus.sequences()) {
            users.push_back(seq.user_id);
            histories[seq.user_id] = splits.at(seq.user_id).train_prefix;
        }
        PpoConfig ppo = config_.ppo;
        ppo.seed = mix_seed(config_.master_seed, "bandit");
        ppo.tau = config_.tau;
        TrainResult result = train_policy(banks, cf_model, users, histories, ppo);

        Json policy_artifact = result.params.to_json();
        policy_artifact["config_hash"] = config_.config_hash();
        write_artifact("train-bandit", run_dir_ / "policy.json", policy_artifact.dump());
        std::string csv = "step,mean_reward,actor_objective,critic_loss\n";
        for (const auto& row : result.log)
            csv += std::to_string(row.step) + "," + EvalReport::format_double(row.mean_reward) +
                   "," + EvalReport::format_double(row.actor_objective) + "," +
                   EvalReport::format_double(row.critic_loss) + "\n";
        write_artifact("train-bandit", run_dir_ / "train_log.csv", csv);
    }

    void stage_eval() {
        Corpus corpus = load_corpus();
        auto splits = load_splits();
        auto test_candidates = load_candidates(Phase::Test);
        CfModel cf_model = load_cf_model();
        BankSet banks = BankSet::load(run_dir_ / "banks");
        auto backend = make_backend();

        const AblationMode mode = AblationMode::parse(config_.eval_mode);
        std::optional<PolicyParams> policy;
        if (mode.kind == AblationMode::Kind::Full)
            policy = PolicyParams::from_json(Json::parse(read_file(run_dir_ / "policy.json")));

        EvalReport report = run_online_eval(
            mode, policy ? &*policy : nullptr, banks, corpus, splits, test_candidates, &cf_model,
            *backend, config_.prompt_config(), config_.ks, mix_seed(config_.master_seed, "eval"));
        report.config_hash = config_.config_hash();
        report.seeds = {{"master", config_.master_seed},
                        {"candidates", mix_seed(config_.master_seed, "candidates")},
                        {"cf", mix_seed(config_.master_seed, "cf-train")},
                        {"cluster", mix_seed(config_.master_seed, "cluster")},
                        {"offline", mix_seed(config_.master_seed, "offline")},
                        {"bandit", mix_seed(config_.master_seed, "bandit")},
                        {"eval", mix_seed(config_.master_seed, "eval")}};
        if (fs::exists(run_dir_ / "policy.json"))
            report.policy_hash = sha256_hex(read_file(run_dir_ / "policy.json"));
        report.banks_hash = banks_hash(banks);

        write_artifact("eval", run_dir_ / "eval_report.json", report.to_json().dump(2));
        write_artifact("eval", run_dir_ / "eval_metrics.csv", report.metrics_csv());
        write_artifact("eval", run_dir_ / "eval_per_user.csv", report.per_user_csv());
    }

    static std::vector<fs::path> sorted_dir(const fs::path& dir) {
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(dir)) files.push_back(entry.path());
        std::sort(files.begin(), files.end());
        return files;
    }

    static std::string banks_hash(const BankSet& banks) {
        Sha256 h;
        for (const auto& [key, bank] : banks.all())
            for (const auto& e : bank.entries()) h.update(e.to_json().dump());
        auto digest = h.digest();
        static const char* hex = "0123456789abcdef";
        std::string out;
        for (auto b : digest) {
            out.push_back(hex[b >> 4]);
            out.push_back(hex[b & 0xF]);
        }
        return out;
    }

    RunConfig config_;
    fs::path run_dir_;
    Json manifest_;
    std::shared_ptr<LlmBackend> backend_;
};

/// Convenience wrapper: run every stage and return the run directory.
inline fs::path run_pipeline(const RunConfig& config) {
    Pipeline p(config);
    p.run();
    return p.run_dir();
}

}  // namespace morerec
