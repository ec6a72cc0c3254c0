#include "isvqa/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "isvqa/dataset_io.hpp"
#include "isvqa/error.hpp"
#include "isvqa/evalstats.hpp"
#include "isvqa/rng.hpp"

namespace isvqa {
namespace {

constexpr std::uint64_t kPretrainStream = 1ULL << 32;

void check_feature_dim(const Dataset& ds, int feature_dim) {
    if (ds.gen_config && ds.gen_config->feature_dim != feature_dim) {
        fail(ErrorKind::vocab_mismatch, "dataset feature_dim " + std::to_string(ds.gen_config->feature_dim) +
                                            " differs from model feature_dim " + std::to_string(feature_dim));
    }
}

int dataset_feature_dim(const Dataset& ds) {
    if (ds.image_less) fail(ErrorKind::schema, "dataset has no image sets (imported annotations)");
    for (const auto& s : ds.samples) {
        if (!s.image_set.proposals.empty()) return static_cast<int>(s.image_set.proposals.front().feature.size());
    }
    if (ds.gen_config) return ds.gen_config->feature_dim;
    fail(ErrorKind::schema, "dataset has no proposals");
}

struct PhaseOutcome {
    bool diverged = false;
    bool early_stopped = false;
    std::string message;
};

PhaseOutcome run_phase(Model& model, const std::vector<PreparedSample>& data, const TrainConfig& cfg, int epochs,
                       const std::string& phase, std::uint64_t stream, RunManifest& manifest) {
    PhaseOutcome outcome;
    if (data.empty() || epochs == 0) return outcome;
    OptimizerState opt;
    opt.kind = cfg.optimizer;
    opt.learning_rate = cfg.learning_rate;
    auto& store = model.params();
    store.zero_grad();
    std::vector<std::size_t> order(data.size());
    double best = std::numeric_limits<double>::infinity();
    int stale = 0;
    for (int epoch = 0; epoch < epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng(derive_seed(cfg.seed, stream + static_cast<std::uint64_t>(epoch)));
        rng.shuffle(order);
        double loss_sum = 0.0;
        double acc_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            const double scale = 1.0 / static_cast<double>(stop - start);
            for (std::size_t b = start; b < stop; ++b) {
                const auto& s = data[order[b]];
                const auto r = sample_objective(model, s, cfg, &store, scale);
                if (!std::isfinite(r.loss)) {
                    outcome.diverged = true;
                    outcome.message = "non-finite loss in phase " + phase + ", epoch " + std::to_string(epoch);
                    return outcome;
                }
                loss_sum += r.loss;
                acc_sum += vqa_accuracy(model.answers().label(static_cast<std::size_t>(r.predicted)), s.answers);
            }
            try {
                step(store, opt);
            } catch (const Error& e) {
                if (e.kind() != ErrorKind::divergence) throw;
                outcome.diverged = true;
                outcome.message = e.what();
                return outcome;
            }
        }
        const double n = static_cast<double>(data.size());
        const double mean_loss = loss_sum / n;
        manifest.epochs.push_back({phase, epoch, mean_loss, acc_sum / n});
        if (cfg.patience > 0) {
            if (mean_loss < best - cfg.min_improvement) {
                best = mean_loss;
                stale = 0;
            } else if (++stale >= cfg.patience) {
                outcome.early_stopped = true;
                break;
            }
        }
    }
    return outcome;
}

RunManifest base_manifest(const TrainConfig& cfg, const Model& model) {
    RunManifest m;
    m.train_config = to_json(cfg);
    m.model_config = to_json(model.config());
    m.seed = cfg.seed;
    return m;
}

void ensure_trainable(const Dataset& ds, const char* what) {
    if (ds.samples.empty()) fail(ErrorKind::invalid_argument, std::string(what) + " dataset is empty");
}

}  // namespace

std::vector<PreparedSample> prepare_samples(const Dataset& ds, const Model& model) {
    if (ds.image_less) fail(ErrorKind::schema, "dataset has no image sets (imported annotations)");
    check_feature_dim(ds, model.config().feature_dim);
    std::vector<PreparedSample> out;
    out.reserve(ds.samples.size());
    for (const auto& s : ds.samples) {
        const auto& props = s.image_set.proposals;
        if (props.empty()) fail(ErrorKind::schema, "sample " + std::to_string(s.image_set.sample_id) + " has no proposals");
        PreparedSample p;
        const auto n = static_cast<Eigen::Index>(props.size());
        p.features.resize(n, model.config().feature_dim);
        for (Eigen::Index i = 0; i < n; ++i) {
            const auto& f = props[static_cast<std::size_t>(i)].feature;
            if (static_cast<int>(f.size()) != model.config().feature_dim) {
                fail(ErrorKind::vocab_mismatch, "proposal feature has dimension " + std::to_string(f.size()) +
                                                    ", model expects " + std::to_string(model.config().feature_dim));
            }
            for (Eigen::Index c = 0; c < p.features.cols(); ++c) p.features(i, c) = f[static_cast<std::size_t>(c)];
        }
        if (model.config().count_aware) p.distances = distance_matrix(props);
        p.tokens = model.words().encode(s.qa.question.tokens);
        if (p.tokens.empty()) fail(ErrorKind::schema, "sample " + std::to_string(s.image_set.sample_id) + " has an empty question");
        p.gold = model.answers().find(s.qa.gold).value_or(-1);
        p.numeric_target = s.qa.question.numeric_target;
        p.qtype = s.qa.question.qtype;
        p.answers = s.qa.answers;
        p.adversarial_mask = scrub_objects(s.qa.question.tokens, props);
        out.push_back(std::move(p));
    }
    return out;
}

int argmax_answer(const VectorXd& logits) {
    int best = 0;
    for (Eigen::Index i = 1; i < logits.size(); ++i) {
        if (logits[i] > logits[best]) best = static_cast<int>(i);
    }
    return best;
}

SampleResult sample_objective(const Model& model, const PreparedSample& s, const TrainConfig& cfg, ParamStore* grads,
                              double scale) {
    if (s.gold < 0) fail(ErrorKind::vocab_mismatch, "training sample gold answer is outside the vocabulary");
    auto trace = model.forward(s.features, s.distances, s.tokens);
    const auto& out = trace.output();
    SampleResult r;
    r.predicted = argmax_answer(out.logits);
    r.branch_signature = trace.branch_signature();

    if (cfg.mode == TrainMode::advreg_ce || cfg.mode == TrainMode::advreg_bce) {
        auto adv = model.forward(s.features, s.distances, s.tokens, &s.adversarial_mask);
        const auto l = loss_adversarial(out, adv.output(), s.gold, cfg.mode, cfg.lambda_r, cfg.adv_ce_cap);
        r.loss = l.total;
        r.branch_signature = mix64(r.branch_signature ^ mix64(adv.branch_signature() ^ l.branch_signature));
        if (grads) {
            OutputGrad g_true{scale * l.grad_true.logits, 0.0};
            OutputGrad g_adv{scale * l.grad_adv.logits, 0.0};
            trace.backward(g_true, *grads);
            adv.backward(g_adv, *grads);
        }
        return r;
    }

    r.loss = loss_classification(out, s.gold);
    OutputGrad g{loss_classification_grad(out, s.gold), 0.0};
    if (cfg.mode == TrainMode::regression && s.qtype == QuestionType::count && s.numeric_target &&
        model.config().regression_head) {
        r.loss += cfg.lambda_reg * loss_regression(out, *s.numeric_target, s.qtype);
        g.regression = cfg.lambda_reg * 2.0 * (*out.regression - *s.numeric_target);
    }
    if (grads) {
        g.logits *= scale;
        g.regression *= scale;
        trace.backward(g, *grads);
    }
    return r;
}

nlohmann::json RunManifest::to_json() const {
    nlohmann::json epochs_json = nlohmann::json::array();
    for (const auto& e : epochs) {
        epochs_json.push_back({{"phase", e.phase}, {"epoch", e.epoch}, {"loss", e.loss}, {"accuracy", e.accuracy}});
    }
    return {{"train_config", train_config},
            {"model_config", model_config},
            {"dataset_hashes", dataset_hashes},
            {"epochs", epochs_json},
            {"wall_clock_seconds", wall_clock_seconds},
            {"checkpoint_path", checkpoint_path},
            {"seed", seed},
            {"diverged", diverged},
            {"divergence_message", divergence_message},
            {"early_stopped", early_stopped}};
}

std::string dataset_hash(const Dataset& ds) {
    std::ostringstream os;
    write_dataset(os, ds, false);
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(os.str())));
    return buf;
}

TrainResult train(const Dataset& train_set, const TrainConfig& cfg, const ModelDims& dims) {
    ensure_trainable(train_set, "training");
    const auto qa = train_set.qa_samples();
    return train(train_set, cfg, dims, WordVocab::build(qa), build_vocab(qa));
}

TrainResult train(const Dataset& train_set, const TrainConfig& cfg, const ModelDims& dims, WordVocab words,
                  AnswerVocab answers) {
    cfg.validate();
    ensure_trainable(train_set, "training");
    const auto start = std::chrono::steady_clock::now();
    auto mc = ModelConfig::for_mode(cfg.mode, dataset_feature_dim(train_set), static_cast<int>(answers.size()));
    mc.word_dim = dims.word_dim;
    mc.hidden_dim = dims.hidden_dim;
    mc.pwl_intervals = dims.pwl_intervals;
    Model model(mc, std::move(words), std::move(answers), cfg.seed);
    RunManifest manifest = base_manifest(cfg, model);
    manifest.dataset_hashes.push_back(dataset_hash(train_set));
    const auto data = prepare_samples(train_set, model);
    const auto outcome = run_phase(model, data, cfg, cfg.epochs, "main", 0, manifest);
    manifest.diverged = outcome.diverged;
    manifest.divergence_message = outcome.message;
    manifest.early_stopped = outcome.early_stopped;
    manifest.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return {std::move(model), std::move(manifest)};
}

TrainResult pretrain_then_finetune(const Dataset& pretrain_set, const Dataset& main_set, const TrainConfig& cfg,
                                   const ModelDims& dims) {
    cfg.validate();
    ensure_trainable(pretrain_set, "pretraining");
    ensure_trainable(main_set, "main");
    for (const auto& s : pretrain_set.samples) {
        const auto t = s.qa.question.qtype;
        if (t != QuestionType::color && t != QuestionType::position) {
            fail(ErrorKind::invalid_argument, "pretraining set must hold only color/position questions, sample " +
                                                  std::to_string(s.image_set.sample_id) + " is " +
                                                  std::string(to_string(t)));
        }
    }
    const int fd_pre = dataset_feature_dim(pretrain_set);
    const int fd_main = dataset_feature_dim(main_set);
    if (fd_pre != fd_main) {
        fail(ErrorKind::vocab_mismatch, "pretraining features have dimension " + std::to_string(fd_pre) +
                                            ", main features " + std::to_string(fd_main));
    }
    if (pretrain_set.gen_config && main_set.gen_config &&
        pretrain_set.gen_config->feature_seed != main_set.gen_config->feature_seed) {
        fail(ErrorKind::vocab_mismatch, "pretraining and main sets use different feature_seed label codes");
    }
    // Without a first phase the merged vocabulary would only add dead answers.
    if (cfg.pretrain_epochs == 0) return train(main_set, cfg, dims);

    auto qa = pretrain_set.qa_samples();
    const auto main_qa = main_set.qa_samples();
    qa.insert(qa.end(), main_qa.begin(), main_qa.end());

    const auto start = std::chrono::steady_clock::now();
    auto mc = ModelConfig::for_mode(cfg.mode, fd_main, 0);
    auto answers = build_vocab(qa);
    mc.num_answers = static_cast<int>(answers.size());
    mc.word_dim = dims.word_dim;
    mc.hidden_dim = dims.hidden_dim;
    mc.pwl_intervals = dims.pwl_intervals;
    Model model(mc, WordVocab::build(qa), std::move(answers), cfg.seed);
    RunManifest manifest = base_manifest(cfg, model);
    manifest.dataset_hashes = {dataset_hash(pretrain_set), dataset_hash(main_set)};

    const auto pre = prepare_samples(pretrain_set, model);
    auto outcome = run_phase(model, pre, cfg, cfg.pretrain_epochs, "pretrain", kPretrainStream, manifest);
    if (!outcome.diverged) {
        const auto main = prepare_samples(main_set, model);
        outcome = run_phase(model, main, cfg, cfg.epochs, "main", 0, manifest);
    }
    manifest.diverged = outcome.diverged;
    manifest.divergence_message = outcome.message;
    manifest.early_stopped = outcome.early_stopped;
    manifest.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return {std::move(model), std::move(manifest)};
}

GradcheckSetup make_gradcheck_setup(TrainMode mode, std::uint64_t seed, const ModelDims& dims, int feature_dim,
                                    int max_proposals) {
    GenConfig gc;
    gc.seed = seed;
    gc.num_samples = 24;
    gc.feature_dim = feature_dim;
    gc.num_categories = 4;
    gc.num_colors = 3;
    gc.objects_per_image_min = 1;
    gc.objects_per_image_max = 2;
    gc.dup_proposal_rate = 0.5;
    gc.mix = {0.0, 0.0, 0.5, 0.5};
    const auto full = build_dataset(gc);

    Dataset small;
    small.gen_config = gc;
    const Sample* count_sample = nullptr;
    const Sample* other_sample = nullptr;
    for (const auto& s : full.samples) {
        auto& slot = s.qa.question.qtype == QuestionType::count ? count_sample : other_sample;
        if (!slot) slot = &s;
    }
    if (!count_sample || !other_sample) fail(ErrorKind::state, "gradcheck setup found no suitable samples");
    for (const auto* src : {count_sample, other_sample}) {
        Sample s = *src;
        auto& props = s.image_set.proposals;
        // Keep a mentioned object first so the adversarial mask is not empty.
        const auto mask = scrub_objects(s.qa.question.tokens, props);
        std::vector<ObjectProposal> reordered;
        for (int pass = 0; pass < 2; ++pass) {
            for (std::size_t i = 0; i < props.size(); ++i) {
                if (mask[i] == (pass == 0)) reordered.push_back(props[i]);
            }
        }
        props = std::move(reordered);
        if (props.size() > static_cast<std::size_t>(max_proposals)) props.resize(static_cast<std::size_t>(max_proposals));
        small.samples.push_back(std::move(s));
    }
    const auto qa = small.qa_samples();
    auto answers = build_vocab(qa);
    auto mc = ModelConfig::for_mode(mode, feature_dim, static_cast<int>(answers.size()));
    mc.word_dim = dims.word_dim;
    mc.hidden_dim = dims.hidden_dim;
    mc.pwl_intervals = dims.pwl_intervals;
    Model model(mc, WordVocab::build(qa), std::move(answers), seed);
    auto batch = prepare_samples(small, model);
    return {std::move(model), std::move(batch)};
}

GradcheckReport gradcheck_mode(TrainMode mode, std::uint64_t seed, double tolerance, double h) {
    auto setup = make_gradcheck_setup(mode, seed);
    TrainConfig cfg;
    cfg.mode = mode;
    cfg.seed = seed;
    Model& model = setup.model;
    const auto& batch = setup.batch;
    const double scale = 1.0 / static_cast<double>(batch.size());
    auto evaluate = [&](const ParamStore&) {
        Evaluation e;
        for (const auto& s : batch) {
            const auto r = sample_objective(model, s, cfg);
            e.loss += scale * r.loss;
            e.branch_signature = mix64(e.branch_signature ^ r.branch_signature);
        }
        return e;
    };
    auto compute = [&](ParamStore& store) {
        for (const auto& s : batch) sample_objective(model, s, cfg, &store, scale);
    };
    return gradcheck(model.params(), evaluate, compute, tolerance, h);
}

void save_run(const std::filesystem::path& checkpoint_path, const std::filesystem::path& manifest_path,
              const TrainConfig& cfg, TrainResult& result) {
    auto header = result.model.header_json();
    header["train"] = to_json(cfg);
    save_checkpoint(checkpoint_path, header, result.model.params());
    result.manifest.checkpoint_path = checkpoint_path.string();
    std::ofstream out(manifest_path, std::ios::binary);
    if (!out) fail(ErrorKind::missing_file, "cannot write " + manifest_path.string());
    out << result.manifest.to_json().dump(2) << '\n';
}

}  // namespace isvqa
