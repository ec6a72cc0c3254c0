#include "isvqa/model.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "isvqa/error.hpp"
#include "isvqa/rng.hpp"

namespace isvqa {
namespace {

VectorXd softmax(const VectorXd& z) {
    const double top = z.maxCoeff();
    VectorXd p = (z.array() - top).exp().matrix();
    return p / p.sum();
}

MatrixXd tanh_derivative(const MatrixXd& y) { return (1.0 - y.array().square()).matrix(); }

const MatrixXd& val(const ParamStore& s, std::string_view name) { return s.get(name).value; }
MatrixXd& grad(ParamStore& s, std::string_view name) { return s.get(name).grad; }

}  // namespace

void ModelConfig::validate() const {
    if (word_dim < 1 || hidden_dim < 1 || feature_dim < 1) {
        fail(ErrorKind::invalid_config, "model dims must be positive");
    }
    if (num_answers < 2) fail(ErrorKind::invalid_config, "model needs at least 2 answers");
    if (pwl_intervals < 1) fail(ErrorKind::invalid_config, "pwl_intervals must be >= 1");
}

ModelConfig ModelConfig::for_mode(TrainMode mode, int feature_dim, int num_answers) {
    ModelConfig c;
    c.feature_dim = feature_dim;
    c.num_answers = num_answers;
    c.count_aware = mode == TrainMode::count_aware;
    c.regression_head = mode == TrainMode::regression;
    return c;
}

nlohmann::json to_json(const ModelConfig& c) {
    return {{"word_dim", c.word_dim},           {"hidden_dim", c.hidden_dim},
            {"feature_dim", c.feature_dim},     {"num_answers", c.num_answers},
            {"count_aware", c.count_aware},     {"regression_head", c.regression_head},
            {"pwl_intervals", c.pwl_intervals}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    const auto defaults = to_json(c);
    for (const auto& [key, _] : j.items()) {
        if (!defaults.contains(key)) fail(ErrorKind::schema, "unknown model config key '" + key + "'");
    }
    try {
        c.word_dim = j.value("word_dim", c.word_dim);
        c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
        c.feature_dim = j.value("feature_dim", c.feature_dim);
        c.num_answers = j.value("num_answers", c.num_answers);
        c.count_aware = j.value("count_aware", c.count_aware);
        c.regression_head = j.value("regression_head", c.regression_head);
        c.pwl_intervals = j.value("pwl_intervals", c.pwl_intervals);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::schema, std::string("bad model config: ") + e.what());
    }
    return c;
}

WordVocab::WordVocab() : WordVocab(std::vector<std::string>{}) {}

WordVocab::WordVocab(std::vector<std::string> words) {
    words_.emplace_back(kUnknown);
    for (auto& w : words) {
        if (w != kUnknown) words_.push_back(std::move(w));
    }
    for (std::size_t i = 0; i < words_.size(); ++i) {
        if (!index_.emplace(words_[i], static_cast<int>(i)).second) {
            fail(ErrorKind::invalid_argument, "duplicate word '" + words_[i] + "'");
        }
    }
}

WordVocab WordVocab::build(std::span<const QASample> samples) {
    std::set<std::string> words;
    for (const auto& s : samples) words.insert(s.question.tokens.begin(), s.question.tokens.end());
    return WordVocab(std::vector<std::string>(words.begin(), words.end()));
}

int WordVocab::index(std::string_view word) const {
    const auto it = index_.find(word);
    return it == index_.end() ? 0 : it->second;
}

std::vector<int> WordVocab::encode(std::span<const std::string> tokens) const {
    std::vector<int> ids;
    ids.reserve(tokens.size());
    for (const auto& t : tokens) ids.push_back(index(t));
    return ids;
}

std::optional<std::string> category_of_token(std::string_view token) {
    if (token == "people") return std::string("person");
    if (is_category(token)) return std::string(token);
    if (token.ends_with("es") && is_category(token.substr(0, token.size() - 2))) {
        return std::string(token.substr(0, token.size() - 2));
    }
    if (token.ends_with("s") && is_category(token.substr(0, token.size() - 1))) {
        return std::string(token.substr(0, token.size() - 1));
    }
    return std::nullopt;
}

std::vector<bool> scrub_objects(std::span<const std::string> question_tokens,
                                std::span<const ObjectProposal> proposals) {
    std::set<std::string, std::less<>> named;
    for (const auto& t : question_tokens) {
        if (auto c = category_of_token(t)) named.insert(*c);
    }
    std::vector<bool> mask(proposals.size(), false);
    for (std::size_t i = 0; i < proposals.size(); ++i) mask[i] = named.contains(proposals[i].category);
    return mask;
}

std::vector<TensorSpec> Model::tensor_specs(const ModelConfig& c, std::size_t vocab_size) {
    const Eigen::Index dw = c.word_dim;
    const Eigen::Index dh = c.hidden_dim;
    const Eigen::Index df = c.feature_dim;
    const Eigen::Index m = c.num_answers;
    const Eigen::Index fused = 2 * dh + 1;
    const Eigen::Index k = c.pwl_intervals;
    return {
        {"word_emb", static_cast<Eigen::Index>(vocab_size), dw, InitKind::uniform_fan_in, dw},
        {"q_w", dh, dw, InitKind::uniform_fan_in, dw},
        {"q_b", dh, 1, InitKind::uniform_fan_in, dw},
        {"v_w", dh, df, InitKind::uniform_fan_in, df},
        {"v_b", dh, 1, InitKind::uniform_fan_in, df},
        {"cnt_u", dh, 1, InitKind::uniform_fan_in, dh},
        {"cnt_b", 1, 1, InitKind::uniform_fan_in, dh},
        {"att_wq", dh, dh, InitKind::uniform_fan_in, dh},
        {"att_wv", dh, dh, InitKind::uniform_fan_in, dh},
        {"att_b", dh, 1, InitKind::uniform_fan_in, dh},
        {"att_w", dh, 1, InitKind::uniform_fan_in, dh},
        {"fuse_w", dh, fused, InitKind::uniform_fan_in, fused},
        {"fuse_b", dh, 1, InitKind::uniform_fan_in, fused},
        {"out_w", m, dh, InitKind::uniform_fan_in, dh},
        {"out_b", m, 1, InitKind::uniform_fan_in, dh},
        {"reg_w", 1, dh, InitKind::uniform_fan_in, dh},
        {"reg_b", 1, 1, InitKind::uniform_fan_in, dh},
        {"cnt_f1", k, 1, InitKind::zeros, 1},
        {"cnt_f2", k, 1, InitKind::zeros, 1},
        {"cnt_f3", k, 1, InitKind::zeros, 1},
    };
}

Model::Model(ModelConfig config, WordVocab words, AnswerVocab answers, std::uint64_t seed)
    : Model(config, words, answers, init_params(seed, tensor_specs(config, words.size()))) {}

Model::Model(ModelConfig config, WordVocab words, AnswerVocab answers, ParamStore params)
    : config_(config), words_(std::move(words)), answers_(std::move(answers)), params_(std::move(params)) {
    config_.validate();
    if (answers_.size() != static_cast<std::size_t>(config_.num_answers)) {
        fail(ErrorKind::vocab_mismatch, "answer vocabulary has " + std::to_string(answers_.size()) +
                                            " labels but the model expects " + std::to_string(config_.num_answers));
    }
    for (const auto& spec : tensor_specs(config_, words_.size())) {
        const auto& p = params_.get(spec.name);
        if (p.value.rows() != spec.rows || p.value.cols() != spec.cols) {
            fail(ErrorKind::schema, "tensor '" + spec.name + "' has the wrong shape");
        }
    }
}

CountModuleParams Model::count_params() const {
    return {PiecewiseLinearFn(VectorXd(val(params_, "cnt_f1"))), PiecewiseLinearFn(VectorXd(val(params_, "cnt_f2"))),
            PiecewiseLinearFn(VectorXd(val(params_, "cnt_f3")))};
}

VectorXd Model::encode_question(std::span<const int> token_ids) const {
    if (token_ids.empty()) fail(ErrorKind::invalid_argument, "empty question");
    const auto& emb = val(params_, "word_emb");
    VectorXd mean = VectorXd::Zero(config_.word_dim);
    for (int t : token_ids) mean += emb.row(t).transpose();
    mean /= static_cast<double>(token_ids.size());
    return (val(params_, "q_w") * mean + val(params_, "q_b")).array().tanh().matrix();
}

ForwardTrace Model::forward(const MatrixXd& features, const MatrixXd& distances, std::span<const int> token_ids,
                            const std::vector<bool>* scrub_mask) const {
    if (token_ids.empty()) fail(ErrorKind::invalid_argument, "empty question");
    if (features.cols() != config_.feature_dim) {
        fail(ErrorKind::vocab_mismatch, "features have dimension " + std::to_string(features.cols()) +
                                            ", model expects " + std::to_string(config_.feature_dim));
    }
    if (features.rows() < 1) fail(ErrorKind::invalid_argument, "image set has no proposals");
    if (!features.allFinite()) fail(ErrorKind::invalid_argument, "non-finite input feature");
    const Eigen::Index n = features.rows();
    if (scrub_mask && scrub_mask->size() != static_cast<std::size_t>(n)) {
        fail(ErrorKind::invalid_argument, "scrub mask size does not match proposals");
    }

    ForwardTrace tr;
    tr.model_ = this;
    tr.tokens_.assign(token_ids.begin(), token_ids.end());
    for (int t : tr.tokens_) {
        if (t < 0 || static_cast<std::size_t>(t) >= words_.size()) fail(ErrorKind::invalid_argument, "token id out of range");
    }

    const auto& emb = val(params_, "word_emb");
    tr.word_mean_ = VectorXd::Zero(config_.word_dim);
    for (int t : tr.tokens_) tr.word_mean_ += emb.row(t).transpose();
    tr.word_mean_ /= static_cast<double>(tr.tokens_.size());
    tr.q_ = (val(params_, "q_w") * tr.word_mean_ + val(params_, "q_b")).array().tanh().matrix();

    tr.X_ = features;
    if (scrub_mask) {
        for (Eigen::Index i = 0; i < n; ++i) {
            if ((*scrub_mask)[static_cast<std::size_t>(i)]) tr.X_.row(i).setZero();
        }
    }
    tr.V_ = ((tr.X_ * val(params_, "v_w").transpose()).rowwise() + val(params_, "v_b").col(0).transpose())
                .array()
                .tanh()
                .matrix();

    auto& out = tr.out_;
    const VectorXd uq = val(params_, "cnt_u").col(0).cwiseProduct(tr.q_);
    const VectorXd z = (tr.V_ * uq).array() + val(params_, "cnt_b")(0, 0);
    out.count_attention = (1.0 / (1.0 + (-z.array()).exp())).matrix();

    if (config_.count_aware) {
        if (distances.rows() != n || distances.cols() != n) {
            fail(ErrorKind::invalid_argument, "distance matrix does not match proposals");
        }
        tr.count_graph_ = std::make_shared<CountGraph>();
        const auto& co = tr.count_graph_->forward(out.count_attention, distances, count_params());
        out.count_scores = co.C;
        out.c_hat = co.c_hat;
        tr.V_tilde_ = count_aware_features(tr.V_, co.C);
    } else {
        out.count_scores = VectorXd::Ones(n);
        out.c_hat = 0.0;
        tr.V_tilde_ = tr.V_;
    }

    const VectorXd att_q = val(params_, "att_wq") * tr.q_ + val(params_, "att_b");
    tr.P_ = ((tr.V_tilde_ * val(params_, "att_wv").transpose()).rowwise() + att_q.transpose())
                .array()
                .tanh()
                .matrix();
    out.attention = softmax(tr.P_ * val(params_, "att_w").col(0));
    tr.context_ = tr.V_tilde_.transpose() * out.attention;

    const Eigen::Index dh = config_.hidden_dim;
    tr.fused_in_.resize(2 * dh + 1);
    tr.fused_in_ << tr.q_, tr.context_, (config_.count_aware ? out.c_hat : 0.0);
    tr.h_ = (val(params_, "fuse_w") * tr.fused_in_ + val(params_, "fuse_b")).array().tanh().matrix();
    out.logits = val(params_, "out_w") * tr.h_ + val(params_, "out_b");
    out.probabilities = softmax(out.logits);
    if (config_.regression_head) {
        out.regression = (val(params_, "reg_w") * tr.h_)(0) + val(params_, "reg_b")(0, 0);
    }
    tr.pending_ = true;
    return tr;
}

std::uint64_t ForwardTrace::branch_signature() const noexcept {
    return count_graph_ ? count_graph_->branch_signature() : 0;
}

void ForwardTrace::backward(const OutputGrad& upstream, ParamStore& store) {
    if (!pending_) fail(ErrorKind::state, "backward without a recorded forward pass");
    pending_ = false;
    const auto& params = model_->params();
    const auto& cfg = model_->config();
    const Eigen::Index dh = cfg.hidden_dim;
    if (upstream.logits.size() != cfg.num_answers) fail(ErrorKind::invalid_argument, "logit gradient size mismatch");

    // classifier and regression heads
    grad(store, "out_w") += upstream.logits * h_.transpose();
    grad(store, "out_b") += upstream.logits;
    VectorXd g_h = val(params, "out_w").transpose() * upstream.logits;
    if (cfg.regression_head && upstream.regression != 0.0) {
        grad(store, "reg_w") += upstream.regression * h_.transpose();
        grad(store, "reg_b")(0, 0) += upstream.regression;
        g_h += upstream.regression * val(params, "reg_w").transpose();
    }

    // fusion layer
    const VectorXd g_fuse_pre = g_h.cwiseProduct(tanh_derivative(h_));
    grad(store, "fuse_w") += g_fuse_pre * fused_in_.transpose();
    grad(store, "fuse_b") += g_fuse_pre;
    const VectorXd g_fused_in = val(params, "fuse_w").transpose() * g_fuse_pre;
    VectorXd g_q = g_fused_in.head(dh);
    const VectorXd g_ctx = g_fused_in.segment(dh, dh);
    const double g_chat = cfg.count_aware ? g_fused_in(2 * dh) : 0.0;

    // soft attention pooling
    const VectorXd& alpha = out_.attention;
    MatrixXd g_Vt = alpha * g_ctx.transpose();
    const VectorXd g_alpha = V_tilde_ * g_ctx;
    const VectorXd g_s = alpha.cwiseProduct((g_alpha.array() - alpha.dot(g_alpha)).matrix());
    grad(store, "att_w") += P_.transpose() * g_s;
    const MatrixXd g_P_pre = (g_s * val(params, "att_w").col(0).transpose()).cwiseProduct(tanh_derivative(P_));
    grad(store, "att_wv") += g_P_pre.transpose() * V_tilde_;
    g_Vt += g_P_pre * val(params, "att_wv");
    const VectorXd g_att_q = g_P_pre.colwise().sum().transpose();
    grad(store, "att_wq") += g_att_q * q_.transpose();
    grad(store, "att_b") += g_att_q;
    g_q += val(params, "att_wq").transpose() * g_att_q;

    // count-aware reweighting and counting module
    MatrixXd g_V;
    VectorXd g_a = VectorXd::Zero(V_.rows());
    if (cfg.count_aware) {
        const VectorXd& C = out_.count_scores;
        g_V = C.asDiagonal() * g_Vt;
        const VectorXd g_C = V_.cwiseProduct(g_Vt).rowwise().sum();
        const auto cg = count_graph_->backward(g_C, g_chat);
        g_a = cg.a;
        grad(store, "cnt_f1") += cg.f1;
        grad(store, "cnt_f2") += cg.f2;
        grad(store, "cnt_f3") += cg.f3;
    } else {
        g_V = std::move(g_Vt);
    }

    // counting attention a = sigmoid(V (u o q) + b)
    const VectorXd& a = out_.count_attention;
    const VectorXd g_z = g_a.cwiseProduct((a.array() * (1.0 - a.array())).matrix());
    if (g_z.squaredNorm() > 0.0) {
        const VectorXd u = val(params, "cnt_u").col(0);
        g_V += g_z * u.cwiseProduct(q_).transpose();
        const VectorXd g_uq = V_.transpose() * g_z;
        grad(store, "cnt_u") += g_uq.cwiseProduct(q_);
        grad(store, "cnt_b")(0, 0) += g_z.sum();
        g_q += g_uq.cwiseProduct(u);
    }

    // visual projection
    const MatrixXd g_V_pre = g_V.cwiseProduct(tanh_derivative(V_));
    grad(store, "v_w") += g_V_pre.transpose() * X_;
    grad(store, "v_b") += g_V_pre.colwise().sum().transpose();

    // question encoder
    const VectorXd g_q_pre = g_q.cwiseProduct(tanh_derivative(q_));
    grad(store, "q_w") += g_q_pre * word_mean_.transpose();
    grad(store, "q_b") += g_q_pre;
    const VectorXd g_mean = val(params, "q_w").transpose() * g_q_pre / static_cast<double>(tokens_.size());
    auto& g_emb = grad(store, "word_emb");
    for (int t : tokens_) g_emb.row(t) += g_mean.transpose();
}

nlohmann::json Model::header_json() const {
    return {{"model", to_json(config_)}, {"words", words_.words()}, {"answers", answers_.labels()}};
}

Model Model::from_checkpoint(const Checkpoint& ck) {
    try {
        const auto& c = ck.config;
        auto cfg = model_config_from_json(c.at("model"));
        auto words = c.at("words").get<std::vector<std::string>>();
        if (words.empty() || words.front() != WordVocab::kUnknown) {
            fail(ErrorKind::schema, "checkpoint word vocabulary lacks the unknown token");
        }
        words.erase(words.begin());
        ParamStore store = ck.store;
        return Model(cfg, WordVocab(std::move(words)), AnswerVocab(c.at("answers").get<std::vector<std::string>>()),
                     std::move(store));
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::schema, std::string("malformed checkpoint header: ") + e.what());
    }
}

double loss_classification(const ForwardOutput& out, int gold) {
    if (gold < 0 || gold >= out.logits.size()) fail(ErrorKind::invalid_argument, "gold index out of range");
    const double top = out.logits.maxCoeff();
    const double lse = top + std::log((out.logits.array() - top).exp().sum());
    return lse - out.logits[gold];
}

VectorXd loss_classification_grad(const ForwardOutput& out, int gold) {
    VectorXd g = out.probabilities;
    g[gold] -= 1.0;
    return g;
}

double loss_regression(const ForwardOutput& out, double numeric_target, QuestionType qtype) {
    if (qtype != QuestionType::count) fail(ErrorKind::invalid_argument, "regression loss applies to count questions only");
    if (!out.regression) fail(ErrorKind::invalid_argument, "model has no regression head");
    const double d = *out.regression - numeric_target;
    return d * d;
}

AdversarialLoss loss_adversarial(const ForwardOutput& out_true, const ForwardOutput& out_adv, int gold,
                                 TrainMode mode, double lambda_r, double cap) {
    if (lambda_r < 0.0) fail(ErrorKind::invalid_argument, "lambda_r must be >= 0");
    if (mode != TrainMode::advreg_ce && mode != TrainMode::advreg_bce) {
        fail(ErrorKind::invalid_argument, "adversarial loss needs mode advreg_ce or advreg_bce");
    }
    AdversarialLoss l;
    l.ce_true = loss_classification(out_true, gold);
    l.grad_true.logits = loss_classification_grad(out_true, gold);
    l.grad_adv.logits = VectorXd::Zero(out_adv.logits.size());
    if (mode == TrainMode::advreg_ce) {
        const double ce_adv = loss_classification(out_adv, gold);
        const bool capped = ce_adv >= cap;
        l.adv_term = -lambda_r * std::min(ce_adv, cap);
        if (!capped && lambda_r != 0.0) l.grad_adv.logits = -lambda_r * loss_classification_grad(out_adv, gold);
        l.branch_signature = capped ? 1 : 0;
    } else {
        const VectorXd& p = out_adv.probabilities;
        double bce = 0.0;
        VectorXd g_p = VectorXd::Zero(p.size());
        std::uint64_t sig = 0;
        for (Eigen::Index c = 0; c < p.size(); ++c) {
            const double pc = std::clamp(p[c], 0.0, kBceClamp);
            bce += -std::log1p(-pc);
            if (p[c] < kBceClamp) {
                g_p[c] = 1.0 / (1.0 - pc);
            } else {
                sig = mix64(sig ^ static_cast<std::uint64_t>(c + 1));
            }
        }
        l.adv_term = lambda_r * bce;
        if (lambda_r != 0.0) {
            g_p *= lambda_r;
            l.grad_adv.logits = p.cwiseProduct((g_p.array() - p.dot(g_p)).matrix());
        }
        l.branch_signature = sig;
    }
    l.total = l.ce_true + l.adv_term;
    return l;
}

}  // namespace isvqa
