#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "isvqa/counting.hpp"
#include "isvqa/qgen.hpp"
#include "isvqa/traincore.hpp"

namespace isvqa {

struct ModelConfig {
    int word_dim = 32;
    int hidden_dim = 64;
    int feature_dim = 64;
    int num_answers = 2;
    bool count_aware = false;
    bool regression_head = false;
    int pwl_intervals = PiecewiseLinearFn::kDefaultIntervals;

    void validate() const;
    /// Flags implied by a training mode.
    static ModelConfig for_mode(TrainMode mode, int feature_dim, int num_answers);

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Question words; index 0 is the reserved unknown token.
class WordVocab {
public:
    static constexpr std::string_view kUnknown = "<unk>";

    WordVocab();
    explicit WordVocab(std::vector<std::string> words);

    static WordVocab build(std::span<const QASample> samples);

    std::size_t size() const noexcept { return words_.size(); }
    const std::vector<std::string>& words() const noexcept { return words_; }
    int index(std::string_view word) const;
    std::vector<int> encode(std::span<const std::string> tokens) const;

    friend bool operator==(const WordVocab& a, const WordVocab& b) { return a.words_ == b.words_; }

private:
    std::vector<std::string> words_;
    std::map<std::string, int, std::less<>> index_;
};

/// Singular category named by a question token ("cars" -> car, "people" -> person).
std::optional<std::string> category_of_token(std::string_view token);

/// Rows of every proposal whose category is named in the question.
std::vector<bool> scrub_objects(std::span<const std::string> question_tokens,
                                std::span<const ObjectProposal> proposals);

struct ForwardOutput {
    VectorXd logits;
    VectorXd probabilities;
    VectorXd attention;        // fusion attention alpha, sums to 1
    VectorXd count_attention;  // a, each in (0,1)
    VectorXd count_scores;     // C (ones when the count path is off)
    double c_hat = 0.0;
    std::optional<double> regression;
};

/// Upstream gradient of the scalar objective wrt the forward outputs.
struct OutputGrad {
    VectorXd logits;
    double regression = 0.0;
};

class Model;

/// One recorded forward pass. backward() may run once per forward.
class ForwardTrace {
public:
    const ForwardOutput& output() const noexcept { return out_; }
    std::uint64_t branch_signature() const noexcept;

    /// Accumulates parameter gradients into `store` (same layout as the model).
    void backward(const OutputGrad& upstream, ParamStore& store);

private:
    friend class Model;

    const Model* model_ = nullptr;
    bool pending_ = false;
    ForwardOutput out_;
    std::vector<int> tokens_;
    VectorXd word_mean_;
    VectorXd q_;
    MatrixXd X_;
    MatrixXd V_;
    MatrixXd V_tilde_;
    MatrixXd P_;
    VectorXd context_;
    VectorXd fused_in_;
    VectorXd h_;
    std::shared_ptr<CountGraph> count_graph_;
};

class Model {
public:
    Model(ModelConfig config, WordVocab words, AnswerVocab answers, std::uint64_t seed);
    Model(ModelConfig config, WordVocab words, AnswerVocab answers, ParamStore params);

    static std::vector<TensorSpec> tensor_specs(const ModelConfig& config, std::size_t vocab_size);

    const ModelConfig& config() const noexcept { return config_; }
    const WordVocab& words() const noexcept { return words_; }
    const AnswerVocab& answers() const noexcept { return answers_; }
    ParamStore& params() noexcept { return params_; }
    const ParamStore& params() const noexcept { return params_; }

    /// Mean word embedding, affine, tanh. Rejects an empty token list.
    VectorXd encode_question(std::span<const int> token_ids) const;

    /// `features` is (n, feature_dim); `distances` is the counting module's D
    /// (only read when count_aware). Rows flagged in `scrub_mask` are zeroed
    /// before anything else.
    ForwardTrace forward(const MatrixXd& features, const MatrixXd& distances, std::span<const int> token_ids,
                         const std::vector<bool>* scrub_mask = nullptr) const;

    CountModuleParams count_params() const;

    nlohmann::json header_json() const;
    static Model from_checkpoint(const Checkpoint& ck);

private:
    ModelConfig config_;
    WordVocab words_;
    AnswerVocab answers_;
    ParamStore params_;
};

/// -log p(gold).
double loss_classification(const ForwardOutput& out, int gold);
VectorXd loss_classification_grad(const ForwardOutput& out, int gold);

/// (r - target)^2 for count questions; rejects other question types.
double loss_regression(const ForwardOutput& out, double numeric_target, QuestionType qtype);

struct AdversarialLoss {
    double total = 0.0;
    double ce_true = 0.0;
    double adv_term = 0.0;  // the signed term added to ce_true
    OutputGrad grad_true;
    OutputGrad grad_adv;
    std::uint64_t branch_signature = 0;
};

/// advreg_ce: CE(true) - lambda_r * min(CE(adv), cap).
/// advreg_bce: CE(true) + lambda_r * sum_c -log(1 - clamp(p'_c, 0, 1 - 1e-7)).
AdversarialLoss loss_adversarial(const ForwardOutput& out_true, const ForwardOutput& out_adv, int gold,
                                 TrainMode mode, double lambda_r, double cap);

inline constexpr double kBceClamp = 1.0 - 1e-7;

}  // namespace isvqa
