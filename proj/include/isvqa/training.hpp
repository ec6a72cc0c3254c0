#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "isvqa/model.hpp"
#include "isvqa/qgen.hpp"
#include "isvqa/traincore.hpp"

namespace isvqa {

/// Model-side dataset view: dense features, box distances and token ids,
/// computed once per dataset.
struct PreparedSample {
    MatrixXd features;
    MatrixXd distances;
    std::vector<int> tokens;
    int gold = -1;  // -1 when the gold label is outside the answer vocabulary
    std::optional<int> numeric_target;
    QuestionType qtype = QuestionType::main;
    std::array<std::string, 3> answers;
    std::vector<bool> adversarial_mask;
};

/// Rejects image-less data and feature-dimension mismatches.
std::vector<PreparedSample> prepare_samples(const Dataset& ds, const Model& model);

struct SampleResult {
    double loss = 0.0;
    int predicted = 0;
    std::uint64_t branch_signature = 0;
};

/// The per-sample objective of `cfg.mode`. When `grads` is given the gradient
/// of scale * loss is accumulated into it.
SampleResult sample_objective(const Model& model, const PreparedSample& s, const TrainConfig& cfg,
                              ParamStore* grads = nullptr, double scale = 1.0);

/// Highest-scoring answer; ties go to the lowest index.
int argmax_answer(const VectorXd& logits);

struct EpochRecord {
    std::string phase;
    int epoch = 0;
    double loss = 0.0;
    double accuracy = 0.0;
};

struct RunManifest {
    nlohmann::json train_config;
    nlohmann::json model_config;
    std::vector<std::string> dataset_hashes;
    std::vector<EpochRecord> epochs;
    double wall_clock_seconds = 0.0;
    std::string checkpoint_path;
    std::uint64_t seed = 0;
    bool diverged = false;
    std::string divergence_message;
    bool early_stopped = false;

    nlohmann::json to_json() const;
};

struct TrainResult {
    Model model;
    RunManifest manifest;
};

/// Hex FNV-1a over the serialized dataset (features regenerated, not embedded).
std::string dataset_hash(const Dataset& ds);

/// Dimensions of a model built for a dataset; feature_dim and num_answers are
/// filled in from the data.
struct ModelDims {
    int word_dim = 32;
    int hidden_dim = 64;
    int pwl_intervals = PiecewiseLinearFn::kDefaultIntervals;
};

/// Trains a fresh model with vocabularies built from `train_set`.
TrainResult train(const Dataset& train_set, const TrainConfig& cfg, const ModelDims& dims = {});

/// Trains a fresh model over the given vocabularies.
TrainResult train(const Dataset& train_set, const TrainConfig& cfg, const ModelDims& dims, WordVocab words,
                  AnswerVocab answers);

/// Phase 1 on color/position questions, phase 2 on the main set, one merged
/// vocabulary for both. `cfg.pretrain_epochs` sets the phase-1 length.
TrainResult pretrain_then_finetune(const Dataset& pretrain_set, const Dataset& main_set, const TrainConfig& cfg,
                                   const ModelDims& dims = {});

/// Two-sample batch (one count question, one other), at most four proposals
/// each, tiny dims; used by the `gradcheck` subcommand and the acceptance suite.
struct GradcheckSetup {
    Model model;
    std::vector<PreparedSample> batch;
};

GradcheckSetup make_gradcheck_setup(TrainMode mode, std::uint64_t seed, const ModelDims& dims = {4, 6, 4},
                                    int feature_dim = 8, int max_proposals = 4);

/// Central-difference check of the mean batch objective of `mode`.
GradcheckReport gradcheck_mode(TrainMode mode, std::uint64_t seed, double tolerance, double h = 1e-5);

void save_run(const std::filesystem::path& checkpoint_path, const std::filesystem::path& manifest_path,
              const TrainConfig& cfg, TrainResult& result);

}  // namespace isvqa
