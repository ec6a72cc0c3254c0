#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "isvqa/model.hpp"
#include "isvqa/qgen.hpp"

namespace isvqa {

/// 1 when two or more annotators gave the prediction, 0.5 for one, 0 otherwise.
/// Matching is exact string equality.
double vqa_accuracy(std::string_view prediction, std::span<const std::string> answers);

inline constexpr int kDefaultPrefixLength = 3;
inline constexpr int kTopPrefixes = 15;

/// First `prefix_length` tokens joined by single spaces.
std::string question_type_key(const Question& q, int prefix_length = kDefaultPrefixLength);

struct AnswerCount {
    std::string answer;
    int count = 0;
    double frequency = 0.0;
};

struct PrefixDistribution {
    std::string prefix;
    int count = 0;
    std::vector<AnswerCount> answers;  // descending count, ties by label
    double top2_share = 0.0;
};

struct AnswerDistribution {
    int total = 0;
    std::vector<PrefixDistribution> prefixes;  // descending count, ties by prefix

    nlohmann::json to_json() const;
};

/// Gold-answer frequencies for the most frequent question prefixes.
AnswerDistribution answer_distribution(std::span<const QASample> samples, int top = kTopPrefixes,
                                       int prefix_length = kDefaultPrefixLength);

struct GroupAccuracy {
    int count = 0;
    double accuracy_sum = 0.0;

    double accuracy() const { return count > 0 ? accuracy_sum / count : 0.0; }
};

struct EvalReport {
    std::string checkpoint_id;
    bool language_only = false;
    int sample_count = 0;
    double overall = 0.0;
    /// Accuracy with every feature row zeroed (equal to overall when language_only).
    double language_only_accuracy = 0.0;
    std::map<std::string, GroupAccuracy> per_qtype;
    /// Count questions grouped by their gold number word.
    std::map<std::string, GroupAccuracy> per_count_answer;
    std::map<std::string, GroupAccuracy> per_prefix;
    AnswerDistribution distribution;
    std::vector<int> predictions;

    double accuracy_of(QuestionType t) const;

    nlohmann::json to_json() const;
    /// report.json plus per_qtype.csv, per_count_answer.csv, per_prefix.csv and
    /// answer_distribution.csv in `dir`.
    void write(const std::filesystem::path& dir) const;
};

struct EvalOptions {
    bool scrub_visual = false;
    /// Also run the scrubbed pass when scrub_visual is off.
    bool measure_language_only = true;
    int threads = 1;
    std::string checkpoint_id;
};

/// Argmax prediction per sample (lowest index on ties), aggregated VQA-accuracy.
/// Rejects image-less datasets and feature-dimension mismatches.
EvalReport evaluate(const Model& model, const Dataset& ds, const EvalOptions& opts = {});

struct FieldMap {
    std::string question = "question";
    std::string answers = "answers";
    std::string id = "id";
};

/// Reads JSON (array) or JSON Lines annotation files into image-less samples.
/// Answer lists are padded (repeating the last) or truncated to three; each
/// adjustment is counted in Dataset::answer_count_warnings.
Dataset import_annotations(const std::filesystem::path& path, const FieldMap& fields = {});

}  // namespace isvqa
