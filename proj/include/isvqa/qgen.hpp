#pragma once

#include <array>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "isvqa/rng.hpp"
#include "isvqa/scenes.hpp"

namespace isvqa {

/// Supported number words; counts outside [1, kMaxCountWord] are not asked.
inline constexpr int kMaxCountWord = 20;

std::string_view number_word(int n);
std::optional<int> number_from_word(std::string_view word);

std::string plural(std::string_view noun);

/// Lowercase, punctuation stripped, split on whitespace.
std::vector<std::string> tokenize(std::string_view text);

struct Question {
    std::string text;
    std::vector<std::string> tokens;
    QuestionType qtype = QuestionType::main;
    std::set<std::string> target_categories;
    std::optional<int> numeric_target;

    friend bool operator==(const Question&, const Question&) = default;
};

Question make_question(std::string text, QuestionType qtype, std::set<std::string> targets = {},
                       std::optional<int> numeric_target = std::nullopt);

struct QASample {
    std::int64_t image_set_ref = 0;
    Question question;
    std::array<std::string, 3> answers;
    std::string gold;
    bool pretrain = false;

    friend bool operator==(const QASample&, const QASample&) = default;
};

class AnswerVocab {
public:
    AnswerVocab() = default;
    explicit AnswerVocab(std::vector<std::string> labels);

    std::size_t size() const noexcept { return labels_.size(); }
    const std::vector<std::string>& labels() const noexcept { return labels_; }
    const std::string& label(std::size_t index) const { return labels_.at(index); }
    std::optional<int> find(std::string_view label) const;
    /// Throws Error(vocab_mismatch) for labels outside the vocabulary.
    int index(std::string_view label) const;
    bool contains(std::string_view label) const { return find(label).has_value(); }

    friend bool operator==(const AnswerVocab& a, const AnswerVocab& b) { return a.labels_ == b.labels_; }

private:
    std::vector<std::string> labels_;
    std::map<std::string, int, std::less<>> index_;
};

/// Every label appearing as gold or annotator answer, sorted lexicographically.
AnswerVocab build_vocab(std::span<const QASample> samples);

/// A question generator receives the scene and its private stream of draws.
struct QuestionContext {
    const ImageSet& image_set;
    const Scene& scene;
    const GenConfig& cfg;
    Rng& rng;
};

std::optional<QASample> gen_color_question(const QuestionContext& ctx);
std::optional<QASample> gen_position_question(const QuestionContext& ctx);
std::optional<QASample> gen_count_question(const QuestionContext& ctx);
std::optional<QASample> gen_existence_question(const QuestionContext& ctx);

/// Three independent annotators; each returns gold with probability
/// 1 - annotator_error and a perturbed label otherwise.
std::array<std::string, 3> simulate_annotators(std::string_view gold, QuestionType qtype,
                                               const GenConfig& cfg, Rng& rng);

struct Sample {
    ImageSet image_set;
    Scene scene;
    QASample qa;

    friend bool operator==(const Sample&, const Sample&) = default;
};

struct Dataset {
    std::optional<GenConfig> gen_config;
    bool pretrain = false;
    /// Imported annotation files carry questions only.
    bool image_less = false;
    /// Set when imported answers had to be padded or truncated to three.
    int answer_count_warnings = 0;
    std::vector<Sample> samples;

    std::vector<QASample> qa_samples() const;

    friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Scenes plus one question each. With `pretrain`, only color and position
/// questions are generated (weights taken from cfg.mix, equal if both are zero).
Dataset build_dataset(const GenConfig& cfg, bool pretrain = false);

}  // namespace isvqa
