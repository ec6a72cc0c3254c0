#include "isvqa/qgen.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>

#include "isvqa/error.hpp"

namespace isvqa {
namespace {

constexpr std::array<std::string_view, kMaxCountWord> kNumberWords = {
    "one",    "two",    "three",   "four",     "five",     "six",     "seven",
    "eight",  "nine",   "ten",     "eleven",   "twelve",   "thirteen", "fourteen",
    "fifteen", "sixteen", "seventeen", "eighteen", "nineteen", "twenty"};

constexpr int kMaxSceneAttempts = 256;

std::string maybe_corrupt(const std::string& category, const QuestionContext& ctx) {
    if (ctx.rng.bernoulli(ctx.cfg.detector_noise)) return std::string(corrupted_label(category));
    return category;
}

template <class T>
const T& pick(const std::vector<T>& items, Rng& rng) {
    return items[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(items.size()) - 1))];
}

QASample make_sample(const QuestionContext& ctx, Question q, std::string gold) {
    QASample s;
    s.image_set_ref = ctx.image_set.sample_id;
    s.answers = simulate_annotators(gold, q.qtype, ctx.cfg, ctx.rng);
    s.question = std::move(q);
    s.gold = std::move(gold);
    return s;
}

// Coordinates closer than this are treated as equal when ranking objects.
constexpr double kTieEps = 1e-9;

enum class Relation { left, right, above, below };

std::string relation_text(Relation r, std::string_view subject) {
    std::string s(subject);
    switch (r) {
        case Relation::left: return "what is to the left of the " + s + "?";
        case Relation::right: return "what is to the right of the " + s + "?";
        case Relation::above: return "what is above the " + s + "?";
        case Relation::below: return "what is below the " + s + "?";
    }
    return {};
}

// Coordinate that is minimized by the extreme object of a relation.
double extremity(Relation r, const BBox& b) {
    switch (r) {
        case Relation::left: return b.center_x();
        case Relation::right: return -b.center_x();
        case Relation::above: return b.center_y();
        case Relation::below: return -b.center_y();
    }
    return 0.0;
}

struct PositionCandidate {
    Relation relation;
    const SceneObject* subject;
    const SceneObject* answer;
};

}  // namespace

std::string_view number_word(int n) {
    if (n < 1 || n > kMaxCountWord) {
        fail(ErrorKind::invalid_argument, "no number word for " + std::to_string(n));
    }
    return kNumberWords[static_cast<std::size_t>(n - 1)];
}

std::optional<int> number_from_word(std::string_view word) {
    for (std::size_t i = 0; i < kNumberWords.size(); ++i) {
        if (kNumberWords[i] == word) return static_cast<int>(i) + 1;
    }
    return std::nullopt;
}

std::string plural(std::string_view noun) {
    if (noun == "person") return "people";
    std::string s(noun);
    if (s.ends_with("s") || s.ends_with("sh") || s.ends_with("ch") || s.ends_with("x")) return s + "es";
    return s + "s";
}

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::isalnum(c)) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (std::isspace(c)) {
            if (!cur.empty()) out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

Question make_question(std::string text, QuestionType qtype, std::set<std::string> targets,
                       std::optional<int> numeric_target) {
    Question q;
    q.tokens = tokenize(text);
    q.text = std::move(text);
    q.qtype = qtype;
    q.target_categories = std::move(targets);
    q.numeric_target = numeric_target;
    return q;
}

AnswerVocab::AnswerVocab(std::vector<std::string> labels) : labels_(std::move(labels)) {
    for (std::size_t i = 0; i < labels_.size(); ++i) {
        const auto [it, inserted] = index_.emplace(labels_[i], static_cast<int>(i));
        if (!inserted) fail(ErrorKind::invalid_argument, "duplicate answer label '" + labels_[i] + "'");
    }
}

std::optional<int> AnswerVocab::find(std::string_view label) const {
    const auto it = index_.find(label);
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

int AnswerVocab::index(std::string_view label) const {
    if (auto i = find(label)) return *i;
    fail(ErrorKind::vocab_mismatch, "answer '" + std::string(label) + "' not in vocabulary");
}

AnswerVocab build_vocab(std::span<const QASample> samples) {
    if (samples.empty()) fail(ErrorKind::invalid_argument, "cannot build a vocabulary from no samples");
    std::set<std::string> labels;
    for (const auto& s : samples) {
        labels.insert(s.gold);
        labels.insert(s.answers.begin(), s.answers.end());
    }
    return AnswerVocab(std::vector<std::string>(labels.begin(), labels.end()));
}

std::optional<QASample> gen_color_question(const QuestionContext& ctx) {
    std::vector<const SceneObject*> unique;
    for (const auto& o : ctx.scene.objects) {
        if (ctx.scene.views_of(o.category) == 1) unique.push_back(&o);
    }
    if (unique.empty()) return std::nullopt;
    const SceneObject& obj = *pick(unique, ctx.rng);
    const auto label = maybe_corrupt(obj.category, ctx);
    auto q = make_question("what is the color of the " + label + "?", QuestionType::color, {label});
    return make_sample(ctx, std::move(q), obj.color);
}

std::optional<QASample> gen_position_question(const QuestionContext& ctx) {
    std::vector<PositionCandidate> candidates;
    for (int img = 0; img < kImagesPerSet; ++img) {
        std::vector<const SceneObject*> in_image;
        for (const auto& o : ctx.scene.objects) {
            if (o.image_idx == img) in_image.push_back(&o);
        }
        if (in_image.size() < 2) continue;
        for (auto rel : {Relation::left, Relation::right, Relation::above, Relation::below}) {
            const SceneObject* extreme = nullptr;
            bool tied = false;
            for (const auto* o : in_image) {
                if (!extreme || extremity(rel, o->bbox) < extremity(rel, extreme->bbox) - kTieEps) {
                    extreme = o;
                    tied = false;
                } else if (std::abs(extremity(rel, o->bbox) - extremity(rel, extreme->bbox)) <= kTieEps) {
                    tied = true;
                }
            }
            if (tied) continue;
            const SceneObject* nearest = nullptr;
            double best = std::numeric_limits<double>::infinity();
            bool near_tied = false;
            for (const auto* o : in_image) {
                if (o == extreme) continue;
                const double d = std::hypot(o->bbox.center_x() - extreme->bbox.center_x(),
                                            o->bbox.center_y() - extreme->bbox.center_y());
                if (d < best - kTieEps) {
                    best = d;
                    nearest = o;
                    near_tied = false;
                } else if (std::abs(d - best) <= kTieEps) {
                    near_tied = true;
                }
            }
            if (near_tied || best <= kTieEps) continue;
            if (ctx.scene.views_of(extreme->category) != 1 || ctx.scene.views_of(nearest->category) != 1) {
                continue;
            }
            candidates.push_back({rel, nearest, extreme});
        }
    }
    if (candidates.empty()) return std::nullopt;
    const auto& c = pick(candidates, ctx.rng);
    const auto label = maybe_corrupt(c.subject->category, ctx);
    auto q = make_question(relation_text(c.relation, label), QuestionType::position, {label});
    return make_sample(ctx, std::move(q), c.answer->category);
}

std::optional<QASample> gen_count_question(const QuestionContext& ctx) {
    std::string category;
    if (ctx.scene.count_target) {
        category = ctx.scene.count_target->category;
    } else {
        std::set<std::string> present;
        for (const auto& o : ctx.scene.objects) present.insert(o.category);
        if (present.empty()) return std::nullopt;
        category = pick(std::vector<std::string>(present.begin(), present.end()), ctx.rng);
    }
    const int count = ctx.scene.count_of(category);
    if (count < 1 || count > kMaxCountWord) return std::nullopt;
    const auto label = maybe_corrupt(category, ctx);
    auto q = make_question("how many " + plural(label) + " are there?", QuestionType::count, {label}, count);
    return make_sample(ctx, std::move(q), std::string(number_word(count)));
}

std::optional<QASample> gen_existence_question(const QuestionContext& ctx) {
    std::vector<std::string> present;
    std::vector<std::string> absent;
    for (auto c : ctx.cfg.categories()) {
        (ctx.scene.views_of(c) > 0 ? present : absent).emplace_back(c);
    }
    const bool yes = ctx.rng.bernoulli(ctx.cfg.existence_yes_rate);
    const auto& pool = yes ? present : absent;
    if (pool.empty()) return std::nullopt;
    const auto label = maybe_corrupt(pick(pool, ctx.rng), ctx);
    auto q = make_question("is there a " + label + " in the images?", QuestionType::existence, {label});
    return make_sample(ctx, std::move(q), yes ? "yes" : "no");
}

std::array<std::string, 3> simulate_annotators(std::string_view gold, QuestionType qtype,
                                               const GenConfig& cfg, Rng& rng) {
    auto other_of = [&](std::span<const std::string_view> labels) {
        std::vector<std::string> others;
        for (auto l : labels) {
            if (l != gold) others.emplace_back(l);
        }
        if (others.empty()) return std::string(gold);
        return pick(others, rng);
    };
    auto perturb = [&]() -> std::string {
        if (const auto n = number_from_word(gold); n && qtype == QuestionType::count) {
            int m = rng.bernoulli(0.5) ? *n + 1 : *n - 1;
            if (m < 1) m = *n + 1;
            if (m > kMaxCountWord) m = *n - 1;
            return std::string(number_word(m));
        }
        if (qtype == QuestionType::color || is_color(gold)) return other_of(cfg.colors());
        if (gold == "yes") return "no";
        if (gold == "no") return "yes";
        return other_of(cfg.categories());
    };
    std::array<std::string, 3> out;
    for (auto& a : out) a = rng.bernoulli(cfg.annotator_error) ? perturb() : std::string(gold);
    return out;
}

std::vector<QASample> Dataset::qa_samples() const {
    std::vector<QASample> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(s.qa);
    return out;
}

Dataset build_dataset(const GenConfig& base, bool pretrain) {
    base.validate();
    GenConfig cfg = base;
    if (pretrain) {
        cfg.mix.count = 0.0;
        cfg.mix.existence = 0.0;
        if (cfg.mix.color + cfg.mix.position <= 0.0) cfg.mix.color = cfg.mix.position = 0.5;
    }
    Dataset ds;
    ds.gen_config = cfg;
    ds.pretrain = pretrain;
    ds.samples.reserve(static_cast<std::size_t>(cfg.num_samples));
    for (int i = 0; i < cfg.num_samples; ++i) {
        const std::int64_t id = cfg.first_sample_id + i;
        std::optional<Sample> made;
        for (int attempt = 0; attempt < kMaxSceneAttempts && !made; ++attempt) {
            auto gs = generate_scene(cfg, id, attempt);
            Rng rng(derive_seed(derive_seed(cfg.seed ^ 0x9a11ULL, static_cast<std::uint64_t>(id)),
                                static_cast<std::uint64_t>(attempt)));
            const QuestionContext ctx{gs.image_set, gs.scene, cfg, rng};
            std::optional<QASample> qa;
            switch (gs.scene.planned_type) {
                case QuestionType::color: qa = gen_color_question(ctx); break;
                case QuestionType::position: qa = gen_position_question(ctx); break;
                case QuestionType::count: qa = gen_count_question(ctx); break;
                case QuestionType::existence:
                case QuestionType::main: qa = gen_existence_question(ctx); break;
            }
            if (!qa) continue;
            qa->pretrain = pretrain;
            made = Sample{std::move(gs.image_set), std::move(gs.scene), std::move(*qa)};
        }
        if (!made) {
            fail(ErrorKind::invalid_config,
                 "could not generate a question for sample " + std::to_string(id) +
                     " after " + std::to_string(kMaxSceneAttempts) + " scene draws");
        }
        ds.samples.push_back(std::move(*made));
    }
    return ds;
}

}  // namespace isvqa
