#include <doctest.h>

#include <cmath>
#include <set>

#include "isvqa/error.hpp"
#include "isvqa/evalstats.hpp"
#include "isvqa/qgen.hpp"
#include "isvqa/rng.hpp"

using namespace isvqa;

namespace {

SceneObject object(int instance, std::string category, std::string color, int image, BBox box) {
    return SceneObject{instance, std::move(category), std::move(color), image, box, instance};
}

struct Fixture {
    ImageSet set;
    Scene scene;
    GenConfig cfg;

    Fixture() { cfg.annotator_error = 0.0; }

    std::optional<QASample> ask(std::optional<QASample> (*gen)(const QuestionContext&), std::uint64_t seed) {
        Rng rng(seed);
        return gen(QuestionContext{set, scene, cfg, rng});
    }
};

double binomial(int n, int k, double p) {
    double c = 1.0;
    for (int i = 0; i < k; ++i) c = c * (n - i) / (i + 1);
    return c * std::pow(p, k) * std::pow(1.0 - p, n - k);
}

}  // namespace

TEST_CASE("number words round-trip") {
    CHECK(number_word(15) == "fifteen");
    CHECK(number_from_word("fifteen") == 15);
    for (int n = 1; n <= 20; ++n) CHECK(number_from_word(number_word(n)) == n);
    CHECK_FALSE(number_from_word("car").has_value());
    CHECK_THROWS_AS(number_word(0), Error);
}

TEST_CASE("plurals and tokens") {
    CHECK(plural("car") == "cars");
    CHECK(plural("person") == "people");
    CHECK(plural("bus") == "buses");
    CHECK(plural("bench") == "benches");
    CHECK(tokenize("What is the color of the Sign?") ==
          std::vector<std::string>{"what", "is", "the", "color", "of", "the", "sign"});
}

TEST_CASE("color question for a unique sign") {
    Fixture f;
    f.scene.objects = {object(0, "sign", "green", 2, {0.1, 0.1, 0.3, 0.3})};
    const auto qa = f.ask(gen_color_question, 1);
    REQUIRE(qa);
    CHECK(qa->question.text == "what is the color of the sign?");
    CHECK(qa->gold == "green");
    CHECK(qa->answers == std::array<std::string, 3>{"green", "green", "green"});
}

TEST_CASE("two cars and nothing else give no color question") {
    Fixture f;
    f.scene.objects = {object(0, "car", "red", 0, {0.1, 0.1, 0.3, 0.3}),
                       object(1, "car", "blue", 1, {0.4, 0.4, 0.6, 0.6})};
    for (std::uint64_t seed = 0; seed < 5; ++seed) CHECK_FALSE(f.ask(gen_color_question, seed).has_value());
}

TEST_CASE("detector noise keeps the corrupted label in the question") {
    Fixture f;
    f.cfg.detector_noise = 1.0;
    f.scene.objects = {object(0, "bus", "yellow", 0, {0.1, 0.1, 0.3, 0.3})};
    const auto qa = f.ask(gen_color_question, 3);
    REQUIRE(qa);
    CHECK(qa->question.text == "what is the color of the train?");
    CHECK(qa->gold == "yellow");
    CHECK(qa->question.target_categories == std::set<std::string>{"train"});
}

TEST_CASE("position question between a wall and a sidewalk") {
    Fixture f;
    f.scene.objects = {object(0, "wall", "gray", 0, {0.3, 0.1, 0.5, 0.3}),
                       object(1, "sidewalk", "gray", 0, {0.3, 0.6, 0.5, 0.8})};
    std::set<std::string> seen;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto qa = f.ask(gen_position_question, seed);
        REQUIRE(qa);
        seen.insert(qa->question.text);
        if (qa->question.text == "what is below the wall?") CHECK(qa->gold == "sidewalk");
        if (qa->question.text == "what is above the sidewalk?") CHECK(qa->gold == "wall");
    }
    // Equal x-centers make left/right ambiguous, so only the vertical relations appear.
    CHECK(seen == std::set<std::string>{"what is below the wall?", "what is above the sidewalk?"});
}

TEST_CASE("position question needs two objects in one image") {
    Fixture f;
    for (int img = 0; img < kImagesPerSet; ++img) {
        f.scene.objects.push_back(object(img, std::string(kCategories[static_cast<std::size_t>(img)]), "red", img,
                                         {0.1, 0.1, 0.3, 0.3}));
    }
    CHECK_FALSE(f.ask(gen_position_question, 1).has_value());
}

TEST_CASE("objects with identical centers give no position question") {
    Fixture f;
    f.scene.objects = {object(0, "car", "red", 0, {0.2, 0.2, 0.4, 0.4}),
                       object(1, "tree", "green", 0, {0.1, 0.1, 0.5, 0.5})};
    CHECK_FALSE(f.ask(gen_position_question, 1).has_value());
}

TEST_CASE("count question counts instances, not proposals") {
    Fixture f;
    // Three cars; the third reappears in a second image.
    f.scene.objects = {object(0, "car", "red", 0, {0.1, 0.1, 0.2, 0.2}),
                       object(1, "car", "blue", 0, {0.5, 0.5, 0.6, 0.6}),
                       object(2, "car", "white", 1, {0.1, 0.1, 0.2, 0.2}),
                       object(2, "car", "white", 2, {0.15, 0.1, 0.25, 0.2})};
    f.scene.count_target = CountTarget{"car", 3};
    const auto qa = f.ask(gen_count_question, 1);
    REQUIRE(qa);
    CHECK(qa->question.text == "how many cars are there?");
    CHECK(qa->gold == "three");
    CHECK(qa->question.numeric_target == 3);
}

TEST_CASE("count target absent from the scene gives no question") {
    Fixture f;
    f.scene.objects = {object(0, "car", "red", 0, {0.1, 0.1, 0.2, 0.2})};
    f.scene.count_target = CountTarget{"person", 0};
    CHECK_FALSE(f.ask(gen_count_question, 1).has_value());
}

TEST_CASE("existence questions answer yes and no") {
    Fixture f;
    f.scene.objects = {object(0, "car", "red", 0, {0.1, 0.1, 0.2, 0.2})};
    f.cfg.existence_yes_rate = 1.0;
    auto qa = f.ask(gen_existence_question, 1);
    REQUIRE(qa);
    CHECK(qa->question.text == "is there a car in the images?");
    CHECK(qa->gold == "yes");
    f.cfg.existence_yes_rate = 0.0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        qa = f.ask(gen_existence_question, seed);
        REQUIRE(qa);
        CHECK(qa->gold == "no");
        CHECK(qa->question.text != "is there a car in the images?");
    }
}

TEST_CASE("annotators") {
    GenConfig cfg;
    Rng rng(5);
    SUBCASE("error-free annotators repeat gold") {
        cfg.annotator_error = 0.0;
        CHECK(simulate_annotators("blue", QuestionType::color, cfg, rng) ==
              std::array<std::string, 3>{"blue", "blue", "blue"});
    }
    SUBCASE("always-wrong annotators move counts by one") {
        cfg.annotator_error = 1.0;
        for (int i = 0; i < 50; ++i) {
            for (const auto& a : simulate_annotators("three", QuestionType::count, cfg, rng)) {
                CHECK((a == "two" || a == "four"));
            }
        }
        for (const auto& a : simulate_annotators("one", QuestionType::count, cfg, rng)) CHECK(a == "two");
        for (const auto& a : simulate_annotators("yes", QuestionType::existence, cfg, rng)) CHECK(a == "no");
        for (const auto& a : simulate_annotators("red", QuestionType::color, cfg, rng)) {
            CHECK(a != "red");
            CHECK(is_color(a));
        }
    }
    SUBCASE("mean accuracy of gold matches the binomial expectation") {
        cfg.annotator_error = 0.2;
        // Each annotator agrees with gold independently with p = 0.8; accuracy is
        // 1 for two or more agreements, 0.5 for one.
        double expected = 0.0;
        for (int k = 0; k <= 3; ++k) expected += binomial(3, k, 0.8) * std::min(1.0, k / 2.0);
        CHECK(expected == doctest::Approx(0.944));
        constexpr int kRuns = 10000;
        double sum = 0.0;
        for (int i = 0; i < kRuns; ++i) {
            const auto answers = simulate_annotators("car", QuestionType::position, cfg, rng);
            sum += vqa_accuracy("car", answers);
        }
        // Standard error of the mean is about 0.0016.
        CHECK(std::abs(sum / kRuns - expected) < 0.006);
    }
}

TEST_CASE("answer vocabulary") {
    QASample a;
    a.gold = "yes";
    a.answers = {"yes", "no", "two"};
    const std::vector<QASample> samples{a};
    const auto vocab = build_vocab(samples);
    CHECK(vocab.labels() == std::vector<std::string>{"no", "two", "yes"});
    CHECK(vocab.index("two") == 1);
    CHECK_THROWS_AS(vocab.index("mirror"), Error);
    CHECK(AnswerVocab(vocab.labels()) == vocab);
    CHECK_THROWS_AS(build_vocab(std::span<const QASample>{}), Error);
}

TEST_CASE("built datasets") {
    GenConfig cfg;
    cfg.num_samples = 300;
    cfg.feature_dim = 16;
    const auto ds = build_dataset(cfg);
    CHECK(ds.samples.size() == 300);
    CHECK(ds == build_dataset(cfg));
    const auto qa = ds.qa_samples();
    const auto vocab = build_vocab(qa);
    CHECK(vocab.contains("yes"));
    CHECK(vocab.contains("no"));
    std::set<QuestionType> types;
    for (const auto& s : qa) {
        types.insert(s.question.qtype);
        CHECK(s.question.tokens.size() >= 5);
        CHECK(s.question.tokens.size() <= 10);
        for (const auto& t : s.question.target_categories) {
            const bool known = is_category(t) || std::ranges::any_of(kCategories, [&](auto c) {
                                   return corrupted_label(c) == t;
                               });
            CHECK(known);
        }
    }
    CHECK(types.size() == 4);

    const auto pre = build_dataset(cfg, true);
    CHECK(pre.pretrain);
    for (const auto& s : pre.samples) {
        CHECK((s.qa.question.qtype == QuestionType::color || s.qa.question.qtype == QuestionType::position));
        CHECK(s.qa.pretrain);
    }
}
