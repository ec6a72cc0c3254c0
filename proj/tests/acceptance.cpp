// Acceptance suite: one PASS/FAIL line per criterion. Thresholds are fixed
// here; pass criterion numbers on the command line to run a subset.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "isvqa/counting.hpp"
#include "isvqa/evalstats.hpp"
#include "isvqa/training.hpp"

using namespace isvqa;
namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kSeeds[] = {1, 2, 3};

struct Verdict {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v, int prec = 4) {
    std::ostringstream os;
    os.precision(prec);
    os << v;
    return os.str();
}

struct Split {
    Dataset train;
    Dataset test;
};

Split make_split(GenConfig cfg, int n_train, int n_test) {
    Split s;
    cfg.first_sample_id = 0;
    cfg.num_samples = n_train;
    s.train = build_dataset(cfg);
    cfg.first_sample_id = 1'000'000;
    cfg.num_samples = n_test;
    s.test = build_dataset(cfg);
    return s;
}

struct Scores {
    double full = 0.0;
    double language_only = 0.0;
    double count = 0.0;
    double color = 0.0;
    double train_accuracy = 0.0;
    std::size_t answers = 0;
};

Scores score(const TrainResult& r, const Dataset& test) {
    EvalOptions opts;
    opts.measure_language_only = true;
    const auto rep = evaluate(r.model, test, opts);
    Scores s;
    s.full = rep.overall;
    s.language_only = rep.language_only_accuracy;
    s.count = rep.accuracy_of(QuestionType::count);
    s.color = rep.accuracy_of(QuestionType::color);
    s.train_accuracy = r.manifest.epochs.empty() ? 0.0 : r.manifest.epochs.back().accuracy;
    s.answers = r.model.answers().size();
    return s;
}

Scores mean_of(const std::vector<Scores>& v) {
    Scores m;
    for (const auto& s : v) {
        m.full += s.full / v.size();
        m.language_only += s.language_only / v.size();
        m.count += s.count / v.size();
        m.color += s.color / v.size();
        m.train_accuracy += s.train_accuracy / v.size();
    }
    m.answers = v.empty() ? 0 : v.front().answers;
    return m;
}

// ---- shared configurations -------------------------------------------------

constexpr ModelDims kDims{16, 32, 8};

// Scenes small enough for the toy fusion model to learn the visual path
// within a few minutes on one core.
GenConfig desk_config(std::uint64_t seed) {
    GenConfig g;
    g.seed = seed;
    g.feature_dim = 32;
    g.objects_per_image_max = 3;
    g.num_categories = 10;
    g.num_colors = 8;
    return g;
}

// Count questions carry most of the prior the skew creates, so they get a
// larger share here.
GenConfig biased_config() {
    auto g = desk_config(401);
    g.bias_skew = 0.75;
    g.mix = {0.1, 0.1, 0.5, 0.3};
    return g;
}

constexpr int kEpochs = 40;

TrainConfig base_train(TrainMode mode, std::uint64_t seed, int epochs) {
    TrainConfig t;
    t.mode = mode;
    t.seed = seed;
    t.epochs = epochs;
    t.learning_rate = 1e-2;
    t.batch_size = 32;
    return t;
}

// ---- criteria --------------------------------------------------------------

Verdict criterion1() {
    const std::vector<std::string> answers = {"mirror", "mirror", "wall"};
    const bool exact = vqa_accuracy("mirror", answers) == 1.0 && vqa_accuracy("wall", answers) == 0.5 &&
                       vqa_accuracy("cat", answers) == 0.0;

    // Recompose the overall mean from per-sample and per-group accuracies.
    GenConfig g;
    g.num_samples = 300;
    g.feature_dim = 16;
    g.annotator_error = 0.3;
    const auto ds = build_dataset(g);
    TrainConfig t = base_train(TrainMode::baseline, 1, 1);
    const auto r = train(ds, t, {8, 8, 8});
    const auto rep = evaluate(r.model, ds);
    double per_sample = 0.0;
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        per_sample += vqa_accuracy(r.model.answers().label(static_cast<std::size_t>(rep.predictions[i])),
                                   ds.samples[i].qa.answers);
    }
    per_sample /= static_cast<double>(ds.samples.size());
    double grouped = 0.0;
    int n = 0;
    for (const auto& [key, g_acc] : rep.per_qtype) {
        grouped += g_acc.accuracy_sum;
        n += g_acc.count;
    }
    grouped /= n;
    double prefixed = 0.0;
    for (const auto& [key, g_acc] : rep.per_prefix) prefixed += g_acc.accuracy() * g_acc.count;
    prefixed /= n;
    const double err = std::max({std::abs(per_sample - rep.overall), std::abs(grouped - rep.overall),
                                 std::abs(prefixed - rep.overall)});
    return {exact && err <= 1e-12 && n == rep.sample_count,
            "annotator cases exact=" + std::string(exact ? "yes" : "no") + " recomposition_error=" + fmt(err, 3)};
}

Verdict criterion2() {
    constexpr double kTol = 1e-9;
    const auto params = CountModuleParams::identity();
    double worst = 0.0;
    for (int m = 1; m <= 4; ++m) {
        CountGraph dup;
        CountGraph disjoint;
        std::vector<BBox> same(m, BBox{0.2, 0.2, 0.4, 0.5});
        std::vector<BBox> apart;
        for (int i = 0; i < m; ++i) apart.push_back({0.05 + 0.22 * i, 0.1, 0.2 + 0.22 * i, 0.3});
        const std::vector<int> img(m, 0);
        const VectorXd a = VectorXd::Ones(m);
        const double c_dup = dup.forward(a, distance_matrix(same, img), params).c_hat;
        const double c_dis = disjoint.forward(a, distance_matrix(apart, img), params).c_hat;
        worst = std::max({worst, std::abs(c_dup - 1.0), std::abs(c_dis - m)});
    }
    return {worst <= kTol, "max deviation=" + fmt(worst, 3) + " tol=1e-09"};
}

Verdict criterion3() {
    constexpr double kTol = 1e-4;
    constexpr double kStep = 1e-5;
    bool pass = true;
    std::string detail;
    for (auto mode : {TrainMode::baseline, TrainMode::count_aware, TrainMode::regression, TrainMode::advreg_ce,
                      TrainMode::advreg_bce}) {
        const auto rep = gradcheck_mode(mode, 3, kTol, kStep);
        pass = pass && rep.passed && rep.checked > 0;
        detail += std::string(to_string(mode)) + "=" + fmt(rep.max_rel_error, 2) + " ";
    }
    return {pass, detail + "tol=1e-04"};
}

// Baseline models on the biased data are shared by criteria 4 and 5.
struct BiasRuns {
    Split split;
    std::vector<Scores> baseline;
};

BiasRuns& bias_runs() {
    static BiasRuns runs = [] {
        BiasRuns r;
        r.split = make_split(biased_config(), 5000, 2000);
        for (auto seed : kSeeds) {
            r.baseline.push_back(score(train(r.split.train, base_train(TrainMode::baseline, seed, kEpochs), kDims),
                                       r.split.test));
        }
        return r;
    }();
    return runs;
}

Verdict criterion4() {
    const auto& runs = bias_runs();
    const auto& s = runs.baseline.front();
    const double chance = 1.0 / static_cast<double>(s.answers);
    return {s.language_only >= 10.0 * chance, "language_only=" + fmt(s.language_only) + " chance=" + fmt(chance) +
                                                  " threshold=" + fmt(10.0 * chance) + " full=" + fmt(s.full)};
}

Verdict criterion5() {
    auto& runs = bias_runs();
    std::vector<Scores> ce;
    std::vector<Scores> bce;
    for (auto seed : kSeeds) {
        auto t = base_train(TrainMode::advreg_ce, seed, kEpochs);
        t.lambda_r = 0.05;
        ce.push_back(score(train(runs.split.train, t, kDims), runs.split.test));
        t.mode = TrainMode::advreg_bce;
        bce.push_back(score(train(runs.split.train, t, kDims), runs.split.test));
    }
    const auto b = mean_of(runs.baseline);
    const auto c = mean_of(ce);
    const auto d = mean_of(bce);
    const double ce_reduction = 1.0 - c.language_only / b.language_only;
    const double bce_reduction = 1.0 - d.language_only / b.language_only;
    const double full_drop = b.full - c.full;
    const bool pass = ce_reduction >= 0.5 && full_drop < 0.05 && bce_reduction < ce_reduction;
    return {pass, "L-only base=" + fmt(b.language_only) + " ce=" + fmt(c.language_only) + " bce=" +
                      fmt(d.language_only) + " ce_reduction=" + fmt(ce_reduction) + " bce_reduction=" +
                      fmt(bce_reduction) + " full base=" + fmt(b.full) + " ce=" + fmt(c.full) +
                      " drop=" + fmt(full_drop)};
}

Verdict criterion6() {
    auto g = desk_config(601);
    g.dup_proposal_rate = 0.6;
    g.cross_image_rate = 0.0;
    g.mix = {0.0, 0.0, 1.0, 0.0};
    const auto split = make_split(g, 3000, 1500);
    std::vector<Scores> base;
    std::vector<Scores> aware;
    for (auto seed : kSeeds) {
        base.push_back(score(train(split.train, base_train(TrainMode::baseline, seed, kEpochs), kDims), split.test));
        aware.push_back(score(train(split.train, base_train(TrainMode::count_aware, seed, kEpochs), kDims), split.test));
    }
    const auto b = mean_of(base);
    const auto a = mean_of(aware);
    return {a.count - b.count >= 0.01,
            "count accuracy baseline=" + fmt(b.count) + " count_aware=" + fmt(a.count) + " margin=" +
                fmt(a.count - b.count)};
}

Verdict criterion7() {
    const auto g = desk_config(701);
    const auto split = make_split(g, 600, 2000);
    GenConfig p = g;
    p.first_sample_id = 2'000'000;
    p.num_samples = 4000;
    const auto pre = build_dataset(p, true);
    std::vector<Scores> single;
    std::vector<Scores> two;
    for (auto seed : kSeeds) {
        auto t = base_train(TrainMode::baseline, seed, kEpochs);
        single.push_back(score(train(split.train, t, kDims), split.test));
        t.pretrain_epochs = 10;
        two.push_back(score(pretrain_then_finetune(pre, split.train, t, kDims), split.test));
    }
    const auto s = mean_of(single);
    const auto w = mean_of(two);
    return {w.color - s.color >= 0.01, "color accuracy single=" + fmt(s.color) + " two_phase=" + fmt(w.color) +
                                           " margin=" + fmt(w.color - s.color)};
}

Verdict criterion8() {
    // Fewer categories, more data and a smaller step: at desk scale the visual
    // path otherwise converges on some seeds and not others, and that spread
    // swamps a 2 point band.
    auto g = desk_config(801);
    g.num_categories = 6;
    const auto split = make_split(g, 10000, 3000);
    std::vector<Scores> base;
    std::vector<Scores> reg;
    for (auto seed : kSeeds) {
        auto t = base_train(TrainMode::baseline, seed, 60);
        t.learning_rate = 3e-3;
        base.push_back(score(train(split.train, t, kDims), split.test));
        t.mode = TrainMode::regression;
        t.lambda_reg = 1e-3;
        reg.push_back(score(train(split.train, t, kDims), split.test));
    }
    const auto b = mean_of(base);
    const auto r = mean_of(reg);
    const bool pass = std::abs(r.full - b.full) <= 0.02 && b.count - r.count <= 0.01;
    return {pass, "overall baseline=" + fmt(b.full) + " regression=" + fmt(r.full) + " count baseline=" +
                      fmt(b.count) + " regression=" + fmt(r.count)};
}

GenConfig easy_config() {
    GenConfig g;
    g.seed = 901;
    g.num_samples = 1500;
    g.feature_dim = 32;
    g.dup_proposal_rate = 0.0;
    g.cross_image_rate = 0.0;
    g.annotator_error = 0.0;
    g.feature_noise = 0.0;
    g.num_categories = 6;
    g.num_colors = 4;
    g.objects_per_image_max = 2;
    g.mix = {0.3, 0.0, 0.0, 0.7};
    return g;
}

Verdict criterion9() {
    const auto ds = build_dataset(easy_config());
    const auto r = train(ds, base_train(TrainMode::baseline, 1, 20), kDims);
    const double acc = r.manifest.epochs.back().accuracy;
    return {acc >= 0.9, "train accuracy=" + fmt(acc) + " after " + std::to_string(r.manifest.epochs.size()) +
                            " epochs"};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

Verdict criterion10() {
    GenConfig g;
    g.num_samples = 300;
    g.feature_dim = 16;
    const auto ds = build_dataset(g);
    const auto root = fs::temp_directory_path() / "isvqa_acceptance_determinism";
    fs::remove_all(root);
    std::vector<std::string> files;
    for (int run = 0; run < 2; ++run) {
        const auto dir = root / std::to_string(run);
        fs::create_directories(dir);
        auto t = base_train(TrainMode::count_aware, 5, 2);
        auto r = train(ds, t, {8, 16, 8});
        save_run(dir / "checkpoint.json", dir / "manifest.json", t, r);
        EvalOptions opts;
        opts.checkpoint_id = "determinism";
        opts.threads = run == 0 ? 1 : 3;
        evaluate(r.model, ds, opts).write(dir / "eval");
        std::string blob = slurp(dir / "checkpoint.json");
        for (const auto& f : fs::directory_iterator(dir / "eval")) blob += slurp(f.path());
        files.push_back(std::move(blob));
    }
    fs::remove_all(root);
    return {files[0] == files[1] && !files[0].empty(),
            "checkpoint+report bytes identical=" + std::string(files[0] == files[1] ? "yes" : "no")};
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<std::function<Verdict()>> criteria = {criterion1, criterion2, criterion3, criterion4,
                                                            criterion5, criterion6, criterion7, criterion8,
                                                            criterion9, criterion10};
    std::set<int> wanted;
    for (int i = 1; i < argc; ++i) wanted.insert(std::stoi(argv[i]));
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i) + 1;
        if (!wanted.empty() && !wanted.contains(id)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Verdict v;
        try {
            v = criteria[i]();
        } catch (const std::exception& e) {
            v = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (!v.pass) ++failures;
        std::cout << "criterion " << id << ": " << (v.pass ? "PASS" : "FAIL") << "  " << v.detail << "  ("
                  << fmt(secs, 3) << "s)" << std::endl;
    }
    return failures == 0 ? 0 : 1;
}
