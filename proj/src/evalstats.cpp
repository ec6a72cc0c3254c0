#include "isvqa/evalstats.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <thread>

#include "isvqa/error.hpp"
#include "isvqa/training.hpp"

namespace isvqa {
namespace {

using nlohmann::json;

json group_json(const std::map<std::string, GroupAccuracy>& groups) {
    json j = json::object();
    for (const auto& [k, g] : groups) j[k] = {{"count", g.count}, {"accuracy", g.accuracy()}};
    return j;
}

void write_group_csv(const std::filesystem::path& path, std::string_view key_name,
                     const std::map<std::string, GroupAccuracy>& groups) {
    std::ofstream out(path);
    if (!out) fail(ErrorKind::missing_file, "cannot write " + path.string());
    out << key_name << ",count,accuracy\n";
    for (const auto& [k, g] : groups) out << '"' << k << "\"," << g.count << ',' << g.accuracy() << '\n';
}

// Predictions for every sample; samples are split into contiguous chunks so
// the reduction order never depends on the thread count.
std::vector<int> predict_all(const Model& model, const std::vector<PreparedSample>& data, bool scrub, int threads) {
    std::vector<int> preds(data.size(), 0);
    auto work = [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            const auto& s = data[i];
            std::vector<bool> all(static_cast<std::size_t>(s.features.rows()), true);
            auto trace = model.forward(s.features, s.distances, s.tokens, scrub ? &all : nullptr);
            preds[i] = argmax_answer(trace.output().logits);
        }
    };
    const auto t = static_cast<std::size_t>(std::max(1, threads));
    if (t == 1 || data.size() < 2 * t) {
        work(0, data.size());
        return preds;
    }
    std::vector<std::jthread> pool;
    const std::size_t chunk = (data.size() + t - 1) / t;
    for (std::size_t b = 0; b < data.size(); b += chunk) pool.emplace_back(work, b, std::min(data.size(), b + chunk));
    return preds;
}

}  // namespace

double vqa_accuracy(std::string_view prediction, std::span<const std::string> answers) {
    if (answers.size() != 3) {
        fail(ErrorKind::invalid_argument, "VQA-accuracy needs exactly 3 annotator answers, got " +
                                              std::to_string(answers.size()));
    }
    const auto support = std::count(answers.begin(), answers.end(), prediction);
    if (support >= 2) return 1.0;
    if (support == 1) return 0.5;
    return 0.0;
}

std::string question_type_key(const Question& q, int prefix_length) {
    std::string key;
    const auto n = std::min<std::size_t>(q.tokens.size(), static_cast<std::size_t>(std::max(prefix_length, 1)));
    for (std::size_t i = 0; i < n; ++i) {
        if (i) key += ' ';
        key += q.tokens[i];
    }
    return key;
}

json AnswerDistribution::to_json() const {
    json ps = json::array();
    for (const auto& p : prefixes) {
        json as = json::array();
        for (const auto& a : p.answers) as.push_back({{"answer", a.answer}, {"count", a.count}, {"frequency", a.frequency}});
        ps.push_back({{"prefix", p.prefix}, {"count", p.count}, {"top2_share", p.top2_share}, {"answers", as}});
    }
    return {{"total", total}, {"prefixes", ps}};
}

AnswerDistribution answer_distribution(std::span<const QASample> samples, int top, int prefix_length) {
    if (samples.empty()) fail(ErrorKind::invalid_argument, "answer distribution of an empty dataset");
    std::map<std::string, std::map<std::string, int>> table;
    for (const auto& s : samples) ++table[question_type_key(s.question, prefix_length)][s.gold];
    AnswerDistribution d;
    d.total = static_cast<int>(samples.size());
    for (const auto& [prefix, answers] : table) {
        PrefixDistribution p;
        p.prefix = prefix;
        for (const auto& [a, c] : answers) {
            p.answers.push_back({a, c, 0.0});
            p.count += c;
        }
        std::stable_sort(p.answers.begin(), p.answers.end(),
                         [](const AnswerCount& x, const AnswerCount& y) { return x.count > y.count; });
        for (auto& a : p.answers) a.frequency = static_cast<double>(a.count) / p.count;
        int top2 = 0;
        for (std::size_t i = 0; i < std::min<std::size_t>(2, p.answers.size()); ++i) top2 += p.answers[i].count;
        p.top2_share = static_cast<double>(top2) / p.count;
        d.prefixes.push_back(std::move(p));
    }
    std::stable_sort(d.prefixes.begin(), d.prefixes.end(),
                     [](const PrefixDistribution& x, const PrefixDistribution& y) { return x.count > y.count; });
    if (top > 0 && d.prefixes.size() > static_cast<std::size_t>(top)) d.prefixes.resize(static_cast<std::size_t>(top));
    return d;
}

double EvalReport::accuracy_of(QuestionType t) const {
    const auto it = per_qtype.find(std::string(to_string(t)));
    return it == per_qtype.end() ? 0.0 : it->second.accuracy();
}

json EvalReport::to_json() const {
    return {{"checkpoint_id", checkpoint_id},
            {"language_only", language_only},
            {"sample_count", sample_count},
            {"overall", overall},
            {"language_only_accuracy", language_only_accuracy},
            {"per_qtype", group_json(per_qtype)},
            {"per_count_answer", group_json(per_count_answer)},
            {"per_prefix", group_json(per_prefix)},
            {"answer_distribution", distribution.to_json()}};
}

void EvalReport::write(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    {
        std::ofstream out(dir / "report.json");
        if (!out) fail(ErrorKind::missing_file, "cannot write " + (dir / "report.json").string());
        out << to_json().dump(2) << '\n';
    }
    write_group_csv(dir / "per_qtype.csv", "qtype", per_qtype);
    write_group_csv(dir / "per_count_answer.csv", "answer", per_count_answer);
    write_group_csv(dir / "per_prefix.csv", "prefix", per_prefix);
    std::ofstream out(dir / "answer_distribution.csv");
    out << "prefix,rank,answer,count,frequency,top2_share\n";
    for (const auto& p : distribution.prefixes) {
        for (std::size_t i = 0; i < p.answers.size(); ++i) {
            const auto& a = p.answers[i];
            out << '"' << p.prefix << "\"," << i + 1 << ",\"" << a.answer << "\"," << a.count << ',' << a.frequency
                << ',' << p.top2_share << '\n';
        }
    }
}

EvalReport evaluate(const Model& model, const Dataset& ds, const EvalOptions& opts) {
    if (ds.image_less) fail(ErrorKind::schema, "cannot evaluate on image-less (imported) data");
    if (ds.samples.empty()) fail(ErrorKind::invalid_argument, "cannot evaluate on an empty dataset");
    const auto data = prepare_samples(ds, model);
    EvalReport r;
    r.checkpoint_id = opts.checkpoint_id;
    r.language_only = opts.scrub_visual;
    r.sample_count = static_cast<int>(data.size());
    r.predictions = predict_all(model, data, opts.scrub_visual, opts.threads);
    double total = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto& s = data[i];
        const auto& qa = ds.samples[i].qa;
        const double acc = vqa_accuracy(model.answers().label(static_cast<std::size_t>(r.predictions[i])), s.answers);
        total += acc;
        auto add = [acc](GroupAccuracy& g) {
            ++g.count;
            g.accuracy_sum += acc;
        };
        add(r.per_qtype[std::string(to_string(qa.question.qtype))]);
        add(r.per_prefix[question_type_key(qa.question)]);
        if (qa.question.qtype == QuestionType::count) add(r.per_count_answer[qa.gold]);
    }
    r.overall = total / static_cast<double>(data.size());
    if (opts.scrub_visual) {
        r.language_only_accuracy = r.overall;
    } else if (opts.measure_language_only) {
        const auto scrubbed = predict_all(model, data, true, opts.threads);
        double lo = 0.0;
        for (std::size_t i = 0; i < data.size(); ++i) {
            lo += vqa_accuracy(model.answers().label(static_cast<std::size_t>(scrubbed[i])), data[i].answers);
        }
        r.language_only_accuracy = lo / static_cast<double>(data.size());
    }
    const auto qa = ds.qa_samples();
    r.distribution = answer_distribution(qa);
    return r;
}

Dataset import_annotations(const std::filesystem::path& path, const FieldMap& fields) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::missing_file, "cannot open " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    const std::string text = buf.str();

    // (record, line number) pairs; for a JSON array the element index stands in.
    std::vector<std::pair<json, std::size_t>> records;
    const auto first = text.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && text[first] == '[') {
        json arr;
        try {
            arr = json::parse(text);
        } catch (const json::exception& e) {
            fail(ErrorKind::schema, path.string() + ": malformed JSON: " + e.what());
        }
        std::size_t idx = 0;
        for (auto& r : arr) records.emplace_back(std::move(r), ++idx);
    } else {
        std::istringstream lines(text);
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(lines, line)) {
            ++lineno;
            if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
            try {
                records.emplace_back(json::parse(line), lineno);
            } catch (const json::exception& e) {
                fail(ErrorKind::schema, path.string() + ":" + std::to_string(lineno) + ": malformed JSON: " + e.what());
            }
        }
    }

    Dataset ds;
    ds.image_less = true;
    for (const auto& [rec, lineno] : records) {
        const auto where = path.string() + ":" + std::to_string(lineno) + ": ";
        if (!rec.is_object()) fail(ErrorKind::schema, where + "record is not an object");
        for (const auto* key : {&fields.question, &fields.answers, &fields.id}) {
            if (!rec.contains(*key)) fail(ErrorKind::schema, where + "missing field '" + *key + "'");
        }
        Sample s;
        try {
            const auto& id = rec.at(fields.id);
            s.image_set.sample_id = id.is_number_integer() ? id.get<std::int64_t>()
                                                           : static_cast<std::int64_t>(fnv1a(id.dump()) >> 1);
            std::vector<std::string> answers;
            for (const auto& a : rec.at(fields.answers)) {
                answers.push_back(a.is_object() ? a.at("answer").get<std::string>() : a.get<std::string>());
            }
            if (answers.empty()) fail(ErrorKind::schema, where + "no answers");
            if (answers.size() != 3) {
                ++ds.answer_count_warnings;
                answers.resize(3, answers.back());
            }
            std::map<std::string, int> votes;
            for (const auto& a : answers) ++votes[a];
            std::string gold = answers.front();
            for (const auto& a : answers) {
                if (votes[a] > votes[gold]) gold = a;
            }
            s.qa.image_set_ref = s.image_set.sample_id;
            s.qa.question = make_question(rec.at(fields.question).get<std::string>(), QuestionType::main);
            if (s.qa.question.tokens.empty()) fail(ErrorKind::schema, where + "empty question");
            std::copy(answers.begin(), answers.end(), s.qa.answers.begin());
            s.qa.gold = gold;
        } catch (const json::exception& e) {
            fail(ErrorKind::schema, where + e.what());
        }
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

}  // namespace isvqa
