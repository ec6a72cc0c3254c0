#include "isvqa/dataset_io.hpp"

#include <fstream>
#include <sstream>

#include "isvqa/error.hpp"

namespace isvqa {
namespace {

using nlohmann::json;

[[noreturn]] void schema_error(const std::string& source, std::size_t line, const std::string& what) {
    fail(ErrorKind::schema, source + ":" + std::to_string(line) + ": " + what);
}

json bbox_json(const BBox& b) { return json::array({b.x1, b.y1, b.x2, b.y2}); }

BBox bbox_from(const json& j) {
    const auto v = j.get<std::vector<double>>();
    if (v.size() != 4) throw std::invalid_argument("bbox needs 4 coordinates");
    BBox b{v[0], v[1], v[2], v[3]};
    if (!b.valid()) throw std::invalid_argument("invalid bbox");
    return b;
}

json sample_json(const Sample& s, bool embed_features) {
    json proposals = json::array();
    for (const auto& p : s.image_set.proposals) {
        json jp = {{"id", p.id},
                   {"category", p.category},
                   {"color", p.color},
                   {"image_idx", p.image_idx},
                   {"bbox", bbox_json(p.bbox)},
                   {"duplicate_of", p.duplicate_of ? json(*p.duplicate_of) : json(nullptr)}};
        if (embed_features) jp["feature"] = p.feature;
        proposals.push_back(std::move(jp));
    }
    json objects = json::array();
    for (const auto& o : s.scene.objects) {
        objects.push_back({{"instance", o.instance},
                           {"category", o.category},
                           {"color", o.color},
                           {"image_idx", o.image_idx},
                           {"bbox", bbox_json(o.bbox)},
                           {"proposal_id", o.proposal_id}});
    }
    json scene = {{"objects", std::move(objects)}, {"planned_type", to_string(s.scene.planned_type)}};
    if (s.scene.count_target) {
        scene["count_target"] = {{"category", s.scene.count_target->category},
                                 {"count", s.scene.count_target->count}};
    }
    const auto& q = s.qa.question;
    return {{"sample_id", s.image_set.sample_id},
            {"proposals", std::move(proposals)},
            {"scene", std::move(scene)},
            {"question", q.text},
            {"question_type", to_string(q.qtype)},
            {"target_categories", q.target_categories},
            {"numeric_target", q.numeric_target ? json(*q.numeric_target) : json(nullptr)},
            {"answers", s.qa.answers},
            {"gold", s.qa.gold},
            {"pretrain", s.qa.pretrain}};
}

Sample sample_from(const json& j, const std::optional<GenConfig>& cfg, bool embedded) {
    Sample s;
    s.image_set.sample_id = j.at("sample_id").get<std::int64_t>();
    for (const auto& jp : j.at("proposals")) {
        ObjectProposal p;
        p.id = jp.at("id").get<int>();
        p.category = jp.at("category").get<std::string>();
        p.color = jp.at("color").get<std::string>();
        p.image_idx = jp.at("image_idx").get<int>();
        if (p.image_idx < 0 || p.image_idx >= kImagesPerSet) throw std::invalid_argument("image_idx out of range");
        p.bbox = bbox_from(jp.at("bbox"));
        if (!jp.at("duplicate_of").is_null()) p.duplicate_of = jp.at("duplicate_of").get<int>();
        if (embedded) p.feature = jp.at("feature").get<std::vector<double>>();
        s.image_set.proposals.push_back(std::move(p));
    }
    if (!embedded && cfg && !s.image_set.proposals.empty()) regenerate_features(s.image_set, *cfg);
    if (const auto it = j.find("scene"); it != j.end()) {
        for (const auto& jo : it->at("objects")) {
            SceneObject o;
            o.instance = jo.at("instance").get<int>();
            o.category = jo.at("category").get<std::string>();
            o.color = jo.at("color").get<std::string>();
            o.image_idx = jo.at("image_idx").get<int>();
            o.bbox = bbox_from(jo.at("bbox"));
            o.proposal_id = jo.at("proposal_id").get<int>();
            s.scene.objects.push_back(std::move(o));
        }
        s.scene.planned_type = question_type_from_string(it->at("planned_type").get<std::string>());
        if (const auto ct = it->find("count_target"); ct != it->end()) {
            s.scene.count_target = CountTarget{ct->at("category").get<std::string>(), ct->at("count").get<int>()};
        }
    }
    std::set<std::string> targets;
    if (const auto it = j.find("target_categories"); it != j.end()) targets = it->get<std::set<std::string>>();
    std::optional<int> numeric;
    if (const auto it = j.find("numeric_target"); it != j.end() && !it->is_null()) numeric = it->get<int>();
    s.qa.image_set_ref = s.image_set.sample_id;
    s.qa.question = make_question(j.at("question").get<std::string>(),
                                  question_type_from_string(j.at("question_type").get<std::string>()),
                                  std::move(targets), numeric);
    const auto answers = j.at("answers").get<std::vector<std::string>>();
    if (answers.size() != 3) throw std::invalid_argument("expected exactly 3 answers");
    std::copy(answers.begin(), answers.end(), s.qa.answers.begin());
    s.qa.gold = j.at("gold").get<std::string>();
    s.qa.pretrain = j.value("pretrain", false);
    return s;
}

}  // namespace

json to_json(const GenConfig& c) {
    return {{"seed", c.seed},
            {"feature_seed", c.feature_seed},
            {"first_sample_id", c.first_sample_id},
            {"num_samples", c.num_samples},
            {"objects_per_image_min", c.objects_per_image_min},
            {"objects_per_image_max", c.objects_per_image_max},
            {"num_categories", c.num_categories},
            {"num_colors", c.num_colors},
            {"dup_proposal_rate", c.dup_proposal_rate},
            {"dup_jitter", c.dup_jitter},
            {"dup_iou_min", c.dup_iou_min},
            {"cross_image_rate", c.cross_image_rate},
            {"bias_skew", c.bias_skew},
            {"detector_noise", c.detector_noise},
            {"annotator_error", c.annotator_error},
            {"existence_yes_rate", c.existence_yes_rate},
            {"feature_noise", c.feature_noise},
            {"feature_dim", c.feature_dim},
            {"mix",
             {{"color", c.mix.color},
              {"position", c.mix.position},
              {"count", c.mix.count},
              {"existence", c.mix.existence}}}};
}

GenConfig gen_config_from_json(const json& j) {
    GenConfig c;
    const json defaults = to_json(c);
    for (const auto& [key, value] : j.items()) {
        if (!defaults.contains(key)) fail(ErrorKind::schema, "unknown gen_config key '" + key + "'");
        if (key == "mix") {
            for (const auto& [mk, mv] : value.items()) {
                if (!defaults["mix"].contains(mk)) fail(ErrorKind::schema, "unknown mix key '" + mk + "'");
            }
        }
    }
    try {
        c.seed = j.value("seed", c.seed);
        c.feature_seed = j.value("feature_seed", c.feature_seed);
        c.first_sample_id = j.value("first_sample_id", c.first_sample_id);
        c.num_samples = j.value("num_samples", c.num_samples);
        c.objects_per_image_min = j.value("objects_per_image_min", c.objects_per_image_min);
        c.objects_per_image_max = j.value("objects_per_image_max", c.objects_per_image_max);
        c.num_categories = j.value("num_categories", c.num_categories);
        c.num_colors = j.value("num_colors", c.num_colors);
        c.dup_proposal_rate = j.value("dup_proposal_rate", c.dup_proposal_rate);
        c.dup_jitter = j.value("dup_jitter", c.dup_jitter);
        c.dup_iou_min = j.value("dup_iou_min", c.dup_iou_min);
        c.cross_image_rate = j.value("cross_image_rate", c.cross_image_rate);
        c.bias_skew = j.value("bias_skew", c.bias_skew);
        c.detector_noise = j.value("detector_noise", c.detector_noise);
        c.annotator_error = j.value("annotator_error", c.annotator_error);
        c.existence_yes_rate = j.value("existence_yes_rate", c.existence_yes_rate);
        c.feature_noise = j.value("feature_noise", c.feature_noise);
        c.feature_dim = j.value("feature_dim", c.feature_dim);
        if (const auto it = j.find("mix"); it != j.end()) {
            c.mix.color = it->value("color", c.mix.color);
            c.mix.position = it->value("position", c.mix.position);
            c.mix.count = it->value("count", c.mix.count);
            c.mix.existence = it->value("existence", c.mix.existence);
        }
    } catch (const json::exception& e) {
        fail(ErrorKind::schema, std::string("bad gen_config: ") + e.what());
    }
    return c;
}

void write_dataset(std::ostream& out, const Dataset& ds, bool embed_features) {
    json header = {{"format_version", kDatasetFormatVersion},
                   {"gen_config", ds.gen_config ? to_json(*ds.gen_config) : json(nullptr)},
                   {"pretrain", ds.pretrain},
                   {"image_less", ds.image_less},
                   {"embed_features", embed_features}};
    out << header.dump() << '\n';
    for (const auto& s : ds.samples) out << sample_json(s, embed_features).dump() << '\n';
}

void save_dataset(const std::filesystem::path& path, const Dataset& ds, bool embed_features) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorKind::missing_file, "cannot write " + path.string());
    write_dataset(out, ds, embed_features);
    if (!out) fail(ErrorKind::missing_file, "write failed for " + path.string());
}

Dataset read_dataset(std::istream& in, const std::string& source) {
    Dataset ds;
    std::string line;
    std::size_t lineno = 0;
    bool embedded = false;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            schema_error(source, lineno, std::string("malformed JSON: ") + e.what());
        }
        if (!have_header) {
            have_header = true;
            if (!j.is_object() || j.value("format_version", 0) != kDatasetFormatVersion) {
                schema_error(source, lineno, "missing or unsupported dataset header");
            }
            if (!j.at("gen_config").is_null()) ds.gen_config = gen_config_from_json(j.at("gen_config"));
            ds.pretrain = j.value("pretrain", false);
            ds.image_less = j.value("image_less", false);
            embedded = j.value("embed_features", false);
            continue;
        }
        try {
            ds.samples.push_back(sample_from(j, ds.gen_config, embedded));
        } catch (const Error&) {
            throw;
        } catch (const std::exception& e) {
            schema_error(source, lineno, e.what());
        }
    }
    if (!have_header) schema_error(source, lineno, "empty dataset file");
    return ds;
}

Dataset load_dataset(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::missing_file, "cannot open " + path.string());
    return read_dataset(in, path.string());
}

}  // namespace isvqa
