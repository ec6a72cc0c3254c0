#include "isvqa/scenes.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "isvqa/error.hpp"

namespace isvqa {
namespace {

constexpr std::array<std::string_view, kCategories.size()> kCorrupted = {
    "van",   "pedestrian", "lorry",   "signal", "fence", "train",  "bush",  "house",
    "road",  "bike",       "scooter", "wagon",  "post",  "column", "railing", "seat"};

constexpr int kGeometryDims = 4;
constexpr int kMaxDuplicateTries = 16;

BBox random_box(Rng& rng) {
    const double w = rng.uniform(0.1, 0.3);
    const double h = rng.uniform(0.1, 0.3);
    const double x1 = rng.uniform(0.0, 1.0 - w);
    const double y1 = rng.uniform(0.0, 1.0 - h);
    return {x1, y1, x1 + w, y1 + h};
}

BBox jittered(const BBox& b, double jitter, Rng& rng) {
    auto j = [&](double v) { return std::clamp(v + rng.uniform(-jitter, jitter), 0.0, 1.0); };
    return {j(b.x1), j(b.y1), j(b.x2), j(b.y2)};
}

BBox translated(const BBox& b, Rng& rng) {
    const double w = b.x2 - b.x1;
    const double x1 = std::clamp(b.x1 + rng.uniform(-0.2, 0.2), 0.0, 1.0 - w);
    return {x1, b.y1, x1 + w, b.y2};
}

void require(bool ok, const std::string& what) {
    if (!ok) fail(ErrorKind::invalid_config, "invalid gen config: " + what);
}

bool is_probability(double p) { return p >= 0.0 && p <= 1.0; }

}  // namespace

std::string_view corrupted_label(std::string_view category) {
    for (std::size_t i = 0; i < kCategories.size(); ++i) {
        if (kCategories[i] == category) return kCorrupted[i];
    }
    fail(ErrorKind::invalid_argument, "unknown category '" + std::string(category) + "'");
}

bool is_category(std::string_view label) {
    return std::find(kCategories.begin(), kCategories.end(), label) != kCategories.end();
}

bool is_color(std::string_view label) {
    return std::find(kColors.begin(), kColors.end(), label) != kColors.end();
}

bool BBox::valid() const noexcept {
    return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2) &&
           0.0 <= x1 && x1 < x2 && x2 <= 1.0 && 0.0 <= y1 && y1 < y2 && y2 <= 1.0;
}

double iou(const BBox& a, const BBox& b) {
    const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
    const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
    if (iw <= 0.0 || ih <= 0.0) return 0.0;
    const double inter = iw * ih;
    // Both orderings give the same floating-point result, so iou is exactly symmetric.
    const double uni = a.area() + b.area() - inter;
    return std::clamp(inter / uni, 0.0, 1.0);
}

std::string_view to_string(QuestionType t) noexcept {
    switch (t) {
        case QuestionType::color: return "color";
        case QuestionType::position: return "position";
        case QuestionType::count: return "count";
        case QuestionType::existence: return "existence";
        case QuestionType::main: return "main";
    }
    return "main";
}

QuestionType question_type_from_string(std::string_view s) {
    for (auto t : {QuestionType::color, QuestionType::position, QuestionType::count,
                   QuestionType::existence, QuestionType::main}) {
        if (to_string(t) == s) return t;
    }
    fail(ErrorKind::schema, "unknown question type '" + std::string(s) + "'");
}

int Scene::count_of(std::string_view category) const {
    std::set<int> instances;
    for (const auto& o : objects) {
        if (o.category == category) instances.insert(o.instance);
    }
    return static_cast<int>(instances.size());
}

int Scene::views_of(std::string_view category) const {
    return static_cast<int>(std::count_if(objects.begin(), objects.end(),
                                          [&](const SceneObject& o) { return o.category == category; }));
}

void GenConfig::validate() const {
    require(num_samples >= 0, "num_samples must be >= 0");
    require(first_sample_id >= 0, "first_sample_id must be >= 0");
    require(objects_per_image_min >= 1, "objects_per_image_min must be >= 1");
    require(objects_per_image_max >= objects_per_image_min,
            "objects_per_image_max must be >= objects_per_image_min");
    require(num_categories >= 2 && num_categories <= static_cast<int>(kCategories.size()),
            "num_categories must be in [2, " + std::to_string(kCategories.size()) + "]");
    require(num_colors >= 2 && num_colors <= static_cast<int>(kColors.size()),
            "num_colors must be in [2, " + std::to_string(kColors.size()) + "]");
    require(is_probability(dup_proposal_rate), "dup_proposal_rate must be in [0,1]");
    require(dup_jitter >= 0.0 && dup_jitter <= 0.5, "dup_jitter must be in [0,0.5]");
    require(dup_iou_min > 0.0 && dup_iou_min <= 1.0, "dup_iou_min must be in (0,1]");
    require(is_probability(cross_image_rate), "cross_image_rate must be in [0,1]");
    require(is_probability(bias_skew), "bias_skew must be in [0,1]");
    require(is_probability(detector_noise), "detector_noise must be in [0,1]");
    require(is_probability(annotator_error), "annotator_error must be in [0,1]");
    require(is_probability(existence_yes_rate), "existence_yes_rate must be in [0,1]");
    require(feature_noise >= 0.0 && std::isfinite(feature_noise), "feature_noise must be >= 0");
    require(feature_dim >= 8, "feature_dim must be >= 8");
    const auto& m = mix;
    require(m.color >= 0 && m.position >= 0 && m.count >= 0 && m.existence >= 0,
            "question mix weights must be >= 0");
    require(m.color + m.position + m.count + m.existence > 0, "question mix weights sum to zero");
}

std::span<const std::string_view> GenConfig::categories() const {
    return std::span(kCategories).first(static_cast<std::size_t>(num_categories));
}

std::span<const std::string_view> GenConfig::colors() const {
    return std::span(kColors).first(static_cast<std::size_t>(num_colors));
}

FeatureLayout FeatureLayout::for_dim(int feature_dim) {
    FeatureLayout l;
    l.noise_dims = std::max(1, feature_dim / 8);
    const int rest = feature_dim - kGeometryDims - l.noise_dims;
    l.category_dims = (rest + 1) / 2;
    l.color_dims = rest / 2;
    return l;
}

std::vector<double> label_code(std::string_view kind, std::string_view label, int dims,
                               std::uint64_t feature_seed) {
    std::string key(kind);
    key += ':';
    key += label;
    Rng rng(derive_seed(feature_seed, fnv1a(key)));
    std::vector<double> v(static_cast<std::size_t>(dims));
    double norm = 0.0;
    while (norm == 0.0) {
        norm = 0.0;
        for (auto& x : v) {
            x = rng.normal();
            norm += x * x;
        }
    }
    norm = std::sqrt(norm);
    for (auto& x : v) x /= norm;
    return v;
}

std::vector<double> synthesize_feature(std::string_view category, std::string_view color,
                                       const BBox& bbox, std::uint64_t noise_seed,
                                       const GenConfig& cfg) {
    if (!is_category(category)) {
        fail(ErrorKind::invalid_argument, "unknown category '" + std::string(category) + "'");
    }
    if (!is_color(color)) {
        fail(ErrorKind::invalid_argument, "unknown color '" + std::string(color) + "'");
    }
    const auto layout = FeatureLayout::for_dim(cfg.feature_dim);
    std::vector<double> f;
    f.reserve(static_cast<std::size_t>(cfg.feature_dim));
    const auto cat = label_code("category", category, layout.category_dims, cfg.feature_seed);
    const auto col = label_code("color", color, layout.color_dims, cfg.feature_seed);
    f.insert(f.end(), cat.begin(), cat.end());
    f.insert(f.end(), col.begin(), col.end());
    f.insert(f.end(), {bbox.x1, bbox.y1, bbox.x2, bbox.y2});
    Rng rng(noise_seed);
    for (int i = 0; i < layout.noise_dims; ++i) f.push_back(cfg.feature_noise * rng.normal());
    return f;
}

std::uint64_t proposal_noise_seed(const GenConfig& cfg, std::int64_t sample_id, int proposal_id) {
    return derive_seed(derive_seed(cfg.seed ^ 0x5eedfea7ULL, static_cast<std::uint64_t>(sample_id)),
                       static_cast<std::uint64_t>(proposal_id));
}

void regenerate_features(ImageSet& set, const GenConfig& cfg) {
    for (auto& p : set.proposals) {
        p.feature = synthesize_feature(p.category, p.color, p.bbox,
                                       proposal_noise_seed(cfg, set.sample_id, p.id), cfg);
    }
}

int draw_biased_count(double bias_skew, Rng& rng) {
    static constexpr std::array<int, 7> kTail = {1, 4, 5, 6, 7, 8, 9};
    if (rng.bernoulli(bias_skew)) return rng.bernoulli(0.5) ? 2 : 3;
    return kTail[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(kTail.size()) - 1))];
}

QuestionType draw_question_type(const QuestionMix& mix, Rng& rng) {
    const double total = mix.color + mix.position + mix.count + mix.existence;
    double u = rng.uniform() * total;
    if ((u -= mix.color) < 0.0) return QuestionType::color;
    if ((u -= mix.position) < 0.0) return QuestionType::position;
    if ((u -= mix.count) < 0.0) return QuestionType::count;
    if (mix.existence > 0.0) return QuestionType::existence;
    // Rounding pushed u past the last nonzero bucket.
    if (mix.count > 0.0) return QuestionType::count;
    return mix.position > 0.0 ? QuestionType::position : QuestionType::color;
}

GeneratedScene generate_scene(const GenConfig& cfg, std::int64_t sample_id, int attempt) {
    const auto sample_seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(sample_id));
    Rng plan_rng(sample_seed);
    const auto categories = cfg.categories();
    const auto colors = cfg.colors();
    auto pick = [](std::span<const std::string_view> labels, Rng& rng) {
        return std::string(labels[static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<int>(labels.size()) - 1))]);
    };

    GeneratedScene out;
    out.image_set.sample_id = sample_id;
    Scene& scene = out.scene;
    scene.planned_type = draw_question_type(cfg.mix, plan_rng);
    if (scene.planned_type == QuestionType::count) {
        CountTarget t;
        t.category = pick(categories, plan_rng);
        t.count = draw_biased_count(cfg.bias_skew, plan_rng);
        scene.count_target = t;
    }

    Rng rng(derive_seed(sample_seed, static_cast<std::uint64_t>(attempt) + 1));
    std::vector<SceneObject> views;
    int next_instance = 0;
    for (int img = 0; img < kImagesPerSet; ++img) {
        const int k = rng.uniform_int(cfg.objects_per_image_min, cfg.objects_per_image_max);
        for (int j = 0; j < k; ++j) {
            SceneObject o;
            o.instance = next_instance++;
            do {
                o.category = pick(categories, rng);
            } while (scene.count_target && o.category == scene.count_target->category);
            o.color = pick(colors, rng);
            o.image_idx = img;
            o.bbox = random_box(rng);
            views.push_back(std::move(o));
        }
    }
    if (scene.count_target) {
        for (int j = 0; j < scene.count_target->count; ++j) {
            SceneObject o;
            o.instance = next_instance++;
            o.category = scene.count_target->category;
            o.color = pick(colors, rng);
            o.image_idx = rng.uniform_int(0, kImagesPerSet - 1);
            o.bbox = random_box(rng);
            views.push_back(std::move(o));
        }
    }
    const std::size_t originals = views.size();
    for (std::size_t i = 0; i < originals; ++i) {
        if (!rng.bernoulli(cfg.cross_image_rate)) continue;
        SceneObject again = views[i];
        const int step = rng.bernoulli(0.5) ? 1 : kImagesPerSet - 1;
        again.image_idx = (again.image_idx + step) % kImagesPerSet;
        again.bbox = translated(again.bbox, rng);
        views.push_back(std::move(again));
    }
    std::stable_sort(views.begin(), views.end(),
                     [](const SceneObject& a, const SceneObject& b) { return a.image_idx < b.image_idx; });

    auto& proposals = out.image_set.proposals;
    for (auto& v : views) {
        ObjectProposal p;
        p.id = static_cast<int>(proposals.size());
        p.category = v.category;
        p.color = v.color;
        p.image_idx = v.image_idx;
        p.bbox = v.bbox;
        v.proposal_id = p.id;
        proposals.push_back(p);
        if (!rng.bernoulli(cfg.dup_proposal_rate)) continue;
        ObjectProposal dup = p;
        dup.id = static_cast<int>(proposals.size());
        dup.duplicate_of = p.id;
        for (int tries = 0; tries < kMaxDuplicateTries; ++tries) {
            const BBox b = jittered(p.bbox, cfg.dup_jitter, rng);
            if (b.valid() && iou(b, p.bbox) >= cfg.dup_iou_min) {
                dup.bbox = b;
                break;
            }
        }
        proposals.push_back(std::move(dup));
    }
    scene.objects = std::move(views);
    regenerate_features(out.image_set, cfg);
    return out;
}

std::vector<GeneratedScene> generate_dataset(const GenConfig& cfg) {
    cfg.validate();
    std::vector<GeneratedScene> out;
    out.reserve(static_cast<std::size_t>(cfg.num_samples));
    for (int i = 0; i < cfg.num_samples; ++i) {
        out.push_back(generate_scene(cfg, cfg.first_sample_id + i));
    }
    return out;
}

}  // namespace isvqa
