#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "isvqa/rng.hpp"

namespace isvqa {

/// Number of images in every image set.
inline constexpr int kImagesPerSet = 6;

inline constexpr std::array<std::string_view, 16> kCategories = {
    "car",    "person",  "truck",      "sign",    "wall", "bus",  "tree",   "building",
    "sidewalk", "bicycle", "motorcycle", "trailer", "cone", "pole", "barrier", "bench"};

inline constexpr std::array<std::string_view, 10> kColors = {
    "red", "green", "blue", "black", "white", "orange", "yellow", "gray", "brown", "silver"};

/// Label a noisy detector emits in place of the true category (bus -> train).
std::string_view corrupted_label(std::string_view category);

bool is_category(std::string_view label);
bool is_color(std::string_view label);

/// Normalized image coordinates, 0 <= x1 < x2 <= 1, 0 <= y1 < y2 <= 1.
struct BBox {
    double x1 = 0.0;
    double y1 = 0.0;
    double x2 = 0.0;
    double y2 = 0.0;

    bool valid() const noexcept;
    double area() const noexcept { return (x2 - x1) * (y2 - y1); }
    double center_x() const noexcept { return 0.5 * (x1 + x2); }
    double center_y() const noexcept { return 0.5 * (y1 + y2); }

    friend bool operator==(const BBox&, const BBox&) = default;
};

/// Intersection over union. Both boxes must be valid.
double iou(const BBox& a, const BBox& b);

struct ObjectProposal {
    int id = 0;
    std::string category;
    std::string color;
    int image_idx = 0;
    BBox bbox;
    std::optional<int> duplicate_of;
    std::vector<double> feature;

    friend bool operator==(const ObjectProposal&, const ObjectProposal&) = default;
};

struct ImageSet {
    std::int64_t sample_id = 0;
    std::vector<ObjectProposal> proposals;

    std::size_t n() const noexcept { return proposals.size(); }

    friend bool operator==(const ImageSet&, const ImageSet&) = default;
};

/// One view of a true object. Cross-image reappearances share `instance`.
struct SceneObject {
    int instance = 0;
    std::string category;
    std::string color;
    int image_idx = 0;
    BBox bbox;
    int proposal_id = 0;

    friend bool operator==(const SceneObject&, const SceneObject&) = default;
};

enum class QuestionType { color, position, count, existence, main };

std::string_view to_string(QuestionType t) noexcept;
QuestionType question_type_from_string(std::string_view s);

struct CountTarget {
    std::string category;
    int count = 0;

    friend bool operator==(const CountTarget&, const CountTarget&) = default;
};

/// Ground-truth description of one generated image set.
struct Scene {
    std::vector<SceneObject> objects;
    QuestionType planned_type = QuestionType::existence;
    std::optional<CountTarget> count_target;

    /// Number of distinct true objects (instances) of a category.
    int count_of(std::string_view category) const;
    /// Number of views of a category across all images.
    int views_of(std::string_view category) const;

    friend bool operator==(const Scene&, const Scene&) = default;
};

struct QuestionMix {
    double color = 0.15;
    double position = 0.15;
    double count = 0.4;
    double existence = 0.3;

    friend bool operator==(const QuestionMix&, const QuestionMix&) = default;
};

struct GenConfig {
    std::uint64_t seed = 7;
    /// Seeds the per-label feature codes; shared between train and test splits.
    std::uint64_t feature_seed = 20211;
    std::int64_t first_sample_id = 0;
    int num_samples = 1000;
    int objects_per_image_min = 1;
    int objects_per_image_max = 5;
    int num_categories = 16;
    int num_colors = 10;
    double dup_proposal_rate = 0.2;
    double dup_jitter = 0.03;
    double dup_iou_min = 0.5;
    double cross_image_rate = 0.1;
    double bias_skew = 2.0 / 9.0;
    double detector_noise = 0.0;
    double annotator_error = 0.1;
    double existence_yes_rate = 0.5;
    double feature_noise = 0.1;
    int feature_dim = 64;
    QuestionMix mix;

    /// Throws Error(invalid_config) naming the first offending field.
    void validate() const;

    std::span<const std::string_view> categories() const;
    std::span<const std::string_view> colors() const;

    friend bool operator==(const GenConfig&, const GenConfig&) = default;
};

/// Layout of a synthesized feature: category code, color code, box, noise.
struct FeatureLayout {
    int category_dims = 0;
    int color_dims = 0;
    int noise_dims = 0;

    static FeatureLayout for_dim(int feature_dim);
};

std::vector<double> label_code(std::string_view kind, std::string_view label, int dims,
                               std::uint64_t feature_seed);

/// Deterministic stand-in for detector region features.
std::vector<double> synthesize_feature(std::string_view category, std::string_view color,
                                       const BBox& bbox, std::uint64_t noise_seed,
                                       const GenConfig& cfg);

/// Seed for the noise part of one proposal's feature.
std::uint64_t proposal_noise_seed(const GenConfig& cfg, std::int64_t sample_id, int proposal_id);

/// Fills every proposal's feature from the config. Used after loading a dataset
/// that was stored without embedded features.
void regenerate_features(ImageSet& set, const GenConfig& cfg);

struct GeneratedScene {
    ImageSet image_set;
    Scene scene;
};

/// Draws the count for a count-question target. A fraction `bias_skew` lands on
/// two or three; the rest is uniform over one, four..nine.
int draw_biased_count(double bias_skew, Rng& rng);

/// Draws the question type according to the mix weights.
QuestionType draw_question_type(const QuestionMix& mix, Rng& rng);

/// One scene for a sample. `attempt` re-rolls the scene deterministically when
/// a question generator cannot use the first draw.
GeneratedScene generate_scene(const GenConfig& cfg, std::int64_t sample_id, int attempt = 0);

std::vector<GeneratedScene> generate_dataset(const GenConfig& cfg);

}  // namespace isvqa
