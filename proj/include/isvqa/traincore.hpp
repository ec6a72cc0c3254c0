#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace isvqa {

using Eigen::MatrixXd;

struct Param {
    std::string name;
    MatrixXd value;
    MatrixXd grad;
};

enum class InitKind { uniform_fan_in, zeros };

struct TensorSpec {
    std::string name;
    Eigen::Index rows = 1;
    Eigen::Index cols = 1;
    InitKind init = InitKind::uniform_fan_in;
    /// Defaults to cols (the input width of a row-major weight).
    Eigen::Index fan_in = 0;
};

/// Named dense tensors with gradient accumulators. Column vectors are (n, 1).
class ParamStore {
public:
    Param& add(std::string name, Eigen::Index rows, Eigen::Index cols);

    bool contains(std::string_view name) const;
    Param& get(std::string_view name);
    const Param& get(std::string_view name) const;

    std::vector<Param>& params() noexcept { return params_; }
    const std::vector<Param>& params() const noexcept { return params_; }

    void zero_grad();
    std::size_t total_size() const;
    /// Throws Error(divergence) naming the first tensor holding a NaN or inf.
    void check_finite_values() const;

    std::int64_t step_count = 0;

    friend bool operator==(const ParamStore& a, const ParamStore& b);

private:
    std::vector<Param> params_;
    std::map<std::string, std::size_t, std::less<>> index_;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)); every tensor draws from its own
/// stream derived from (seed, name) so adding tensors never shifts the others.
ParamStore init_params(std::uint64_t seed, const std::vector<TensorSpec>& specs);

enum class OptimizerKind { gradient_descent, adam };

std::string_view to_string(OptimizerKind k) noexcept;
OptimizerKind optimizer_kind_from_string(std::string_view s);

struct OptimizerState {
    OptimizerKind kind = OptimizerKind::adam;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::int64_t t = 0;
    std::map<std::string, MatrixXd, std::less<>> first_moment;
    std::map<std::string, MatrixXd, std::less<>> second_moment;
};

/// Applies one update from the accumulated gradients, clears them and bumps
/// the step counter. A non-finite gradient aborts with the tensor's name.
void step(ParamStore& store, OptimizerState& opt);

struct GradcheckEntry {
    std::string tensor;
    Eigen::Index row = 0;
    Eigen::Index col = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_error = 0.0;
};

struct GradcheckReport {
    bool passed = false;
    double tolerance = 0.0;
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    /// Elements whose +-h probes crossed a kink of a piecewise function.
    std::size_t skipped_kinks = 0;
    std::vector<GradcheckEntry> worst;  // descending by rel_error
    std::map<std::string, double> per_tensor_max;

    nlohmann::json to_json() const;
};

struct Evaluation {
    double loss = 0.0;
    /// Identifies the branch of every piecewise-defined operation taken.
    std::uint64_t branch_signature = 0;
};

inline constexpr std::size_t kGradcheckMaxParams = 5000;
/// Gradients smaller than this are compared absolutely.
inline constexpr double kGradcheckFloor = 1e-6;

/// Central differences against analytic gradients. `compute_grads` must fill
/// store.grad for the current values; `evaluate` must not touch gradients.
GradcheckReport gradcheck(ParamStore& store, const std::function<Evaluation(const ParamStore&)>& evaluate,
                          const std::function<void(ParamStore&)>& compute_grads, double tolerance,
                          double h = 1e-5);

enum class TrainMode { baseline, count_aware, regression, advreg_ce, advreg_bce };

std::string_view to_string(TrainMode m) noexcept;
TrainMode train_mode_from_string(std::string_view s);

struct TrainConfig {
    double learning_rate = 1e-3;
    int epochs = 10;
    int batch_size = 32;
    std::uint64_t seed = 1;
    TrainMode mode = TrainMode::baseline;
    double lambda_r = 0.1;
    double lambda_reg = 0.1;
    /// Cap on the adversarial cross-entropy in advreg_ce.
    double adv_ce_cap = 10.0;
    OptimizerKind optimizer = OptimizerKind::adam;
    std::optional<std::string> pretrain_path;
    int pretrain_epochs = 0;
    /// Stop after this many epochs without a train-loss improvement; 0 disables.
    int patience = 0;
    double min_improvement = 1e-4;

    void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
/// Missing keys keep their defaults; unknown keys are a schema error.
TrainConfig train_config_from_json(const nlohmann::json& j);

inline constexpr int kCheckpointFormatVersion = 1;

nlohmann::json checkpoint_json(const nlohmann::json& config, const ParamStore& store);
void save_checkpoint(const std::filesystem::path& path, const nlohmann::json& config, const ParamStore& store);

struct Checkpoint {
    nlohmann::json config;
    ParamStore store;
};

Checkpoint checkpoint_from_json(const nlohmann::json& j);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace isvqa
