#include "isvqa/traincore.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "isvqa/error.hpp"
#include "isvqa/rng.hpp"

namespace isvqa {

Param& ParamStore::add(std::string name, Eigen::Index rows, Eigen::Index cols) {
    if (rows < 1 || cols < 1) fail(ErrorKind::invalid_argument, "tensor '" + name + "' needs positive dims");
    if (index_.contains(name)) fail(ErrorKind::invalid_argument, "duplicate tensor '" + name + "'");
    index_.emplace(name, params_.size());
    params_.push_back({std::move(name), MatrixXd::Zero(rows, cols), MatrixXd::Zero(rows, cols)});
    return params_.back();
}

bool ParamStore::contains(std::string_view name) const { return index_.find(name) != index_.end(); }

Param& ParamStore::get(std::string_view name) {
    const auto it = index_.find(name);
    if (it == index_.end()) fail(ErrorKind::invalid_argument, "no tensor '" + std::string(name) + "'");
    return params_[it->second];
}

const Param& ParamStore::get(std::string_view name) const {
    return const_cast<ParamStore*>(this)->get(name);
}

void ParamStore::zero_grad() {
    for (auto& p : params_) p.grad.setZero();
}

std::size_t ParamStore::total_size() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
    return n;
}

void ParamStore::check_finite_values() const {
    for (const auto& p : params_) {
        if (!p.value.allFinite()) fail(ErrorKind::divergence, "non-finite value in tensor '" + p.name + "'");
    }
}

bool operator==(const ParamStore& a, const ParamStore& b) {
    if (a.params_.size() != b.params_.size() || a.step_count != b.step_count) return false;
    for (std::size_t i = 0; i < a.params_.size(); ++i) {
        const auto& x = a.params_[i];
        const auto& y = b.params_[i];
        if (x.name != y.name || x.value.rows() != y.value.rows() || x.value.cols() != y.value.cols()) return false;
        if (x.value != y.value) return false;
    }
    return true;
}

ParamStore init_params(std::uint64_t seed, const std::vector<TensorSpec>& specs) {
    ParamStore store;
    for (const auto& s : specs) {
        auto& p = store.add(s.name, s.rows, s.cols);
        if (s.init == InitKind::zeros) continue;
        const auto fan_in = s.fan_in > 0 ? s.fan_in : s.cols;
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        Rng rng(derive_seed(seed, fnv1a(s.name)));
        // Row-major fill so the draw order matches the checkpoint layout.
        for (Eigen::Index r = 0; r < s.rows; ++r) {
            for (Eigen::Index c = 0; c < s.cols; ++c) p.value(r, c) = rng.uniform(-bound, bound);
        }
    }
    return store;
}

std::string_view to_string(OptimizerKind k) noexcept {
    return k == OptimizerKind::adam ? "adam" : "gradient_descent";
}

OptimizerKind optimizer_kind_from_string(std::string_view s) {
    if (s == "adam") return OptimizerKind::adam;
    if (s == "gradient_descent" || s == "sgd") return OptimizerKind::gradient_descent;
    fail(ErrorKind::invalid_config, "unknown optimizer '" + std::string(s) + "'");
}

std::string_view to_string(TrainMode m) noexcept {
    switch (m) {
        case TrainMode::baseline: return "baseline";
        case TrainMode::count_aware: return "count_aware";
        case TrainMode::regression: return "regression";
        case TrainMode::advreg_ce: return "advreg_ce";
        case TrainMode::advreg_bce: return "advreg_bce";
    }
    return "baseline";
}

TrainMode train_mode_from_string(std::string_view s) {
    for (auto m : {TrainMode::baseline, TrainMode::count_aware, TrainMode::regression, TrainMode::advreg_ce,
                   TrainMode::advreg_bce}) {
        if (to_string(m) == s) return m;
    }
    fail(ErrorKind::invalid_config, "unknown train mode '" + std::string(s) + "'");
}

void TrainConfig::validate() const {
    auto require = [](bool ok, const char* what) {
        if (!ok) fail(ErrorKind::invalid_config, std::string("invalid train config: ") + what);
    };
    require(learning_rate > 0.0 && std::isfinite(learning_rate), "learning_rate must be > 0");
    require(epochs >= 0, "epochs must be >= 0");
    require(batch_size >= 1, "batch_size must be >= 1");
    require(lambda_r >= 0.0, "lambda_r must be >= 0");
    require(lambda_reg >= 0.0, "lambda_reg must be >= 0");
    require(adv_ce_cap > 0.0, "adv_ce_cap must be > 0");
    require(pretrain_epochs >= 0, "pretrain_epochs must be >= 0");
    require(patience >= 0, "patience must be >= 0");
}

nlohmann::json to_json(const TrainConfig& c) {
    return {{"learning_rate", c.learning_rate},
            {"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"seed", c.seed},
            {"mode", to_string(c.mode)},
            {"lambda_r", c.lambda_r},
            {"lambda_reg", c.lambda_reg},
            {"adv_ce_cap", c.adv_ce_cap},
            {"optimizer", to_string(c.optimizer)},
            {"pretrain_path", c.pretrain_path ? nlohmann::json(*c.pretrain_path) : nlohmann::json(nullptr)},
            {"pretrain_epochs", c.pretrain_epochs},
            {"patience", c.patience},
            {"min_improvement", c.min_improvement}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    const auto defaults = to_json(c);
    for (const auto& [key, _] : j.items()) {
        if (!defaults.contains(key)) fail(ErrorKind::schema, "unknown train config key '" + key + "'");
    }
    try {
        c.learning_rate = j.value("learning_rate", c.learning_rate);
        c.epochs = j.value("epochs", c.epochs);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.seed = j.value("seed", c.seed);
        c.mode = train_mode_from_string(j.value("mode", std::string(to_string(c.mode))));
        c.lambda_r = j.value("lambda_r", c.lambda_r);
        c.lambda_reg = j.value("lambda_reg", c.lambda_reg);
        c.adv_ce_cap = j.value("adv_ce_cap", c.adv_ce_cap);
        c.optimizer = optimizer_kind_from_string(j.value("optimizer", std::string(to_string(c.optimizer))));
        if (j.contains("pretrain_path") && !j.at("pretrain_path").is_null()) {
            c.pretrain_path = j.at("pretrain_path").get<std::string>();
        }
        c.pretrain_epochs = j.value("pretrain_epochs", c.pretrain_epochs);
        c.patience = j.value("patience", c.patience);
        c.min_improvement = j.value("min_improvement", c.min_improvement);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::schema, std::string("bad train config: ") + e.what());
    }
    return c;
}

void step(ParamStore& store, OptimizerState& opt) {
    for (const auto& p : store.params()) {
        if (!p.grad.allFinite()) fail(ErrorKind::divergence, "non-finite gradient in tensor '" + p.name + "'");
    }
    ++opt.t;
    const double lr = opt.learning_rate;
    for (auto& p : store.params()) {
        if (opt.kind == OptimizerKind::gradient_descent) {
            p.value -= lr * p.grad;
        } else {
            auto& m = opt.first_moment[p.name];
            auto& v = opt.second_moment[p.name];
            if (m.size() == 0) {
                m = MatrixXd::Zero(p.value.rows(), p.value.cols());
                v = MatrixXd::Zero(p.value.rows(), p.value.cols());
            }
            m = opt.beta1 * m + (1.0 - opt.beta1) * p.grad;
            v = opt.beta2 * v + (1.0 - opt.beta2) * p.grad.cwiseProduct(p.grad);
            const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.t));
            const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.t));
            p.value.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + opt.epsilon);
        }
        p.grad.setZero();
    }
    ++store.step_count;
    store.check_finite_values();
}

nlohmann::json GradcheckReport::to_json() const {
    nlohmann::json worst_json = nlohmann::json::array();
    for (const auto& e : worst) {
        worst_json.push_back({{"tensor", e.tensor},
                              {"row", e.row},
                              {"col", e.col},
                              {"analytic", e.analytic},
                              {"numeric", e.numeric},
                              {"rel_error", e.rel_error}});
    }
    return {{"passed", passed},
            {"tolerance", tolerance},
            {"max_rel_error", max_rel_error},
            {"checked", checked},
            {"skipped_kinks", skipped_kinks},
            {"per_tensor_max", per_tensor_max},
            {"worst", worst_json}};
}

GradcheckReport gradcheck(ParamStore& store, const std::function<Evaluation(const ParamStore&)>& evaluate,
                          const std::function<void(ParamStore&)>& compute_grads, double tolerance, double h) {
    if (store.total_size() > kGradcheckMaxParams) {
        fail(ErrorKind::invalid_argument, "gradcheck limited to " + std::to_string(kGradcheckMaxParams) +
                                              " parameters, got " + std::to_string(store.total_size()));
    }
    store.zero_grad();
    compute_grads(store);
    GradcheckReport report;
    report.tolerance = tolerance;
    const auto base = evaluate(store);
    for (auto& p : store.params()) {
        double& tensor_max = report.per_tensor_max[p.name];
        for (Eigen::Index c = 0; c < p.value.cols(); ++c) {
            for (Eigen::Index r = 0; r < p.value.rows(); ++r) {
                const double orig = p.value(r, c);
                p.value(r, c) = orig + h;
                const auto plus = evaluate(store);
                p.value(r, c) = orig - h;
                const auto minus = evaluate(store);
                p.value(r, c) = orig;
                if (plus.branch_signature != base.branch_signature ||
                    minus.branch_signature != base.branch_signature) {
                    ++report.skipped_kinks;
                    continue;
                }
                const double numeric = (plus.loss - minus.loss) / (2.0 * h);
                const double analytic = p.grad(r, c);
                const double denom = std::max({std::abs(analytic), std::abs(numeric), kGradcheckFloor});
                const double rel = std::abs(analytic - numeric) / denom;
                ++report.checked;
                tensor_max = std::max(tensor_max, rel);
                report.max_rel_error = std::max(report.max_rel_error, rel);
                report.worst.push_back({p.name, r, c, analytic, numeric, rel});
            }
        }
    }
    std::stable_sort(report.worst.begin(), report.worst.end(),
                     [](const auto& a, const auto& b) { return a.rel_error > b.rel_error; });
    if (report.worst.size() > 10) report.worst.resize(10);
    report.passed = report.max_rel_error < tolerance;
    store.zero_grad();
    return report;
}

nlohmann::json checkpoint_json(const nlohmann::json& config, const ParamStore& store) {
    nlohmann::json tensors = nlohmann::json::object();
    for (const auto& p : store.params()) {
        std::vector<double> values;
        values.reserve(static_cast<std::size_t>(p.value.size()));
        for (Eigen::Index r = 0; r < p.value.rows(); ++r) {
            for (Eigen::Index c = 0; c < p.value.cols(); ++c) values.push_back(p.value(r, c));
        }
        tensors[p.name] = {{"shape", {p.value.rows(), p.value.cols()}}, {"values", std::move(values)}};
    }
    return {{"format_version", kCheckpointFormatVersion},
            {"config", config},
            {"step", store.step_count},
            {"tensor_order", [&] {
                 std::vector<std::string> names;
                 for (const auto& p : store.params()) names.push_back(p.name);
                 return names;
             }()},
            {"tensors", std::move(tensors)}};
}

void save_checkpoint(const std::filesystem::path& path, const nlohmann::json& config, const ParamStore& store) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorKind::missing_file, "cannot write " + path.string());
    out << checkpoint_json(config, store).dump() << '\n';
}

Checkpoint checkpoint_from_json(const nlohmann::json& j) {
    Checkpoint ck;
    try {
        if (j.at("format_version").get<int>() != kCheckpointFormatVersion) {
            fail(ErrorKind::schema, "unsupported checkpoint format_version");
        }
        ck.config = j.at("config");
        ck.store.step_count = j.value("step", std::int64_t{0});
        const auto& tensors = j.at("tensors");
        std::vector<std::string> order;
        if (j.contains("tensor_order")) {
            order = j.at("tensor_order").get<std::vector<std::string>>();
        } else {
            for (const auto& [name, _] : tensors.items()) order.push_back(name);
        }
        for (const auto& name : order) {
            const auto& t = tensors.at(name);
            const auto shape = t.at("shape").get<std::vector<Eigen::Index>>();
            const auto values = t.at("values").get<std::vector<double>>();
            if (shape.size() != 2 || shape[0] * shape[1] != static_cast<Eigen::Index>(values.size())) {
                fail(ErrorKind::schema, "tensor '" + name + "' shape does not match its values");
            }
            auto& p = ck.store.add(name, shape[0], shape[1]);
            std::size_t k = 0;
            for (Eigen::Index r = 0; r < shape[0]; ++r) {
                for (Eigen::Index c = 0; c < shape[1]; ++c) p.value(r, c) = values[k++];
            }
        }
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::schema, std::string("malformed checkpoint: ") + e.what());
    }
    return ck;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::missing_file, "cannot open " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::schema, path.string() + ": malformed JSON: " + e.what());
    }
    return checkpoint_from_json(j);
}

}  // namespace isvqa
