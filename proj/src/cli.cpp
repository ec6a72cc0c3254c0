#include "isvqa/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <charconv>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "isvqa/dataset_io.hpp"
#include "isvqa/evalstats.hpp"
#include "isvqa/training.hpp"

namespace isvqa::cli {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

/// JSON counterpart of CLI11's TOML reader: top-level keys map to option
/// names, nested objects become dotted parents.
class JsonConfig : public CLI::Config {
public:
    std::string to_config(const CLI::App* app, bool default_also, bool, std::string) const override {
        json j = json::object();
        for (const auto* opt : app->get_options()) {
            if (!opt->get_configurable() || opt->get_lnames().empty()) continue;
            const auto& name = opt->get_lnames().front();
            if (opt->count() > 0) {
                const auto& res = opt->results();
                j[name] = res.size() == 1 ? json(res.front()) : json(res);
            } else if (default_also && !opt->get_default_str().empty()) {
                j[name] = opt->get_default_str();
            }
        }
        return j.dump(2) + "\n";
    }

    std::vector<CLI::ConfigItem> from_config(std::istream& in) const override {
        json j;
        try {
            j = json::parse(in);
        } catch (const json::exception& e) {
            throw CLI::ConversionError(std::string("malformed JSON config: ") + e.what());
        }
        if (!j.is_object()) throw CLI::ConversionError("JSON config must be an object");
        std::vector<CLI::ConfigItem> items;
        flatten(j, {}, items);
        return items;
    }

private:
    static std::string scalar(const json& v) {
        if (v.is_string()) return v.get<std::string>();
        if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
        return v.dump();
    }

    static void flatten(const json& obj, const std::vector<std::string>& parents, std::vector<CLI::ConfigItem>& out) {
        for (const auto& [key, value] : obj.items()) {
            if (value.is_object()) {
                auto p = parents;
                p.push_back(key);
                flatten(value, p, out);
                continue;
            }
            CLI::ConfigItem item;
            item.parents = parents;
            item.name = key;
            if (value.is_array()) {
                for (const auto& v : value) item.inputs.push_back(scalar(v));
            } else if (!value.is_null()) {
                item.inputs.push_back(scalar(value));
            }
            out.push_back(std::move(item));
        }
    }
};

// Shortest decimal form that parses back to the same double.
std::string exact(double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

fs::path resolve_output(const std::string& p) {
    fs::path path(p);
    if (path.is_relative()) {
        if (const char* dir = std::getenv(kOutputDirEnv); dir && *dir) path = fs::path(dir) / path;
    }
    return path;
}

void ensure_parent(const fs::path& p) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

void write_text(const fs::path& p, const std::string& text) {
    ensure_parent(p);
    std::ofstream out(p, std::ios::binary);
    if (!out) fail(ErrorKind::missing_file, "cannot write " + p.string());
    out << text;
}

std::string file_hash(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) fail(ErrorKind::missing_file, "cannot open " + p.string());
    std::stringstream buf;
    buf << in.rdbuf();
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(fnv1a(buf.str())));
    return hex;
}

struct Outputs {
    std::vector<std::string> files;
};

void write_run_files(const CLI::App& sub, const fs::path& config_path, const fs::path& run_path,
                     const std::vector<std::string>& args, Outputs& outputs) {
    write_text(config_path, sub.config_to_str(true, false));
    outputs.files.push_back(config_path.string());
    json run = {{"subcommand", sub.get_name()}, {"args", args}, {"outputs", outputs.files}, {"status", "ok"}};
    write_text(run_path, run.dump(2) + "\n");
}

struct GenOptions {
    GenConfig cfg;
    std::string out;
    std::string pretrain_out;
    int pretrain_samples = 0;
    bool embed_features = false;
};

struct TrainOptions {
    TrainConfig cfg;
    ModelDims dims;
    std::string train_path;
    std::string pretrain_path;
    std::string out_dir = "run";
    std::string mode = "baseline";
    std::string optimizer = "adam";
};

struct EvalOptionsCli {
    std::string checkpoint;
    std::string data;
    std::string out_dir = "eval";
    bool scrub_visual = false;
};

struct AnalyzeOptions {
    std::string data;
    std::string import_path;
    FieldMap fields;
    int top = kTopPrefixes;
    int prefix_length = kDefaultPrefixLength;
    std::string out_dir = "analysis";
};

struct GradcheckOptions {
    std::string mode = "all";
    double tolerance = 1e-4;
    std::uint64_t seed = 3;
    std::string out_dir = "gradcheck";
};

void add_config_option(CLI::App* sub) {
    sub->add_option("--config", "Read option values from a .toml or .json file; flags override file values")
        ->configurable(false);
}

bool given_on_command_line(const std::vector<std::string>& args, std::size_t from, const std::string& flag) {
    for (std::size_t i = from; i < args.size(); ++i) {
        if (args[i] == flag || args[i].starts_with(flag + "=")) return true;
    }
    return false;
}

// Splices the values of a subcommand's --config file into the argument list.
// Values already given as flags win; keys that name no option are rejected.
std::vector<std::string> expand_config(const std::vector<std::string>& args, const CLI::App& app) {
    std::size_t sub_pos = args.size();
    const CLI::App* sub = nullptr;
    for (std::size_t i = 0; i < args.size() && !sub; ++i) {
        for (const auto* s : app.get_subcommands({})) {
            if (s->get_name() == args[i]) {
                sub = s;
                sub_pos = i;
                break;
            }
        }
    }
    if (!sub) return args;

    std::vector<std::string> rest;
    std::string config_path;
    for (std::size_t i = sub_pos + 1; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) {
            config_path = args[++i];
        } else if (args[i].starts_with("--config=")) {
            config_path = args[i].substr(9);
        } else {
            rest.push_back(args[i]);
        }
    }
    if (config_path.empty()) return args;
    if (!fs::is_regular_file(config_path)) fail(ErrorKind::missing_file, "config file not found: " + config_path);

    std::vector<CLI::ConfigItem> items;
    try {
        if (config_path.ends_with(".json")) {
            items = JsonConfig{}.from_file(config_path);
        } else if (config_path.ends_with(".toml")) {
            items = CLI::ConfigTOML{}.from_file(config_path);
        } else {
            fail(ErrorKind::invalid_config, "config file must end in .toml or .json: " + config_path);
        }
    } catch (const CLI::Error& e) {
        fail(ErrorKind::schema, config_path + ": " + e.what());
    }

    std::vector<std::string> out(args.begin(), args.begin() + static_cast<std::ptrdiff_t>(sub_pos) + 1);
    for (const auto& item : items) {
        if (item.name == "++" || item.name == "--") continue;  // TOML section markers
        bool own_section = item.parents.empty() || (item.parents.size() == 1 && item.parents[0] == sub->get_name());
        const std::string key = item.fullname();
        const auto* opt = own_section ? sub->get_option_no_throw("--" + item.name) : nullptr;
        if (!opt || !opt->get_configurable()) {
            fail(ErrorKind::invalid_config, "unknown key '" + key + "' in " + config_path);
        }
        const std::string flag = "--" + item.name;
        if (given_on_command_line(rest, 0, flag)) continue;
        if (opt->get_expected_max() == 0) {
            out.push_back(flag + "=" + (item.inputs.empty() ? std::string("true") : item.inputs.front()));
        } else {
            out.push_back(flag);
            out.insert(out.end(), item.inputs.begin(), item.inputs.end());
        }
    }
    out.insert(out.end(), rest.begin(), rest.end());
    return out;
}

}  // namespace

int exit_code_for(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::missing_file: return kMissingFile;
        case ErrorKind::schema: return kSchema;
        case ErrorKind::vocab_mismatch: return kVocabMismatch;
        case ErrorKind::invalid_argument:
        case ErrorKind::invalid_config: return kInvalidConfig;
        case ErrorKind::divergence: return kDivergence;
        case ErrorKind::state: return kState;
    }
    return kInternal;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    auto report_error = [&](std::string_view code, int status, const std::string& message) {
        std::string flat = message;
        std::replace(flat.begin(), flat.end(), '\n', ' ');
        std::replace(flat.begin(), flat.end(), '"', '\'');
        err << "error code=" << code << " exit=" << status << " message=\"" << flat << "\"\n";
        return status;
    };

    CLI::App app{"Multi-image VQA workbench: synthetic data, training, evaluation and bias audits"};
    app.require_subcommand(1);
    int threads = 1;
    app.add_option("--threads", threads, "Worker threads for evaluation")->check(CLI::PositiveNumber);

    GenOptions gen;
    auto* gen_cmd = app.add_subcommand("gen", "Generate a synthetic dataset (JSON Lines)");
    add_config_option(gen_cmd);
    {
        auto& c = gen.cfg;
        gen_cmd->add_option("--out", gen.out, "Dataset output path")->required();
        gen_cmd->add_option("--seed", c.seed, "Generator seed")->capture_default_str();
        gen_cmd->add_option("--feature-seed", c.feature_seed, "Seed of the per-label feature codes")->capture_default_str();
        gen_cmd->add_option("--first-sample-id", c.first_sample_id, "Id of the first sample")->capture_default_str();
        gen_cmd->add_option("--num-samples", c.num_samples, "Number of samples")->capture_default_str();
        gen_cmd->add_option("--objects-min", c.objects_per_image_min, "Minimum true objects per image")->capture_default_str();
        gen_cmd->add_option("--objects-max", c.objects_per_image_max, "Maximum true objects per image")->capture_default_str();
        gen_cmd->add_option("--num-categories", c.num_categories, "Active object categories")->capture_default_str();
        gen_cmd->add_option("--num-colors", c.num_colors, "Active colors")->capture_default_str();
        gen_cmd->add_option("--dup-rate", c.dup_proposal_rate, "Duplicate proposal probability per object")->default_str(exact(c.dup_proposal_rate));
        gen_cmd->add_option("--dup-jitter", c.dup_jitter, "Max coordinate jitter of duplicates")->default_str(exact(c.dup_jitter));
        gen_cmd->add_option("--dup-iou-min", c.dup_iou_min, "Minimum IoU of a duplicate with its referent")->default_str(exact(c.dup_iou_min));
        gen_cmd->add_option("--cross-image-rate", c.cross_image_rate, "Probability an object reappears in an adjacent image")->default_str(exact(c.cross_image_rate));
        gen_cmd->add_option("--bias-skew", c.bias_skew, "Share of count answers in {two, three}")->default_str(exact(c.bias_skew));
        gen_cmd->add_option("--detector-noise", c.detector_noise, "Probability a question uses a corrupted label")->default_str(exact(c.detector_noise));
        gen_cmd->add_option("--annotator-error", c.annotator_error, "Probability an annotator answer is perturbed")->default_str(exact(c.annotator_error));
        gen_cmd->add_option("--existence-yes-rate", c.existence_yes_rate, "Share of existence questions answered yes")->default_str(exact(c.existence_yes_rate));
        gen_cmd->add_option("--feature-noise", c.feature_noise, "Std of the feature noise block")->default_str(exact(c.feature_noise));
        gen_cmd->add_option("--feature-dim", c.feature_dim, "Proposal feature dimension")->capture_default_str();
        gen_cmd->add_option("--mix-color", c.mix.color, "Weight of color questions")->default_str(exact(c.mix.color));
        gen_cmd->add_option("--mix-position", c.mix.position, "Weight of position questions")->default_str(exact(c.mix.position));
        gen_cmd->add_option("--mix-count", c.mix.count, "Weight of count questions")->default_str(exact(c.mix.count));
        gen_cmd->add_option("--mix-existence", c.mix.existence, "Weight of existence questions")->default_str(exact(c.mix.existence));
        gen_cmd->add_flag("--embed-features", gen.embed_features, "Store features instead of regenerating them on load");
        gen_cmd->add_option("--pretrain-out", gen.pretrain_out, "Also write a color/position pretraining set here");
        gen_cmd->add_option("--pretrain-samples", gen.pretrain_samples, "Size of the pretraining set")->capture_default_str();
    }

    TrainOptions tr;
    auto* train_cmd = app.add_subcommand("train", "Train a model; writes checkpoint.json and manifest.json");
    add_config_option(train_cmd);
    {
        auto& c = tr.cfg;
        train_cmd->add_option("--train", tr.train_path, "Training dataset")->required();
        train_cmd->add_option("--pretrain", tr.pretrain_path, "Color/position pretraining dataset");
        train_cmd->add_option("--out-dir", tr.out_dir, "Output directory")->capture_default_str();
        train_cmd->add_option("--mode", tr.mode, "baseline|count_aware|regression|advreg_ce|advreg_bce")
            ->check(CLI::IsMember({"baseline", "count_aware", "regression", "advreg_ce", "advreg_bce"}))
            ->capture_default_str();
        train_cmd->add_option("--epochs", c.epochs, "Epochs on the main set")->capture_default_str();
        train_cmd->add_option("--pretrain-epochs", c.pretrain_epochs, "Epochs on the pretraining set")->capture_default_str();
        train_cmd->add_option("--batch-size", c.batch_size, "Mini-batch size")->capture_default_str();
        train_cmd->add_option("--lr", c.learning_rate, "Learning rate")->default_str(exact(c.learning_rate));
        train_cmd->add_option("--seed", c.seed, "Initialization and shuffling seed")->capture_default_str();
        train_cmd->add_option("--lambda-r", c.lambda_r, "Adversarial regularization weight")->default_str(exact(c.lambda_r));
        train_cmd->add_option("--lambda-reg", c.lambda_reg, "Regression loss weight")->default_str(exact(c.lambda_reg));
        train_cmd->add_option("--adv-cap", c.adv_ce_cap, "Cap on the adversarial cross-entropy")->default_str(exact(c.adv_ce_cap));
        train_cmd->add_option("--optimizer", tr.optimizer, "adam|gradient_descent")
            ->check(CLI::IsMember({"adam", "gradient_descent"}))
            ->capture_default_str();
        train_cmd->add_option("--patience", c.patience, "Early-stop patience in epochs (0 = off)")->capture_default_str();
        train_cmd->add_option("--word-dim", tr.dims.word_dim, "Word embedding dimension")->capture_default_str();
        train_cmd->add_option("--hidden-dim", tr.dims.hidden_dim, "Hidden dimension")->capture_default_str();
    }

    EvalOptionsCli ev;
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint; writes report.json and CSV tables");
    add_config_option(eval_cmd);
    eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
    eval_cmd->add_option("--data", ev.data, "Evaluation dataset")->required();
    eval_cmd->add_option("--out-dir", ev.out_dir, "Output directory")->capture_default_str();
    eval_cmd->add_flag("--scrub-visual", ev.scrub_visual, "Zero every proposal feature (language-only evaluation)");

    AnalyzeOptions an;
    auto* analyze_cmd = app.add_subcommand("analyze", "Answer-distribution bias report");
    add_config_option(analyze_cmd);
    auto* data_opt = analyze_cmd->add_option("--data", an.data, "Dataset (JSON Lines) to audit");
    auto* import_opt = analyze_cmd->add_option("--import", an.import_path, "External annotation file (JSON or JSON Lines)");
    data_opt->excludes(import_opt);
    analyze_cmd->add_option("--field-question", an.fields.question, "Question field in imported records")->capture_default_str();
    analyze_cmd->add_option("--field-answers", an.fields.answers, "Answers field in imported records")->capture_default_str();
    analyze_cmd->add_option("--field-id", an.fields.id, "Id field in imported records")->capture_default_str();
    analyze_cmd->add_option("--top", an.top, "Number of prefixes reported")->capture_default_str();
    analyze_cmd->add_option("--prefix-length", an.prefix_length, "Tokens per question prefix")->capture_default_str();
    analyze_cmd->add_option("--out-dir", an.out_dir, "Output directory")->capture_default_str();

    GradcheckOptions gc;
    auto* gradcheck_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every loss mode");
    add_config_option(gradcheck_cmd);
    gradcheck_cmd->add_option("--mode", gc.mode, "all or one training mode")->capture_default_str();
    gradcheck_cmd->add_option("--tolerance", gc.tolerance, "Max relative error")->default_str(exact(gc.tolerance));
    gradcheck_cmd->add_option("--seed", gc.seed, "Seed of the tiny model and batch")->capture_default_str();
    gradcheck_cmd->add_option("--out-dir", gc.out_dir, "Output directory")->capture_default_str();

    std::vector<std::string> effective;
    try {
        effective = expand_config(args, app);
    } catch (const Error& e) {
        return report_error(to_string(e.kind()), exit_code_for(e.kind()), e.what());
    }

    try {
        std::vector<std::string> reversed(effective.rbegin(), effective.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help();
        return kOk;
    } catch (const CLI::ParseError& e) {
        // A subcommand's --help is reported as a parse error with exit code 0.
        if (e.get_exit_code() == 0) {
            const auto* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
            out << sub->help();
            return kOk;
        }
        return report_error("usage", kUsage, e.what());
    }

    Outputs outputs;
    try {
        if (gen_cmd->parsed()) {
            const auto out_path = resolve_output(gen.out);
            ensure_parent(out_path);
            const auto ds = build_dataset(gen.cfg);
            save_dataset(out_path, ds, gen.embed_features);
            outputs.files.push_back(out_path.string());
            if (!gen.pretrain_out.empty()) {
                GenConfig pc = gen.cfg;
                pc.num_samples = gen.pretrain_samples;
                pc.first_sample_id = gen.cfg.first_sample_id + gen.cfg.num_samples;
                const auto pre_path = resolve_output(gen.pretrain_out);
                ensure_parent(pre_path);
                save_dataset(pre_path, build_dataset(pc, true), gen.embed_features);
                outputs.files.push_back(pre_path.string());
            }
            auto stem = out_path;
            stem.replace_extension();
            write_run_files(*gen_cmd, stem.string() + ".config.toml", stem.string() + ".run.json", args, outputs);
            out << "wrote " << ds.samples.size() << " samples to " << out_path.string() << '\n';
            return kOk;
        }

        if (train_cmd->parsed()) {
            const auto dir = resolve_output(tr.out_dir);
            fs::create_directories(dir);
            tr.cfg.mode = train_mode_from_string(tr.mode);
            tr.cfg.optimizer = optimizer_kind_from_string(tr.optimizer);
            tr.cfg.validate();
            const auto main_set = load_dataset(tr.train_path);
            TrainResult result = [&] {
                if (tr.pretrain_path.empty()) return train(main_set, tr.cfg, tr.dims);
                tr.cfg.pretrain_path = tr.pretrain_path;
                return pretrain_then_finetune(load_dataset(tr.pretrain_path), main_set, tr.cfg, tr.dims);
            }();
            save_run(dir / "checkpoint.json", dir / "manifest.json", tr.cfg, result);
            outputs.files = {(dir / "checkpoint.json").string(), (dir / "manifest.json").string()};
            write_run_files(*train_cmd, dir / "resolved_config.toml", dir / "run.json", args, outputs);
            if (result.manifest.diverged) {
                return report_error("divergence", kDivergence, result.manifest.divergence_message);
            }
            const auto& last = result.manifest.epochs;
            out << "trained " << last.size() << " epochs";
            if (!last.empty()) out << ", final loss " << last.back().loss << ", train accuracy " << last.back().accuracy;
            out << '\n';
            return kOk;
        }

        if (eval_cmd->parsed()) {
            const auto dir = resolve_output(ev.out_dir);
            const auto ck = load_checkpoint(ev.checkpoint);
            const auto model = Model::from_checkpoint(ck);
            const auto ds = load_dataset(ev.data);
            EvalOptions opts;
            opts.scrub_visual = ev.scrub_visual;
            opts.threads = threads;
            opts.checkpoint_id = file_hash(ev.checkpoint);
            const auto report = evaluate(model, ds, opts);
            report.write(dir);
            for (const auto* f : {"report.json", "per_qtype.csv", "per_count_answer.csv", "per_prefix.csv",
                                  "answer_distribution.csv"}) {
                outputs.files.push_back((dir / f).string());
            }
            write_run_files(*eval_cmd, dir / "resolved_config.toml", dir / "run.json", args, outputs);
            out << "overall " << report.overall << ", language-only " << report.language_only_accuracy << " over "
                << report.sample_count << " samples\n";
            return kOk;
        }

        if (analyze_cmd->parsed()) {
            if (an.data.empty() == an.import_path.empty()) {
                return report_error("usage", kUsage, "analyze needs exactly one of --data or --import");
            }
            const auto dir = resolve_output(an.out_dir);
            fs::create_directories(dir);
            const auto ds = an.data.empty() ? import_annotations(an.import_path, an.fields) : load_dataset(an.data);
            if (ds.samples.empty()) fail(ErrorKind::invalid_argument, "nothing to analyze: dataset is empty");
            const auto qa = ds.qa_samples();
            const auto dist = answer_distribution(qa, an.top, an.prefix_length);
            std::map<std::string, int> per_type;
            for (const auto& s : qa) ++per_type[std::string(to_string(s.question.qtype))];
            json report = {{"source", an.data.empty() ? an.import_path : an.data},
                           {"image_less", ds.image_less},
                           {"answer_count_warnings", ds.answer_count_warnings},
                           {"question_types", per_type},
                           {"answer_distribution", dist.to_json()}};
            write_text(dir / "analysis.json", report.dump(2) + "\n");
            std::ostringstream csv;
            csv << "prefix,rank,answer,count,frequency,top2_share\n";
            for (const auto& p : dist.prefixes) {
                for (std::size_t i = 0; i < p.answers.size(); ++i) {
                    csv << '"' << p.prefix << "\"," << i + 1 << ",\"" << p.answers[i].answer << "\","
                        << p.answers[i].count << ',' << p.answers[i].frequency << ',' << p.top2_share << '\n';
                }
            }
            write_text(dir / "answer_distribution.csv", csv.str());
            outputs.files = {(dir / "analysis.json").string(), (dir / "answer_distribution.csv").string()};
            write_run_files(*analyze_cmd, dir / "resolved_config.toml", dir / "run.json", args, outputs);
            for (const auto& p : dist.prefixes) out << p.prefix << '\t' << p.count << '\t' << p.top2_share << '\n';
            return kOk;
        }

        if (gradcheck_cmd->parsed()) {
            const auto dir = resolve_output(gc.out_dir);
            std::vector<TrainMode> modes;
            if (gc.mode == "all") {
                modes = {TrainMode::baseline, TrainMode::count_aware, TrainMode::regression, TrainMode::advreg_ce,
                         TrainMode::advreg_bce};
            } else {
                modes = {train_mode_from_string(gc.mode)};
            }
            json report = json::object();
            bool all_passed = true;
            for (auto m : modes) {
                const auto r = gradcheck_mode(m, gc.seed, gc.tolerance);
                all_passed = all_passed && r.passed;
                report[std::string(to_string(m))] = r.to_json();
                out << to_string(m) << ": " << (r.passed ? "PASS" : "FAIL") << " max_rel_error=" << r.max_rel_error
                    << " checked=" << r.checked << " skipped_kinks=" << r.skipped_kinks << '\n';
            }
            report["passed"] = all_passed;
            write_text(dir / "gradcheck.json", report.dump(2) + "\n");
            outputs.files = {(dir / "gradcheck.json").string()};
            write_run_files(*gradcheck_cmd, dir / "resolved_config.toml", dir / "run.json", args, outputs);
            if (!all_passed) return report_error("gradcheck_failed", kGradcheckFailed, "gradient check failed");
            return kOk;
        }
    } catch (const Error& e) {
        return report_error(to_string(e.kind()), exit_code_for(e.kind()), e.what());
    } catch (const fs::filesystem_error& e) {
        return report_error("missing_file", kMissingFile, e.what());
    } catch (const std::exception& e) {
        return report_error("internal", kInternal, e.what());
    }
    return report_error("usage", kUsage, "no subcommand");
}

}  // namespace isvqa::cli
