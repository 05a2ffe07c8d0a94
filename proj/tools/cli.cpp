#include "cli.hpp"

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ofakd/ablate.hpp"
#include "ofakd/checkpoint.hpp"
#include "ofakd/cka.hpp"
#include "ofakd/data.hpp"
#include "ofakd/error.hpp"
#include "ofakd/gradcheck_suite.hpp"
#include "ofakd/rng.hpp"
#include "ofakd/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace ofakd::cli {
namespace {

std::vector<std::string> split(const std::string& text, char sep) {
    std::vector<std::string> parts;
    std::string cur;
    std::istringstream is(text);
    while (std::getline(is, cur, sep)) {
        const auto b = cur.find_first_not_of(" \t");
        const auto e = cur.find_last_not_of(" \t");
        parts.push_back(b == std::string::npos ? std::string{} : cur.substr(b, e - b + 1));
    }
    return parts;
}

std::uint64_t parse_u64(const std::string& s, const std::string& what) {
    std::uint64_t v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc{} || ptr != s.data() + s.size()) {
        throw ConfigError(what + ": expected a non-negative integer, got '" + s + "'");
    }
    return v;
}

double parse_double(const std::string& s, const std::string& what) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used == s.size()) return v;
    } catch (const std::exception&) {
    }
    throw ConfigError(what + ": expected a number, got '" + s + "'");
}

// "1,2,3,4" or "none".
std::vector<std::size_t> parse_stage_list(const std::string& text, const std::string& what) {
    if (text == "none" || text.empty()) return {};
    std::vector<std::size_t> out;
    for (const auto& p : split(text, ',')) out.push_back(parse_u64(p, what));
    return out;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
    std::vector<std::uint64_t> out;
    for (const auto& p : split(text, ',')) out.push_back(parse_u64(p, "--seeds"));
    if (out.empty()) throw ConfigError("--seeds: at least one seed required");
    return out;
}

json read_json_file(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open " + path.string());
    try {
        return json::parse(is);
    } catch (const json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary);
    if (!os) throw_io("cannot open for writing", path.string());
    os << text;
    if (!os) throw_io("write failed", path.string());
}

void write_json_file(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

DType parse_precision(const std::string& s) { return s == "f64" ? DType::f64 : DType::f32; }

// Flags shared by the commands that build a model.
struct ModelFlags {
    CLI::Option* family = nullptr;
    CLI::Option* widths = nullptr;
    CLI::Option* stage_depth = nullptr;
    CLI::Option* depth = nullptr;
    CLI::Option* embed_dim = nullptr;
    CLI::Option* heads = nullptr;
    CLI::Option* patch_size = nullptr;
    CLI::Option* token_hidden = nullptr;
    CLI::Option* class_token = nullptr;

    std::string family_v = "cnn";
    std::string widths_v;
    std::size_t stage_depth_v = 1;
    std::size_t depth_v = 8;
    std::size_t embed_dim_v = 64;
    std::size_t heads_v = 4;
    std::size_t patch_size_v = 4;
    std::size_t token_hidden_v = 32;
    bool class_token_v = false;

    void add(CLI::App* cmd, const std::string& prefix = "") {
        family = cmd->add_option("--" + prefix + "family", family_v, "cnn, vit or mixer")
                     ->check(CLI::IsMember({"cnn", "vit", "mixer"}));
        widths = cmd->add_option("--" + prefix + "widths", widths_v, "cnn stage channels, e.g. 16,32,64,128");
        stage_depth = cmd->add_option("--" + prefix + "stage-depth", stage_depth_v, "cnn residual blocks per stage");
        depth = cmd->add_option("--" + prefix + "depth", depth_v, "vit/mixer blocks");
        embed_dim = cmd->add_option("--" + prefix + "embed-dim", embed_dim_v);
        heads = cmd->add_option("--" + prefix + "heads", heads_v);
        patch_size = cmd->add_option("--" + prefix + "patch-size", patch_size_v);
        token_hidden = cmd->add_option("--" + prefix + "token-hidden", token_hidden_v, "mixer token-MLP width");
        class_token = cmd->add_flag("--" + prefix + "class-token", class_token_v, "vit: prepend a class token");
    }

    bool family_given() const { return family->count() > 0; }

    void apply(ModelConfig& cfg) const {
        if (family->count()) cfg.family = family_from_string(family_v);
        if (widths->count()) {
            const auto w = parse_stage_list(widths_v, "--widths");
            if (w.size() != kStageCount) throw ConfigError("--widths: expected 4 values, got '" + widths_v + "'");
            std::copy(w.begin(), w.end(), cfg.widths.begin());
        }
        if (stage_depth->count()) cfg.stage_depth = stage_depth_v;
        if (depth->count()) cfg.depth = depth_v;
        if (embed_dim->count()) cfg.embed_dim = embed_dim_v;
        if (heads->count()) cfg.heads = heads_v;
        if (patch_size->count()) cfg.patch_size = patch_size_v;
        if (token_hidden->count()) cfg.token_hidden = token_hidden_v;
        if (class_token->count()) cfg.class_token = class_token_v;
    }
};

// Flags shared by train-teacher, distill and ablate.
struct RunFlags {
    CLI::Option* manifest = nullptr;
    CLI::Option* data = nullptr;
    CLI::Option* epochs = nullptr;
    CLI::Option* batch_size = nullptr;
    CLI::Option* lr = nullptr;
    CLI::Option* weight_decay = nullptr;
    CLI::Option* optimizer = nullptr;
    CLI::Option* precision = nullptr;
    CLI::Option* clip_norm = nullptr;

    std::string manifest_v;
    std::string data_v;
    std::size_t epochs_v = 0;
    std::size_t batch_size_v = 0;
    double lr_v = 0.0;
    double weight_decay_v = 0.0;
    std::string optimizer_v;
    std::string precision_v = "f32";
    std::string clip_norm_v;

    void add(CLI::App* cmd) {
        manifest = cmd->add_option("--manifest", manifest_v, "run manifest JSON; flags override its fields");
        data = cmd->add_option("--data", data_v, "dataset directory (train.ofad, test.ofad)");
        epochs = cmd->add_option("--epochs", epochs_v);
        batch_size = cmd->add_option("--batch-size", batch_size_v);
        lr = cmd->add_option("--lr", lr_v, "peak learning rate");
        weight_decay = cmd->add_option("--weight-decay", weight_decay_v);
        optimizer = cmd->add_option("--optimizer", optimizer_v)->check(CLI::IsMember({"momentum_sgd", "adamw"}));
        precision = cmd->add_option("--precision", precision_v)->check(CLI::IsMember({"f32", "f64"}));
        clip_norm = cmd->add_option("--clip-norm", clip_norm_v, "global gradient-norm cap, or 'none'");
    }

    RunManifest base() const {
        return manifest->count() ? load_manifest(manifest_v) : RunManifest{};
    }

    // `family` is the trained model's family: its optimizer defaults apply
    // unless a manifest was given.
    void apply(RunManifest& run, Family family) const {
        if (!manifest->count()) run.optimizer = OptimizerConfig::defaults_for(family);
        if (data->count()) run.dataset = data_v;
        if (epochs->count()) run.optimizer.epochs = epochs_v;
        if (batch_size->count()) run.batch_size = batch_size_v;
        if (lr->count()) run.optimizer.learning_rate = lr_v;
        if (weight_decay->count()) run.optimizer.weight_decay = weight_decay_v;
        if (optimizer->count()) run.optimizer.kind = optimizer_kind_from_string(optimizer_v);
        if (precision->count()) run.precision = parse_precision(precision_v);
        if (clip_norm->count()) {
            run.clip_norm = clip_norm_v == "none" ? std::nullopt
                                                  : std::optional<double>(parse_double(clip_norm_v, "--clip-norm"));
        }
        if (run.dataset.empty()) throw ConfigError("--data is required");
    }
};

// Flags specific to distillation (distill and ablate).
struct DistillFlags {
    CLI::Option* teacher = nullptr;
    CLI::Option* branches = nullptr;
    CLI::Option* gamma = nullptr;
    CLI::Option* baseline = nullptr;
    CLI::Option* lambda = nullptr;
    CLI::Option* temperature = nullptr;
    CLI::Option* scale = nullptr;
    CLI::Option* objective = nullptr;

    std::string teacher_v;
    std::string branches_v;
    std::string gamma_v;
    double baseline_v = 0.0;
    double lambda_v = 0.0;
    double temperature_v = 0.0;
    double scale_v = 0.0;
    std::string objective_v;
    ModelFlags student;

    void add(CLI::App* cmd) {
        teacher = cmd->add_option("--teacher-ckpt", teacher_v, "teacher checkpoint directory");
        branches = cmd->add_option("--branches", branches_v, "exit stages, e.g. 1,2,3,4, or 'none'");
        gamma = cmd->add_option("--gamma", gamma_v, "modulating exponent, or 'auto'");
        baseline = cmd->add_option("--baseline-acc", baseline_v, "from-scratch student accuracy for --gamma auto");
        lambda = cmd->add_option("--lambda", lambda_v);
        temperature = cmd->add_option("--temperature", temperature_v);
        scale = cmd->add_option("--scale", scale_v, "loss scale");
        objective = cmd->add_option("--objective", objective_v)
                        ->check(CLI::IsMember({"ce", "ofa", "kd", "kd_reformulated"}));
        student.add(cmd);
    }

    // A train-teacher output directory is accepted as the checkpoint.
    void apply(RunManifest& run) const {
        if (teacher->count()) run.teacher_checkpoint = teacher_v;
        if (!run.teacher_checkpoint.empty() && !fs::exists(fs::path(run.teacher_checkpoint) / "manifest.json")) {
            throw ConfigError("teacher checkpoint not found: " +
                              (fs::path(run.teacher_checkpoint) / "manifest.json").string());
        }
        if (run.teacher_checkpoint.empty()) throw ConfigError("--teacher-ckpt is required");
        if (fs::exists(fs::path(run.teacher_checkpoint) / "checkpoint" / "manifest.json")) {
            run.teacher_checkpoint = (fs::path(run.teacher_checkpoint) / "checkpoint").string();
        }
        run.teacher = read_checkpoint_config(run.teacher_checkpoint);

        student.apply(run.student);
        run.student.class_count = run.teacher.class_count;
        run.student.channels = run.teacher.channels;
        run.student.height = run.teacher.height;
        run.student.width = run.teacher.width;

        if (branches->count()) run.branches = parse_stage_list(branches_v, "--branches");
        if (lambda->count()) run.loss.lambda = lambda_v;
        if (temperature->count()) run.loss.temperature = temperature_v;
        if (scale->count()) run.loss.scale = scale_v;
        if (objective->count()) run.objective = objective_from_string(objective_v);
        if (gamma->count()) {
            if (gamma_v == "auto") {
                const auto manifest = read_checkpoint_manifest(run.teacher_checkpoint);
                std::optional<double> teacher_acc;
                if (manifest.contains("test_acc")) teacher_acc = manifest["test_acc"].get<double>();
                std::optional<double> baseline_acc;
                if (baseline->count()) baseline_acc = baseline_v;
                run.loss.gamma = choose_gamma(teacher_acc, baseline_acc);
            } else {
                run.loss.gamma = parse_double(gamma_v, "--gamma");
            }
        }
    }
};

TrainHooks progress_hooks(std::ostream& out) {
    TrainHooks hooks;
    hooks.on_epoch = [&out](const EpochMetrics& m) {
        out << "epoch " << m.epoch << "  loss " << std::fixed << std::setprecision(4) << m.train_loss
            << "  test_acc " << m.test_acc << std::defaultfloat << "\n"
            << std::flush;
    };
    return hooks;
}

// Resolves a checkpoint directory, accepting a training output directory.
fs::path checkpoint_dir(const fs::path& dir) {
    if (fs::exists(dir / "checkpoint" / "manifest.json")) return dir / "checkpoint";
    if (!fs::exists(dir / "manifest.json")) throw ConfigError("checkpoint not found: " + (dir / "manifest.json").string());
    return dir;
}

Dataset load_split(const fs::path& data_dir, Split which) {
    const auto path = data_dir / (which == Split::train ? "train.ofad" : "test.ofad");
    if (!fs::exists(path)) throw ConfigError("dataset not found: " + path.string());
    return load_dataset(path, which);
}

// Sample subset shared by every model dumped with the same dataset and seed.
std::vector<std::size_t> feature_subset(std::size_t n, std::size_t samples, std::uint64_t seed) {
    auto order = epoch_order(n, substream_seed(seed, "subset"), 0, true);
    order.resize(std::min(samples, n));
    return order;
}

template <typename T>
FeatureDump features_of(const StagedModel<T>& model, const Dataset& ds, const std::vector<std::size_t>& stages,
                        const std::vector<std::size_t>& indices, std::size_t batch_size) {
    NoGradScope<T> no_grad;
    std::vector<std::vector<double>> values(stages.size());
    std::vector<std::size_t> dims(stages.size(), 0);
    for (std::size_t start = 0; start < indices.size(); start += batch_size) {
        const std::size_t end = std::min(indices.size(), start + batch_size);
        const auto batch = gather_batch<T>(ds, std::span<const std::size_t>(indices).subspan(start, end - start));
        const auto trace = model.trace(batch.images);
        for (std::size_t k = 0; k < stages.size(); ++k) {
            const auto flat = model.flatten_features(trace.stages[stages[k] - 1]);
            dims[k] = flat.dim(1);
            for (const T v : flat.data()) values[k].push_back(static_cast<double>(v));
        }
    }
    FeatureDump dump;
    dump.sample_indices = indices;
    for (std::size_t k = 0; k < stages.size(); ++k) {
        dump.layers.push_back({"stage" + std::to_string(stages[k]),
                               Tensor<double>({indices.size(), dims[k]}, std::move(values[k]))});
    }
    return dump;
}

struct FeatureRequest {
    fs::path data;
    Split split = Split::test;
    std::vector<std::size_t> stages{1, 2, 3, 4};
    std::size_t samples = 256;
    std::size_t batch_size = 64;
    std::uint64_t seed = 0;
};

FeatureDump dump_checkpoint_features(const fs::path& ckpt_arg, const FeatureRequest& req) {
    for (const auto s : req.stages) {
        if (s < 1 || s > kStageCount) throw DomainError("stage " + std::to_string(s) + " out of range 1..4");
    }
    if (req.stages.empty()) throw ConfigError("--stages: at least one stage required");
    if (req.samples == 0) throw ConfigError("--samples must be positive");
    if (req.batch_size == 0) throw ConfigError("--batch-size must be positive");
    const fs::path ckpt = checkpoint_dir(ckpt_arg);
    const Dataset ds = load_split(req.data, req.split);
    const auto indices = feature_subset(ds.size(), req.samples, req.seed);
    const auto manifest = read_checkpoint_manifest(ckpt);
    FeatureDump dump = manifest.value("dtype", std::string("f32")) == "f64"
                           ? features_of(load_checkpoint<double>(ckpt), ds, req.stages, indices, req.batch_size)
                           : features_of(load_checkpoint<float>(ckpt), ds, req.stages, indices, req.batch_size);
    dump.extra = {{"split", to_string(req.split)}, {"seed", req.seed}, {"config", manifest["config"]}};
    return dump;
}

bool is_checkpoint_dir(const fs::path& dir) {
    for (const auto& p : {dir / "manifest.json", dir / "checkpoint" / "manifest.json"}) {
        if (!fs::exists(p)) continue;
        const auto j = read_json_file(p);
        if (j.value("format", std::string{}) == "ofakd-checkpoint") return true;
    }
    return false;
}

void print_gradcheck(std::ostream& out, const std::vector<GradCheckCaseResult>& results) {
    for (const auto& r : results) {
        out << (r.passed() ? "PASS " : "FAIL ") << r.name << "  instances " << r.instances << "  max_rel_error "
            << std::scientific << std::setprecision(2) << r.max_rel_error << std::defaultfloat;
        if (!r.passed() && !r.first_failure.empty()) out << "  (" << r.first_failure << ")";
        out << "\n";
    }
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"ofakd: heterogeneous-architecture distillation laboratory", "ofakd"};
    app.require_subcommand(1);
    app.allow_extras(false);

    std::function<void()> action;
    int exit_code = kOk;
    std::uint64_t seed = 0;
    std::string out_path;

    auto common = [&](CLI::App* cmd, bool out_required) {
        cmd->add_option("--seed", seed, "root seed for every random sub-stream");
        auto* o = cmd->add_option("--out", out_path, "output location");
        if (out_required) o->required();
        return cmd;
    };

    // gen-data
    auto* gen = common(app.add_subcommand("gen-data", "render the synthetic shape/texture dataset"), true);
    std::string spec_path;
    std::size_t classes = 0, train_per_class = 0, test_per_class = 0, image_size = 0;
    double noise = 0.0;
    gen->add_option("--spec", spec_path, "dataset spec JSON");
    auto* classes_opt = gen->add_option("--classes", classes);
    auto* train_opt = gen->add_option("--train-per-class", train_per_class);
    auto* test_opt = gen->add_option("--test-per-class", test_per_class);
    auto* size_opt = gen->add_option("--image-size", image_size, "height and width");
    auto* noise_opt = gen->add_option("--noise", noise, "pixel noise standard deviation");
    gen->callback([&] {
        action = [&] {
            SyntheticSpec spec = spec_path.empty() ? SyntheticSpec{} : spec_from_json(read_json_file(spec_path));
            if (gen->get_option("--seed")->count()) spec.seed = seed;
            if (classes_opt->count()) spec.class_count = classes;
            if (train_opt->count()) spec.train_per_class = train_per_class;
            if (test_opt->count()) spec.test_per_class = test_per_class;
            if (size_opt->count()) spec.height = spec.width = image_size;
            if (noise_opt->count()) spec.noise_std = noise;
            spec.validate();
            const fs::path dir(out_path);
            fs::create_directories(dir);
            const auto pair = generate(spec);
            save_dataset(dir / "train.ofad", pair.train);
            save_dataset(dir / "test.ofad", pair.test);
            write_json_file(dir / "spec.json", spec_to_json(spec));
            out << "wrote " << pair.train.size() << " train / " << pair.test.size() << " test samples to " << dir.string()
                << "\n";
        };
    });

    // train-teacher
    auto* teach = common(app.add_subcommand("train-teacher", "train a model with cross-entropy"), true);
    ModelFlags teacher_model;
    RunFlags teacher_run;
    teacher_model.add(teach);
    teacher_run.add(teach);
    teach->callback([&] {
        action = [&] {
            RunManifest run = teacher_run.base();
            teacher_model.apply(run.teacher);
            teacher_run.apply(run, run.teacher.family);
            if (teach->get_option("--seed")->count() || !teacher_run.manifest->count()) {
                run.seed = seed;
                run.teacher.seed = seed;
            }
            const Dataset probe = load_split(run.dataset, Split::test);
            run.teacher.class_count = probe.class_count;
            run.teacher.channels = probe.images.dim(1);
            run.teacher.height = probe.height();
            run.teacher.width = probe.width();
            run.objective = Objective::ce;
            run.output = out_path;
            const auto hooks = progress_hooks(out);
            const auto metrics = run.precision == DType::f64 ? pretrain_teacher<double>(run, hooks).metrics
                                                             : pretrain_teacher<float>(run, hooks).metrics;
            out << "final test_acc " << metrics.back().test_acc << "\n";
        };
    });

    // distill
    auto* dist = common(app.add_subcommand("distill", "train a student against a frozen teacher"), true);
    RunFlags distill_run;
    DistillFlags distill_flags;
    distill_run.add(dist);
    distill_flags.add(dist);
    dist->callback([&] {
        action = [&] {
            RunManifest run = distill_run.base();
            distill_flags.apply(run);
            distill_run.apply(run, run.student.family);
            if (dist->get_option("--seed")->count() || !distill_run.manifest->count()) {
                run.seed = seed;
                run.student.seed = seed;
            }
            run.output = out_path;
            const auto hooks = progress_hooks(out);
            const auto metrics = run.precision == DType::f64 ? distill<double>(run, hooks).metrics
                                                             : distill<float>(run, hooks).metrics;
            out << "final test_acc " << metrics.back().test_acc << "\n";
        };
    });

    // cka
    auto* cka_cmd = common(app.add_subcommand("cka", "CKA heatmap between two models' stage features"), true);
    std::string model_a, model_b, cka_data, cka_split = "test", cka_stages = "1,2,3,4";
    std::size_t cka_batch = 0, cka_samples = 256;
    cka_cmd->add_option("--model-a", model_a, "feature dump or checkpoint directory")->required();
    cka_cmd->add_option("--model-b", model_b, "feature dump or checkpoint directory")->required();
    cka_cmd->add_option("--batch-size", cka_batch, "minibatch CKA block size (0: full-sample CKA)");
    cka_cmd->add_option("--data", cka_data, "dataset directory, needed when a model is a checkpoint");
    cka_cmd->add_option("--split", cka_split)->check(CLI::IsMember({"train", "test"}));
    cka_cmd->add_option("--stages", cka_stages);
    cka_cmd->add_option("--samples", cka_samples);
    cka_cmd->callback([&] {
        action = [&] {
            FeatureRequest req;
            req.data = cka_data;
            req.split = cka_split == "train" ? Split::train : Split::test;
            req.stages = parse_stage_list(cka_stages, "--stages");
            req.samples = cka_samples;
            req.seed = seed;
            auto features = [&](const std::string& dir) {
                if (is_checkpoint_dir(dir)) {
                    if (cka_data.empty()) throw ConfigError("--data is required when " + dir + " is a checkpoint");
                    return dump_checkpoint_features(dir, req);
                }
                if (!fs::exists(fs::path(dir) / "manifest.json")) {
                    throw ConfigError("feature directory not found: " + (fs::path(dir) / "manifest.json").string());
                }
                return load_feature_dir(dir);
            };
            const FeatureDump a = features(model_a);
            const FeatureDump b = features(model_b);
            if (a.sample_indices != b.sample_indices) {
                throw ConfigError("feature dumps cover different samples: " + model_a + " vs " + model_b);
            }
            const CkaMatrix m = heatmap(a.layers, b.layers, cka_batch);
            const fs::path csv(out_path);
            write_text(csv, m.to_csv());
            fs::path side = csv;
            side.replace_extension(".json");
            json report = m.summary();
            report["model_a"] = model_a;
            report["model_b"] = model_b;
            report["samples"] = a.sample_indices.size();
            report["batch_size"] = cka_batch;
            report["rows"] = m.row_labels;
            report["cols"] = m.col_labels;
            report["values"] = m.values;
            write_json_file(side, report);
            out << m.to_csv();
        };
    });

    // gradcheck
    auto* gc = common(app.add_subcommand("gradcheck", "finite-difference gradient checks"), false);
    bool gc_all = false;
    std::vector<std::string> gc_cases;
    GradCheckOptions gc_options;
    gc->add_flag("--all", gc_all, "run every case (default when no --case is given)");
    gc->add_option("--case", gc_cases, "case name; repeatable")->check(CLI::IsMember(gradcheck_case_names()));
    gc->add_option("--instances", gc_options.instances, "random instances per case");
    gc->add_option("--tolerance", gc_options.tolerance, "relative tolerance");
    gc->add_flag_function("--list", [&](std::int64_t) {
        action = [&] {
            for (const auto& n : gradcheck_case_names()) out << n << "\n";
        };
    }, "print case names");
    gc->callback([&] {
        if (action) return;
        action = [&] {
            gc_options.seed = seed;
            const auto results = run_gradcheck_suite(gc_options, gc_all ? std::vector<std::string>{} : gc_cases);
            print_gradcheck(out, results);
            const auto failed = std::count_if(results.begin(), results.end(), [](const auto& r) { return !r.passed(); });
            if (!out_path.empty()) {
                json report = json::array();
                for (const auto& r : results) {
                    report.push_back({{"case", r.name},
                                      {"passed", r.passed()},
                                      {"instances", r.instances},
                                      {"failures", r.failures},
                                      {"max_rel_error", r.max_rel_error},
                                      {"first_failure", r.first_failure}});
                }
                write_json_file(out_path, {{"seed", seed},
                                           {"tolerance", gc_options.tolerance},
                                           {"instances", gc_options.instances},
                                           {"cases", report}});
            }
            if (failed > 0) {
                err << "ofakd: " << failed << " gradient check case(s) failed\n";
                exit_code = kRuntimeError;
            }
        };
    });

    // ablate
    auto* abl = common(app.add_subcommand("ablate", "distillation sweep over one axis and several seeds"), true);
    std::string axis_name, values_text, seeds_text = "0,1,2";
    RunFlags ablate_run;
    DistillFlags ablate_flags;
    abl->add_option("axis", axis_name, "branches, gamma, scale or clip")
        ->required()
        ->check(CLI::IsMember({"branches", "gamma", "scale", "clip"}));
    abl->add_option("--values", values_text, "semicolon-separated axis values, e.g. 'none;1;1,2,3,4'");
    abl->add_option("--seeds", seeds_text, "comma-separated student seeds");
    ablate_run.add(abl);
    ablate_flags.add(abl);
    abl->callback([&] {
        action = [&] {
            RunManifest run = ablate_run.base();
            ablate_flags.apply(run);
            ablate_run.apply(run, run.student.family);
            run.seed = seed;
            run.output = out_path;
            run.validate();
            const AblationAxis axis = ablation_axis_from_string(axis_name);
            const auto values = values_text.empty() ? default_axis_values(axis) : split(values_text, ';');
            const auto seeds = parse_seed_list(seeds_text);
            const DatasetPair data = load_dataset_dir(run.dataset);
            const AblationResult result =
                run.precision == DType::f64
                    ? ablate<double>(run, load_checkpoint<double>(run.teacher_checkpoint), data, axis, values, seeds)
                    : ablate<float>(run, load_checkpoint<float>(run.teacher_checkpoint), data, axis, values, seeds);
            const fs::path dir(out_path);
            fs::create_directories(dir);
            write_text(dir / "rows.csv", result.rows_csv());
            write_text(dir / "summary.csv", result.summary_csv());
            write_json_file(dir / "ablation.json", result.to_json());
            write_json_file(dir / "manifest.json",
                            {{"run", manifest_to_json(run)}, {"axis", axis_name}, {"values", values}, {"seeds", seeds}});
            out << result.summary_csv();
        };
    });

    // dump-features
    auto* dump = common(app.add_subcommand("dump-features", "write per-stage features over a seeded sample subset"),
                        true);
    std::string dump_ckpt, dump_data, dump_split = "test", dump_stages = "1,2,3,4";
    std::size_t dump_samples = 256, dump_batch = 64;
    dump->add_option("--ckpt", dump_ckpt, "checkpoint directory")->required();
    dump->add_option("--data", dump_data, "dataset directory")->required();
    dump->add_option("--split", dump_split)->check(CLI::IsMember({"train", "test"}));
    dump->add_option("--stages", dump_stages);
    dump->add_option("--samples", dump_samples);
    dump->add_option("--batch-size", dump_batch);
    dump->callback([&] {
        action = [&] {
            FeatureRequest req;
            req.data = dump_data;
            req.split = dump_split == "train" ? Split::train : Split::test;
            req.stages = parse_stage_list(dump_stages, "--stages");
            req.samples = dump_samples;
            req.batch_size = dump_batch;
            req.seed = seed;
            const FeatureDump d = dump_checkpoint_features(dump_ckpt, req);
            save_feature_dir(out_path, d);
            out << "wrote " << d.layers.size() << " layers over " << d.sample_indices.size() << " samples to "
                << out_path << "\n";
        };
    });

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        const auto parsed = app.get_subcommands();
        out << (parsed.empty() ? app.help() : parsed.front()->help());
        return kOk;
    } catch (const CLI::ParseError& e) {
        err << "ofakd: " << e.what() << "\n";
        if (app.get_subcommands().empty()) err << "run 'ofakd --help' for usage\n";
        return kValidationError;
    } catch (const Error& e) {
        err << "ofakd: " << e.what() << "\n";
        return e.is_validation() ? kValidationError : kRuntimeError;
    }

    try {
        if (action) action();
        return exit_code;
    } catch (const Error& e) {
        err << "ofakd: " << e.what() << "\n";
        return e.is_validation() ? kValidationError : kRuntimeError;
    } catch (const fs::filesystem_error& e) {
        err << "ofakd: " << e.what() << "\n";
        return kRuntimeError;
    } catch (const std::exception& e) {
        err << "ofakd: " << e.what() << "\n";
        return kRuntimeError;
    }
}

}  // namespace ofakd::cli
