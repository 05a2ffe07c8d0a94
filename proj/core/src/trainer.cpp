#include "ofakd/trainer.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "ofakd/checkpoint.hpp"

namespace ofakd {

std::string to_string(Objective objective) {
    switch (objective) {
        case Objective::ce: return "ce";
        case Objective::ofa: return "ofa";
        case Objective::kd: return "kd";
        case Objective::kd_reformulated: return "kd_reformulated";
    }
    return "?";
}

Objective objective_from_string(std::string_view name) {
    if (name == "ce") return Objective::ce;
    if (name == "ofa") return Objective::ofa;
    if (name == "kd") return Objective::kd;
    if (name == "kd_reformulated") return Objective::kd_reformulated;
    throw ConfigError("unknown objective '" + std::string(name) + "' (expected ce, ofa, kd or kd_reformulated)");
}

void RunManifest::validate() const {
    teacher.validate();
    student.validate();
    loss.validate();
    optimizer.validate();
    if (batch_size == 0) throw ConfigError("manifest: batch_size must be at least 1");
    if (clip_norm && !(*clip_norm > 0.0)) throw ConfigError("manifest: clip_norm must be positive");
    std::set<std::size_t> seen;
    for (auto s : branches) {
        if (s < 1 || s > kStageCount) {
            throw ConfigError("manifest: branch stage " + std::to_string(s) + " outside 1..4");
        }
        if (!seen.insert(s).second) throw ConfigError("manifest: duplicate branch stage " + std::to_string(s));
    }
}

nlohmann::json manifest_to_json(const RunManifest& m) {
    nlohmann::json j{{"seed", m.seed},
                     {"teacher", config_to_json(m.teacher)},
                     {"student", config_to_json(m.student)},
                     {"loss", loss_config_to_json(m.loss)},
                     {"optimizer", optimizer_config_to_json(m.optimizer)},
                     {"objective", to_string(m.objective)},
                     {"branches", m.branches},
                     {"batch_size", m.batch_size},
                     {"precision", m.precision == DType::f32 ? "f32" : "f64"},
                     {"dataset", m.dataset},
                     {"teacher_checkpoint", m.teacher_checkpoint},
                     {"output", m.output}};
    j["clip_norm"] = m.clip_norm ? nlohmann::json(*m.clip_norm) : nlohmann::json(nullptr);
    return j;
}

RunManifest manifest_from_json(const nlohmann::json& j) {
    static const std::set<std::string> known{"seed", "teacher", "student", "loss", "optimizer", "objective",
                                             "branches", "batch_size", "precision", "dataset",
                                             "teacher_checkpoint", "output", "clip_norm"};
    if (!j.is_object()) throw ConfigError("manifest: expected a JSON object");
    for (const auto& item : j.items()) {
        if (!known.count(item.key())) throw ConfigError("manifest: unknown field '" + item.key() + "'");
    }
    RunManifest m;
    try {
        m.seed = j.value("seed", m.seed);
        if (j.contains("teacher")) m.teacher = config_from_json(j["teacher"]);
        if (j.contains("student")) m.student = config_from_json(j["student"]);
        if (j.contains("loss")) m.loss = loss_config_from_json(j["loss"]);
        m.optimizer = OptimizerConfig::defaults_for(m.student.family);
        if (j.contains("optimizer")) m.optimizer = optimizer_config_from_json(j["optimizer"]);
        if (j.contains("objective")) m.objective = objective_from_string(j["objective"].get<std::string>());
        m.branches = j.value("branches", m.branches);
        m.batch_size = j.value("batch_size", m.batch_size);
        const auto precision = j.value("precision", std::string("f32"));
        if (precision != "f32" && precision != "f64") {
            throw ConfigError("manifest: precision must be f32 or f64, got '" + precision + "'");
        }
        m.precision = precision == "f32" ? DType::f32 : DType::f64;
        m.dataset = j.value("dataset", m.dataset);
        m.teacher_checkpoint = j.value("teacher_checkpoint", m.teacher_checkpoint);
        m.output = j.value("output", m.output);
        if (j.contains("clip_norm")) {
            m.clip_norm = j["clip_norm"].is_null() ? std::nullopt : std::optional<double>(j["clip_norm"].get<double>());
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("manifest: ") + e.what());
    }
    m.validate();
    return m;
}

RunManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("manifest not found: " + path.string());
    try {
        return manifest_from_json(nlohmann::json::parse(is));
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

nlohmann::json EpochMetrics::to_json() const {
    return {{"epoch", epoch},
            {"train_loss", train_loss},
            {"test_acc", test_acc},
            {"exit_losses", exit_losses},
            {"grad_scale_min", grad_scale_min}};
}

void write_metrics(const std::filesystem::path& path, const std::vector<EpochMetrics>& metrics) {
    std::ofstream os(path);
    if (!os) throw_io("cannot open for writing", path.string());
    for (const auto& m : metrics) os << m.to_json().dump() << '\n';
    if (!os) throw_io("write failed", path.string());
}

DatasetPair load_dataset_dir(const std::filesystem::path& dir) {
    return {load_dataset(dir / "train.ofad", Split::train), load_dataset(dir / "test.ofad", Split::test)};
}

template <typename T>
Evaluation evaluate(const StagedModel<T>& model, const Dataset& ds, std::size_t batch_size) {
    NoGradScope<T> no_grad;
    BatchStream<T> stream(ds, batch_size, 0, false);
    Batch<T> batch;
    Evaluation ev;
    std::size_t correct = 0;
    double loss_sum = 0.0;
    while (stream.next(batch)) {
        const Tensor<T> logits = model.forward(batch.images);
        const std::size_t c = logits.dim(1);
        const auto values = logits.data();
        for (std::size_t i = 0; i < batch.labels.size(); ++i) {
            const auto row = values.subspan(i * c, c);
            const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
            if (best == batch.labels[i]) ++correct;
        }
        loss_sum += static_cast<double>(cross_entropy(logits, Labels(batch.labels)).item()) *
                    static_cast<double>(batch.labels.size());
        ev.samples += batch.labels.size();
    }
    ev.accuracy = ev.samples ? static_cast<double>(correct) / static_cast<double>(ev.samples) : 0.0;
    ev.mean_loss = ev.samples ? loss_sum / static_cast<double>(ev.samples) : 0.0;
    return ev;
}

namespace {

template <typename T>
struct StepOutput {
    Tensor<T> loss;
    std::vector<double> exit_losses;
};

template <typename T>
using StepFn = std::function<StepOutput<T>(const Batch<T>&)>;

template <typename T>
std::vector<EpochMetrics> run_loop(const ParameterList<T>& params, const StagedModel<T>& eval_model,
                                   const DatasetPair& data, const RunManifest& run, const StepFn<T>& step_fn,
                                   const TrainHooks& hooks) {
    Optimizer<T> optimizer(params, run.optimizer);
    const std::size_t per_epoch = (data.train.size() + run.batch_size - 1) / run.batch_size;
    const std::size_t total_steps = per_epoch * run.optimizer.epochs;
    std::size_t global_step = 0;
    std::vector<EpochMetrics> history;

    for (std::size_t epoch = 0; epoch < run.optimizer.epochs; ++epoch) {
        BatchStream<T> stream(data.train, run.batch_size, run.seed, true, epoch);
        Batch<T> batch;
        EpochMetrics metrics;
        metrics.epoch = epoch + 1;
        double loss_sum = 0.0;
        std::size_t seen = 0;
        std::size_t index = 0;
        while (stream.next(batch)) {
            StepOutput<T> out;
            try {
                GradTape<T> tape;
                TapeScope<T> scope(&tape);
                out = step_fn(batch);
                tape.backward(out.loss);
            } catch (const NonFiniteError& e) {
                throw NonFiniteError("epoch " + std::to_string(epoch + 1) + ", batch " + std::to_string(index) +
                                     ": " + e.what());
            }
            StepInfo info;
            info.epoch = epoch + 1;
            info.batch = index;
            info.loss = static_cast<double>(out.loss.item());
            info.grad_norm = global_grad_norm(params);
            info.clip_scale = run.clip_norm ? clip_gradients(params, *run.clip_norm) : 1.0;
            info.clipped_grad_norm = info.clip_scale == 1.0 ? info.grad_norm : global_grad_norm(params);
            info.learning_rate = scheduled_lr(run.optimizer, global_step, total_steps);
            optimizer.step(info.learning_rate);
            optimizer.zero_grad();
            if (hooks.on_step) hooks.on_step(info);

            const double b = static_cast<double>(batch.labels.size());
            loss_sum += info.loss * b;
            if (metrics.exit_losses.empty()) metrics.exit_losses.assign(out.exit_losses.size(), 0.0);
            for (std::size_t k = 0; k < out.exit_losses.size(); ++k) metrics.exit_losses[k] += out.exit_losses[k] * b;
            metrics.grad_scale_min = std::min(metrics.grad_scale_min, info.clip_scale);
            seen += batch.labels.size();
            ++index;
            ++global_step;
        }
        metrics.train_loss = loss_sum / static_cast<double>(seen);
        for (auto& v : metrics.exit_losses) v /= static_cast<double>(seen);
        metrics.test_acc = evaluate(eval_model, data.test).accuracy;
        if (hooks.on_epoch) hooks.on_epoch(metrics);
        history.push_back(std::move(metrics));
    }
    return history;
}

void check_classes(const ModelConfig& config, const DatasetPair& data, const char* who) {
    if (config.class_count != data.train.class_count || config.class_count != data.test.class_count) {
        throw ConfigError(std::string(who) + " has " + std::to_string(config.class_count) +
                          " classes but the dataset has " + std::to_string(data.train.class_count));
    }
}

template <typename T>
Tensor<T> mean_of(const std::vector<Tensor<T>>& terms) {
    Tensor<T> total = terms.front();
    for (std::size_t i = 1; i < terms.size(); ++i) total = add(total, terms[i]);
    if (terms.size() == 1) return total;
    return scale(total, T(1) / static_cast<T>(terms.size()));
}

void prepare_output(const std::filesystem::path& dir) {
    if (dir.empty()) throw ConfigError("output directory not set");
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw_io("cannot create output directory", dir.string());
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
    std::ofstream os(path);
    if (!os) throw_io("cannot open for writing", path.string());
    os << j.dump(2) << '\n';
}

}  // namespace

template <typename T>
TrainResult<T> train_supervised(const ModelConfig& config, const DatasetPair& data, const RunManifest& run,
                                const TrainHooks& hooks) {
    check_classes(config, data, "model");
    StagedModel<T> model(config);
    StepFn<T> step = [&](const Batch<T>& batch) {
        StepOutput<T> out;
        out.loss = cross_entropy(model.forward(batch.images), Labels(batch.labels));
        out.exit_losses = {static_cast<double>(out.loss.item())};
        return out;
    };
    auto metrics = run_loop<T>(model.parameters(), model, data, run, step, hooks);
    return {model, std::move(metrics)};
}

template <typename T>
TrainResult<T> distill_student(const StagedModel<T>& teacher, const DatasetPair& data, const RunManifest& run,
                               const TrainHooks& hooks) {
    run.validate();
    if (teacher.config().class_count != run.student.class_count) {
        throw ConfigError("teacher has " + std::to_string(teacher.config().class_count) +
                          " classes, student has " + std::to_string(run.student.class_count));
    }
    check_classes(run.student, data, "student");
    const StagedModel<T> student(run.student);
    const BranchedModel<T> branched =
        run.branches.empty() ? BranchedModel<T>(student, {}) : attach_branches(student, run.branches);
    const LossConfig& cfg = run.loss;
    const T tau = static_cast<T>(cfg.temperature);

    auto member = [&](const Tensor<T>& logits, const Tensor<T>& teacher_logits, const Tensor<T>& probs,
                      Labels labels) -> Tensor<T> {
        switch (run.objective) {
            case Objective::ce: return cross_entropy(logits, labels);
            case Objective::ofa: return ofa_loss(logits, probs, labels, cfg);
            case Objective::kd: return kd_loss(logits, teacher_logits, labels, cfg);
            case Objective::kd_reformulated: return kd_loss_reformulated(logits, probs, labels);
        }
        throw ConfigError("unknown objective");
    };

    // The teacher is frozen and inputs are not augmented, so its logits are
    // computed once per training sample.
    std::vector<T> teacher_table;
    {
        NoGradScope<T> no_grad;
        BatchStream<T> stream(data.train, 128, 0, false);
        Batch<T> batch;
        teacher_table.resize(data.train.size() * teacher.config().class_count);
        while (stream.next(batch)) {
            const Tensor<T> logits = teacher.forward(batch.images);
            const std::size_t c = logits.dim(1);
            for (std::size_t i = 0; i < batch.indices.size(); ++i) {
                std::copy_n(logits.data().begin() + static_cast<std::ptrdiff_t>(i * c), c,
                            teacher_table.begin() + static_cast<std::ptrdiff_t>(batch.indices[i] * c));
            }
        }
    }

    StepFn<T> step = [&](const Batch<T>& batch) {
        const std::size_t c = teacher.config().class_count;
        std::vector<T> rows(batch.indices.size() * c);
        for (std::size_t i = 0; i < batch.indices.size(); ++i) {
            std::copy_n(teacher_table.begin() + static_cast<std::ptrdiff_t>(batch.indices[i] * c), c,
                        rows.begin() + static_cast<std::ptrdiff_t>(i * c));
        }
        const Tensor<T> teacher_logits({batch.indices.size(), c}, std::move(rows));
        const Labels labels(batch.labels);
        const T probs_tau = run.objective == Objective::kd_reformulated ? T(1) : tau;
        const Tensor<T> probs = teacher_probabilities(teacher_logits, probs_tau);
        auto exits = branched.forward_exits(batch.images);

        StepOutput<T> out;
        if (run.objective == Objective::ofa) {
            out.loss = distillation_objective(exits.branch_logits, exits.logits, teacher_logits, labels, cfg);
        } else {
            std::vector<Tensor<T>> terms;
            for (const auto& l : exits.branch_logits) terms.push_back(member(l, teacher_logits, probs, labels));
            terms.push_back(member(exits.logits, teacher_logits, probs, labels));
            out.loss = mean_of(terms);
        }
        NoGradScope<T> no_grad;
        for (const auto& l : exits.branch_logits) {
            out.exit_losses.push_back(static_cast<double>(member(l.detach(), teacher_logits, probs, labels).item()));
        }
        out.exit_losses.push_back(
            static_cast<double>(member(exits.logits.detach(), teacher_logits, probs, labels).item()));
        return out;
    };
    auto metrics = run_loop<T>(branched.parameters(), student, data, run, step, hooks);
    return {strip_branches(branched), std::move(metrics)};
}

template <typename T>
TrainResult<T> pretrain_teacher(const RunManifest& run, const TrainHooks& hooks) {
    run.validate();
    const std::filesystem::path out(run.output);
    prepare_output(out);
    const DatasetPair data = load_dataset_dir(run.dataset);
    auto result = train_supervised<T>(run.teacher, data, run, hooks);
    write_json(out / "manifest.json", manifest_to_json(run));
    write_metrics(out / "metrics.jsonl", result.metrics);
    save_checkpoint(out / "checkpoint", result.model,
                    {{"role", "teacher"}, {"test_acc", result.metrics.back().test_acc}});
    return result;
}

template <typename T>
TrainResult<T> distill(const RunManifest& run, const TrainHooks& hooks) {
    run.validate();
    const std::filesystem::path ckpt(run.teacher_checkpoint);
    if (run.teacher_checkpoint.empty() || !std::filesystem::exists(ckpt / "manifest.json")) {
        throw ConfigError("teacher checkpoint not found: " + (run.teacher_checkpoint.empty()
                                                                  ? std::string("(none given)")
                                                                  : (ckpt / "manifest.json").string()));
    }
    const std::filesystem::path out(run.output);
    prepare_output(out);
    const StagedModel<T> teacher = load_checkpoint<T>(ckpt);
    const DatasetPair data = load_dataset_dir(run.dataset);
    auto result = distill_student<T>(teacher, data, run, hooks);
    write_json(out / "manifest.json", manifest_to_json(run));
    write_metrics(out / "metrics.jsonl", result.metrics);
    save_checkpoint(out / "checkpoint", result.model,
                    {{"role", "student"}, {"test_acc", result.metrics.back().test_acc}});
    return result;
}

#define OFAKD_INSTANTIATE(T)                                                                                   \
    template Evaluation evaluate<T>(const StagedModel<T>&, const Dataset&, std::size_t);                       \
    template TrainResult<T> train_supervised<T>(const ModelConfig&, const DatasetPair&, const RunManifest&,    \
                                                const TrainHooks&);                                            \
    template TrainResult<T> distill_student<T>(const StagedModel<T>&, const DatasetPair&, const RunManifest&,  \
                                               const TrainHooks&);                                             \
    template TrainResult<T> pretrain_teacher<T>(const RunManifest&, const TrainHooks&);                        \
    template TrainResult<T> distill<T>(const RunManifest&, const TrainHooks&);

OFAKD_INSTANTIATE(float)
OFAKD_INSTANTIATE(double)
#undef OFAKD_INSTANTIATE

}  // namespace ofakd
