#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ofakd/data.hpp"
#include "ofakd/losses.hpp"
#include "ofakd/nn.hpp"
#include "ofakd/optim.hpp"

namespace ofakd {

// ce: plain cross-entropy. ofa: mean OFA loss over exits. kd: mean kd_loss
// over exits. kd_reformulated: mean of the lambda-free reformulated loss.
enum class Objective { ce, ofa, kd, kd_reformulated };

std::string to_string(Objective objective);
Objective objective_from_string(std::string_view name);

struct RunManifest {
    std::uint64_t seed = 0;
    ModelConfig teacher;
    ModelConfig student;
    LossConfig loss;
    OptimizerConfig optimizer;
    Objective objective = Objective::ofa;
    std::vector<std::size_t> branches{1, 2, 3, 4};
    std::optional<double> clip_norm = 5.0;
    std::size_t batch_size = 64;
    DType precision = DType::f32;
    std::string dataset;             // directory with train.ofad and test.ofad
    std::string teacher_checkpoint;  // checkpoint directory (distill only)
    std::string output;

    void validate() const;
};

nlohmann::json manifest_to_json(const RunManifest& m);
RunManifest manifest_from_json(const nlohmann::json& j);
RunManifest load_manifest(const std::filesystem::path& path);

struct EpochMetrics {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double test_acc = 0.0;
    std::vector<double> exit_losses;  // branch exits in stage order, then the final head
    double grad_scale_min = 1.0;

    nlohmann::json to_json() const;
};

struct StepInfo {
    std::size_t epoch = 0;
    std::size_t batch = 0;
    double loss = 0.0;
    double learning_rate = 0.0;
    double grad_norm = 0.0;          // before clipping
    double clipped_grad_norm = 0.0;  // after clipping
    double clip_scale = 1.0;
};

struct TrainHooks {
    std::function<void(const StepInfo&)> on_step;
    std::function<void(const EpochMetrics&)> on_epoch;
};

struct Evaluation {
    double accuracy = 0.0;
    double mean_loss = 0.0;
    std::size_t samples = 0;
};

template <typename T>
Evaluation evaluate(const StagedModel<T>& model, const Dataset& ds, std::size_t batch_size = 128);

template <typename T>
struct TrainResult {
    StagedModel<T> model;
    std::vector<EpochMetrics> metrics;
};

// Cross-entropy training of a fresh model built from `config` (teacher
// pretraining and from-scratch baselines). Ignores branches and the loss config.
template <typename T>
TrainResult<T> train_supervised(const ModelConfig& config, const DatasetPair& data, const RunManifest& run,
                                const TrainHooks& hooks = {});

// Trains a fresh student (run.student) against a frozen teacher with
// branches attached at run.branches; returns the stripped student.
template <typename T>
TrainResult<T> distill_student(const StagedModel<T>& teacher, const DatasetPair& data, const RunManifest& run,
                               const TrainHooks& hooks = {});

// File-level entry points. Read run.dataset, write into run.output:
// checkpoint/, metrics.jsonl and manifest.json.
template <typename T>
TrainResult<T> pretrain_teacher(const RunManifest& run, const TrainHooks& hooks = {});
template <typename T>
TrainResult<T> distill(const RunManifest& run, const TrainHooks& hooks = {});

DatasetPair load_dataset_dir(const std::filesystem::path& dir);
void write_metrics(const std::filesystem::path& path, const std::vector<EpochMetrics>& metrics);

}  // namespace ofakd
