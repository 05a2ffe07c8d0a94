#include <cmath>
#include <fstream>

#include "doctest.h"
#include "ofakd/ablate.hpp"
#include "ofakd/checkpoint.hpp"
#include "ofakd/trainer.hpp"
#include "support.hpp"

using namespace ofakd;

namespace {

SyntheticSpec tiny_spec(std::size_t per_class = 10) {
    SyntheticSpec s;
    s.class_count = 2;
    s.train_per_class = per_class;
    s.test_per_class = 4;
    s.height = s.width = 16;
    s.seed = 1;
    return s;
}

ModelConfig tiny_cnn(std::uint64_t seed = 0) {
    ModelConfig c;
    c.widths = {4, 4, 8, 8};
    c.class_count = 2;
    c.height = c.width = 16;
    c.seed = seed;
    return c;
}

ModelConfig tiny_vit(std::uint64_t seed = 0) {
    ModelConfig c;
    c.family = Family::vit;
    c.embed_dim = 8;
    c.heads = 2;
    c.depth = 4;
    c.class_count = 2;
    c.height = c.width = 16;
    c.seed = seed;
    return c;
}

RunManifest tiny_run(std::size_t epochs = 1) {
    RunManifest r;
    r.teacher = tiny_vit(7);
    r.student = tiny_cnn(3);
    r.optimizer.epochs = epochs;
    r.batch_size = 8;
    r.precision = DType::f64;
    return r;
}

template <typename T>
std::vector<std::vector<T>> snapshot(const ParameterList<T>& params) {
    std::vector<std::vector<T>> out;
    for (const auto& p : params) out.emplace_back(p.value.data().begin(), p.value.data().end());
    return out;
}

std::vector<nlohmann::json> metrics_json(const std::vector<EpochMetrics>& m) {
    std::vector<nlohmann::json> out;
    for (const auto& e : m) out.push_back(e.to_json());
    return out;
}

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("optimizer config defaults follow the family") {
    CHECK(OptimizerConfig::defaults_for(Family::cnn).kind == OptimizerKind::momentum_sgd);
    CHECK(OptimizerConfig::defaults_for(Family::cnn).learning_rate == 0.05);
    const auto v = OptimizerConfig::defaults_for(Family::vit);
    CHECK(v.kind == OptimizerKind::adamw);
    CHECK(v.learning_rate == 1e-3);
    CHECK(v.weight_decay == 0.05);
    CHECK(OptimizerConfig::defaults_for(Family::mixer).kind == OptimizerKind::adamw);
    OptimizerConfig bad;
    bad.epochs = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = {};
    bad.learning_rate = -1.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("cosine schedule") {
    OptimizerConfig c;
    c.learning_rate = 0.1;
    CHECK(scheduled_lr(c, 0, 100) == doctest::Approx(0.1));
    CHECK(scheduled_lr(c, 50, 100) == doctest::Approx(0.05));
    CHECK(scheduled_lr(c, 100, 100) == doctest::Approx(0.0));
    c.cosine = false;
    CHECK(scheduled_lr(c, 70, 100) == 0.1);
}

TEST_CASE("clip_gradients examples") {
    ParameterList<double> params{{"a", Tensor<double>({2, 2}, {6, 0, 0, 0})}, {"b", Tensor<double>({2}, {0, 8})}};
    params[0].value.mutable_grad()[0] = 6;
    params[1].value.mutable_grad()[1] = 8;
    CHECK(global_grad_norm(params) == 10.0);
    CHECK(clip_gradients(params, 5.0) == 0.5);
    CHECK(global_grad_norm(params) == doctest::Approx(5.0).epsilon(1e-15));
    CHECK(clip_gradients(params, 5.0) == doctest::Approx(1.0));

    ParameterList<double> small{{"c", Tensor<double>({1}, {1.0})}};
    small[0].value.mutable_grad()[0] = 1.0;
    CHECK(clip_gradients(small, 5.0) == 1.0);
    CHECK(small[0].value.grad()[0] == 1.0);

    Rng rng(4);
    ParameterList<double> many;
    for (int i = 0; i < 5; ++i) {
        auto t = testing::random_tensor({3, 4}, rng);
        for (auto& g : t.mutable_grad()) g = rng.uniform(-10, 10);
        many.push_back({"p" + std::to_string(i), t});
    }
    clip_gradients(many, 5.0);
    double sq = 0.0;
    for (const auto& p : many)
        for (const double g : p.value.grad()) sq += g * g;
    CHECK(std::abs(std::sqrt(sq) - 5.0) <= 1e-10);
}

TEST_CASE("momentum SGD and AdamW steps match hand calculations") {
    OptimizerConfig sgd;
    sgd.momentum = 0.9;
    sgd.weight_decay = 0.1;
    ParameterList<double> p{{"w", Tensor<double>({1, 1}, {2.0})}, {"b", Tensor<double>({1}, {2.0})}};
    Optimizer<double> opt(p, sgd);
    p[0].value.mutable_grad()[0] = 1.0;
    p[1].value.mutable_grad()[0] = 1.0;
    opt.step(0.5);
    CHECK(p[0].value.at(0) == doctest::Approx(2.0 - 0.5 * (1.0 + 0.1 * 2.0)));
    CHECK(p[1].value.at(0) == doctest::Approx(2.0 - 0.5 * 1.0));  // no decay on rank-1
    opt.step(0.5);  // same grads: v = 0.9 v + g + wd w
    const double w1 = 2.0 - 0.5 * 1.2;
    const double v2 = 0.9 * 1.2 + 1.0 + 0.1 * w1;
    CHECK(p[0].value.at(0) == doctest::Approx(w1 - 0.5 * v2));

    OptimizerConfig adam = OptimizerConfig::defaults_for(Family::vit);
    ParameterList<double> q{{"w", Tensor<double>({1, 1}, {1.0})}};
    Optimizer<double> opt2(q, adam);
    q[0].value.mutable_grad()[0] = 0.5;
    opt2.step(0.01);
    // Bias-corrected first step moves by lr * sign(g), plus decoupled decay.
    CHECK(q[0].value.at(0) == doctest::Approx(1.0 - 0.01 * 0.05 * 1.0 - 0.01 * 0.5 / (0.5 + 1e-8)));
}

TEST_CASE("manifest JSON round-trip and strictness") {
    auto r = tiny_run();
    r.branches = {1, 3};
    r.clip_norm = std::nullopt;
    r.objective = Objective::kd;
    const auto j = manifest_to_json(r);
    CHECK(manifest_to_json(manifest_from_json(j)) == j);
    auto bad = j;
    bad["colour"] = "red";
    CHECK_THROWS_AS(manifest_from_json(bad), ConfigError);
    r.branches = {1, 1};
    CHECK_THROWS_AS(r.validate(), ConfigError);
    r.branches = {0};
    CHECK_THROWS_AS(r.validate(), ConfigError);
    CHECK_THROWS_AS(load_manifest("/nonexistent/manifest.json"), ConfigError);
}

TEST_CASE("pretrain_teacher writes one metrics record per epoch and a checkpoint") {
    testing::TempDir dir("pretrain");
    std::filesystem::create_directories(dir / "data");
    save_dataset(dir / "data/train.ofad", generate(tiny_spec()).train);
    save_dataset(dir / "data/test.ofad", generate(tiny_spec()).test);
    auto r = tiny_run(1);
    r.teacher = tiny_cnn(1);
    r.dataset = (dir / "data").string();
    r.output = (dir / "out").string();
    pretrain_teacher<double>(r);
    std::ifstream is(dir / "out/metrics.jsonl");
    std::string line;
    int lines = 0;
    while (std::getline(is, line)) {
        const auto j = nlohmann::json::parse(line);
        CHECK(j.contains("epoch"));
        CHECK(j.contains("train_loss"));
        CHECK(j.contains("test_acc"));
        CHECK(j.contains("exit_losses"));
        CHECK(j.contains("grad_scale_min"));
        ++lines;
    }
    CHECK(lines == 1);
    CHECK(std::filesystem::exists(dir / "out/checkpoint/manifest.json"));
    CHECK(manifest_from_json(nlohmann::json::parse(std::ifstream(dir / "out/manifest.json"))).seed == r.seed);
}

TEST_CASE("supervised training is deterministic in 64-bit mode") {
    const auto data = generate(tiny_spec());
    const auto r = tiny_run(2);
    const auto a = train_supervised<double>(tiny_cnn(), data, r);
    const auto b = train_supervised<double>(tiny_cnn(), data, r);
    CHECK(snapshot(a.model.parameters()) == snapshot(b.model.parameters()));
    CHECK(metrics_json(a.metrics) == metrics_json(b.metrics));
}

TEST_CASE("learning rate zero leaves parameters at their initial values") {
    const auto data = generate(tiny_spec());
    auto r = tiny_run(1);
    r.optimizer.learning_rate = 0.0;
    const auto trained = train_supervised<double>(tiny_cnn(), data, r);
    CHECK(snapshot(trained.model.parameters()) == snapshot(StagedModel<double>(tiny_cnn()).parameters()));
}

TEST_CASE("non-finite loss aborts naming the batch") {
    const auto data = generate(tiny_spec());
    auto r = tiny_run(3);
    r.optimizer.learning_rate = 1e30;
    r.clip_norm = std::nullopt;
    try {
        (void)train_supervised<double>(tiny_cnn(), data, r);
        FAIL("expected NonFiniteError");
    } catch (const NonFiniteError& e) {
        CHECK(std::string(e.what()).find("batch") != std::string::npos);
    }
}

TEST_CASE("distillation: teacher frozen, clipping holds every step, branches stripped") {
    const auto data = generate(tiny_spec());
    const StagedModel<double> teacher(tiny_vit(7));
    const auto before = snapshot(teacher.parameters());
    auto r = tiny_run(2);
    r.optimizer.learning_rate = 50.0;
    r.clip_norm = 5.0;
    std::size_t steps = 0;
    double worst = 0.0;
    bool clipped = false;
    TrainHooks hooks;
    hooks.on_step = [&](const StepInfo& s) {
        ++steps;
        worst = std::max(worst, s.clipped_grad_norm);
        clipped = clipped || s.clip_scale < 1.0;
    };
    const auto result = distill_student<double>(teacher, data, r, hooks);
    CHECK(steps == 2 * 3);
    CHECK(worst <= 5.0 + 1e-6);
    CHECK(clipped);
    CHECK(snapshot(teacher.parameters()) == before);
    CHECK(result.model.parameter_count() == StagedModel<double>(r.student).parameter_count());
    for (const auto& p : result.model.parameters()) CHECK(p.name.rfind("branch", 0) != 0);
    REQUIRE(result.metrics.size() == 2);
    CHECK(result.metrics[0].exit_losses.size() == 5);
    CHECK(result.metrics[0].grad_scale_min < 1.0);
}

TEST_CASE("no branches at gamma 1 reproduces the reformulated-loss run exactly") {
    const auto data = generate(tiny_spec());
    const StagedModel<double> teacher(tiny_vit(7));
    auto r = tiny_run(2);
    r.branches = {};
    r.loss.gamma = 1.0;
    r.objective = Objective::ofa;
    const auto a = distill_student<double>(teacher, data, r);
    r.objective = Objective::kd_reformulated;
    const auto b = distill_student<double>(teacher, data, r);
    CHECK(metrics_json(a.metrics) == metrics_json(b.metrics));
    CHECK(snapshot(a.model.parameters()) == snapshot(b.model.parameters()));
}

TEST_CASE("distillation is deterministic and rejects class-count mismatch") {
    const auto data = generate(tiny_spec());
    const StagedModel<double> teacher(tiny_vit(7));
    const auto r = tiny_run(1);
    CHECK(metrics_json(distill_student<double>(teacher, data, r).metrics) ==
          metrics_json(distill_student<double>(teacher, data, r).metrics));
    auto other = tiny_vit(7);
    other.class_count = 3;
    CHECK_THROWS_AS(distill_student<double>(StagedModel<double>(other), data, r), ConfigError);
}

TEST_CASE("distill from files: missing teacher checkpoint names the path") {
    testing::TempDir dir("distill");
    auto r = tiny_run();
    r.teacher_checkpoint = (dir / "nothing").string();
    r.dataset = (dir / "data").string();
    r.output = (dir / "out").string();
    try {
        (void)distill<double>(r);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find((dir / "nothing").string()) != std::string::npos);
    }
}

TEST_CASE("evaluate: constant logits, memorisation, reproducibility") {
    const auto data = generate(tiny_spec());
    StagedModel<double> constant(tiny_cnn());
    for (auto& p : constant.parameters()) {
        auto v = p.value;
        std::fill(v.mutable_data().begin(), v.mutable_data().end(), 0.0);
        if (p.name == "head.linear.bias") v.mutable_data()[1] = 1.0;
    }
    const double freq1 = static_cast<double>(std::count(data.test.labels.begin(), data.test.labels.end(), 1u)) /
                         static_cast<double>(data.test.size());
    CHECK(evaluate(constant, data.test).accuracy == freq1);

    auto r = tiny_run(25);
    r.student = tiny_cnn();
    const auto trained = train_supervised<double>(tiny_cnn(), data, r);
    CHECK(evaluate(trained.model, data.train).accuracy == 1.0);
    const auto e1 = evaluate(trained.model, data.test), e2 = evaluate(trained.model, data.test);
    CHECK(e1.accuracy == e2.accuracy);
    CHECK(e1.mean_loss == e2.mean_loss);
}

TEST_CASE("ablate: counting, single-value reduction and summary means") {
    const auto data = generate(tiny_spec(4));
    const StagedModel<double> teacher(tiny_vit(7));
    auto base = tiny_run(1);
    const auto rows = ablate<double>(base, teacher, data, AblationAxis::branches,
                                     default_axis_values(AblationAxis::branches), {0});
    CHECK(rows.rows.size() == 8);
    CHECK(rows.rows.front().setting == "none");

    const auto single = ablate<double>(base, teacher, data, AblationAxis::gamma, {"1.0"}, {3});
    REQUIRE(single.rows.size() == 1);
    auto direct = base;
    direct.loss.gamma = 1.0;
    direct.seed = 3;
    direct.student.seed = 3;
    CHECK(single.rows[0].accuracy == distill_student<double>(teacher, data, direct).metrics.back().test_acc);

    std::vector<AblationRow> hand{{"a", 0, 0.5}, {"a", 1, 0.7}, {"b", 0, 0.2}, {"a", 2, 0.9}};
    const auto s = summarize(hand);
    REQUIRE(s.size() == 2);
    CHECK(std::abs(s[0].mean - (0.5 + 0.7 + 0.9) / 3.0) <= 1e-12);
    CHECK(std::abs(s[0].stddev - 0.2) <= 1e-12);
    CHECK(s[1].runs == 1);
    CHECK(s[1].stddev == 0.0);

    AblationResult res;
    res.rows = {{"1,4", 0, 0.5}};
    res.summary = summarize(res.rows);
    CHECK(res.rows_csv() == "setting,seed,accuracy\n\"1,4\",0,0.500000\n");
    CHECK_THROWS_AS(apply_axis_value(base, AblationAxis::gamma, "abc"), ConfigError);
    CHECK(apply_axis_value(base, AblationAxis::clip, "3").clip_norm == 3.0);
    CHECK(apply_axis_value(base, AblationAxis::branches, "none").branches.empty());
}

}  // TEST_SUITE
