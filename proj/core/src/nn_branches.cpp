#include <algorithm>
#include <set>

#include "ofakd/nn.hpp"

namespace ofakd {

namespace detail {

template <typename T>
class BranchImpl {
public:
    virtual ~BranchImpl() = default;
    virtual Tensor<T> forward(const Tensor<T>& x) const = 0;
    virtual void collect(const std::string& prefix, ParameterList<T>& out) const = 0;
};

}  // namespace detail

namespace {

template <typename T>
class ConvBranch final : public detail::BranchImpl<T> {
public:
    ConvBranch(const ModelConfig& c, std::size_t stage, Rng& rng) : channels_(c.widths[stage - 1]) {
        const std::size_t width = c.widths[kStageCount - 1];
        depthwise_ = Conv2d<T>::create(channels_, channels_, 3, {1, 1, channels_}, false, rng);
        pointwise_ = Conv2d<T>::create(channels_, width, 1, {1, 0, 1}, false, rng);
        norm_ = GroupNorm<T>::create(width);
        classifier_ = Linear<T>::create(width, c.class_count, rng);
    }

    Tensor<T> forward(const Tensor<T>& x) const override {
        if (x.rank() != 4 || x.dim(1) != channels_) {
            throw DimensionError("exit branch expects [B x " + std::to_string(channels_) +
                                 " x H x W], got " + to_string(x.shape()));
        }
        return classifier_(global_avg_pool(relu(norm_(pointwise_(depthwise_(x))))));
    }

    void collect(const std::string& prefix, ParameterList<T>& out) const override {
        depthwise_.collect(prefix + ".depthwise", out);
        pointwise_.collect(prefix + ".pointwise", out);
        norm_.collect(prefix + ".norm", out);
        classifier_.collect(prefix + ".linear", out);
    }

private:
    std::size_t channels_;
    Conv2d<T> depthwise_;
    Conv2d<T> pointwise_;
    GroupNorm<T> norm_;
    Linear<T> classifier_;
};

template <typename T>
class TokenBranch final : public detail::BranchImpl<T> {
public:
    TokenBranch(const ModelConfig& c, std::size_t /*stage*/, Rng& rng) : dim_(c.embed_dim) {
        const std::size_t heads = (c.heads > 0 && dim_ % c.heads == 0) ? c.heads : 1;
        block_ = TransformerBlock<T>::create(dim_, heads, dim_ * c.mlp_ratio, rng);
        norm_ = LayerNorm<T>::create(dim_);
        classifier_ = Linear<T>::create(dim_, c.class_count, rng);
    }

    Tensor<T> forward(const Tensor<T>& x) const override {
        if (x.rank() != 3 || x.dim(2) != dim_) {
            throw DimensionError("exit branch expects [B x N x " + std::to_string(dim_) + "], got " +
                                 to_string(x.shape()));
        }
        return classifier_(mean(norm_(block_(x)), std::size_t{1}));
    }

    void collect(const std::string& prefix, ParameterList<T>& out) const override {
        block_.collect(prefix + ".block", out);
        norm_.collect(prefix + ".norm", out);
        classifier_.collect(prefix + ".linear", out);
    }

private:
    std::size_t dim_;
    TransformerBlock<T> block_;
    LayerNorm<T> norm_;
    Linear<T> classifier_;
};

std::string branch_prefix(std::size_t stage) { return "branch" + std::to_string(stage); }

}  // namespace

template <typename T>
ExitBranch<T>::ExitBranch(const ModelConfig& config, std::size_t stage) : stage_(stage) {
    if (stage < 1 || stage > kStageCount) {
        throw DomainError("exit branch stage " + std::to_string(stage) + " outside 1..4");
    }
    Rng rng = Rng::stream(config.seed, "branch", stage);
    if (config.family == Family::cnn) {
        impl_ = std::make_shared<ConvBranch<T>>(config, stage, rng);
    } else {
        impl_ = std::make_shared<TokenBranch<T>>(config, stage, rng);
    }
}

template <typename T>
Tensor<T> ExitBranch<T>::operator()(const Tensor<T>& stage_output) const {
    return impl_->forward(stage_output);
}

template <typename T>
void ExitBranch<T>::collect(ParameterList<T>& out) const {
    impl_->collect(branch_prefix(stage_), out);
}

template <typename T>
BranchedModel<T>::BranchedModel(StagedModel<T> backbone, std::vector<ExitBranch<T>> branches)
    : backbone_(std::move(backbone)), branches_(std::move(branches)) {
    std::set<std::size_t> seen;
    for (const auto& b : branches_) {
        if (!seen.insert(b.stage()).second) {
            throw ConfigError("exit branch already attached at stage " + std::to_string(b.stage()));
        }
    }
    std::sort(branches_.begin(), branches_.end(),
              [](const ExitBranch<T>& a, const ExitBranch<T>& b) { return a.stage() < b.stage(); });
}

template <typename T>
std::vector<std::size_t> BranchedModel<T>::branch_stages() const {
    std::vector<std::size_t> out;
    for (const auto& b : branches_) out.push_back(b.stage());
    return out;
}

template <typename T>
typename BranchedModel<T>::Outputs BranchedModel<T>::forward_exits(const Tensor<T>& images) const {
    auto trace = backbone_.trace(images);
    Outputs out;
    for (const auto& b : branches_) out.branch_logits.push_back(b(trace.stages[b.stage() - 1]));
    out.logits = std::move(trace.logits);
    return out;
}

template <typename T>
ParameterList<T> BranchedModel<T>::parameters() const {
    ParameterList<T> out = backbone_.parameters();
    for (const auto& b : branches_) b.collect(out);
    return out;
}

template <typename T>
std::size_t BranchedModel<T>::parameter_count() const {
    return count_parameters(parameters());
}

template <typename T>
BranchedModel<T> attach_branches(const BranchedModel<T>& model, const std::vector<std::size_t>& stages) {
    if (stages.empty()) throw ConfigError("attach_branches: empty stage set");
    std::vector<ExitBranch<T>> branches = model.branches();
    for (auto s : stages) branches.emplace_back(model.backbone().config(), s);
    return BranchedModel<T>(model.backbone(), std::move(branches));
}

template <typename T>
BranchedModel<T> attach_branches(const StagedModel<T>& model, const std::vector<std::size_t>& stages) {
    return attach_branches(BranchedModel<T>(model, {}), stages);
}

template <typename T>
StagedModel<T> strip_branches(const BranchedModel<T>& model) {
    return model.backbone();
}

#define OFAKD_INSTANTIATE(T)                                                                      \
    template class ExitBranch<T>;                                                                 \
    template class BranchedModel<T>;                                                              \
    template BranchedModel<T> attach_branches<T>(const StagedModel<T>&, const std::vector<std::size_t>&);   \
    template BranchedModel<T> attach_branches<T>(const BranchedModel<T>&, const std::vector<std::size_t>&); \
    template StagedModel<T> strip_branches<T>(const BranchedModel<T>&);

OFAKD_INSTANTIATE(float)
OFAKD_INSTANTIATE(double)
#undef OFAKD_INSTANTIATE

}  // namespace ofakd
