#include <algorithm>

#include "ofakd/nn.hpp"

namespace ofakd {

std::string to_string(Family family) {
    switch (family) {
        case Family::cnn: return "cnn";
        case Family::vit: return "vit";
        case Family::mixer: return "mixer";
    }
    return "?";
}

Family family_from_string(std::string_view name) {
    if (name == "cnn") return Family::cnn;
    if (name == "vit") return Family::vit;
    if (name == "mixer") return Family::mixer;
    throw ConfigError("unknown model family '" + std::string(name) + "' (expected cnn, vit or mixer)");
}

namespace {

void require_positive(std::size_t v, const char* field) {
    if (v == 0) throw ConfigError(std::string("model config: ") + field + " must be positive");
}

}  // namespace

void ModelConfig::validate() const {
    require_positive(class_count, "class_count");
    require_positive(channels, "channels");
    require_positive(height, "height");
    require_positive(width, "width");
    if (class_count < 2) throw ConfigError("model config: class_count must be at least 2");
    if (family == Family::cnn) {
        for (auto w : widths) require_positive(w, "widths");
        if (height < 8 || width < 8) {
            throw ConfigError("model config: cnn input must be at least 8x8 for three stride-2 stages");
        }
        return;
    }
    require_positive(embed_dim, "embed_dim");
    require_positive(patch_size, "patch_size");
    require_positive(mlp_ratio, "mlp_ratio");
    if (depth < kStageCount) {
        throw ConfigError("model config: depth " + std::to_string(depth) + " cannot fill four stages");
    }
    if (height % patch_size != 0 || width % patch_size != 0) {
        throw ConfigError("model config: input " + std::to_string(height) + "x" + std::to_string(width) +
                          " not divisible by patch_size " + std::to_string(patch_size));
    }
    if (family == Family::vit) {
        require_positive(heads, "heads");
        if (embed_dim % heads != 0) {
            throw ConfigError("model config: embed_dim " + std::to_string(embed_dim) +
                              " not divisible by heads " + std::to_string(heads));
        }
    } else {
        require_positive(token_hidden, "token_hidden");
        if (class_token) throw ConfigError("model config: class_token is only supported for vit");
    }
}

std::size_t ModelConfig::token_count() const {
    return (height / patch_size) * (width / patch_size);
}

nlohmann::json config_to_json(const ModelConfig& c) {
    return {{"family", to_string(c.family)},
            {"widths", c.widths},
            {"stage_depth", c.stage_depth},
            {"depth", c.depth},
            {"embed_dim", c.embed_dim},
            {"heads", c.heads},
            {"mlp_ratio", c.mlp_ratio},
            {"token_hidden", c.token_hidden},
            {"patch_size", c.patch_size},
            {"class_token", c.class_token},
            {"class_count", c.class_count},
            {"channels", c.channels},
            {"height", c.height},
            {"width", c.width},
            {"seed", c.seed}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    try {
        c.family = family_from_string(j.at("family").get<std::string>());
        c.widths = j.value("widths", c.widths);
        c.stage_depth = j.value("stage_depth", c.stage_depth);
        c.depth = j.value("depth", c.depth);
        c.embed_dim = j.value("embed_dim", c.embed_dim);
        c.heads = j.value("heads", c.heads);
        c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
        c.token_hidden = j.value("token_hidden", c.token_hidden);
        c.patch_size = j.value("patch_size", c.patch_size);
        c.class_token = j.value("class_token", c.class_token);
        c.class_count = j.value("class_count", c.class_count);
        c.channels = j.value("channels", c.channels);
        c.height = j.value("height", c.height);
        c.width = j.value("width", c.width);
        c.seed = j.value("seed", c.seed);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("model config: ") + e.what());
    }
    c.validate();
    return c;
}

std::array<std::size_t, kStageCount> split_depth(std::size_t depth) {
    std::array<std::size_t, kStageCount> out{};
    for (std::size_t s = 0; s < kStageCount; ++s) {
        out[s] = depth / kStageCount + (s < depth % kStageCount ? 1 : 0);
    }
    return out;
}

namespace detail {

template <typename T>
class Backbone {
public:
    virtual ~Backbone() = default;
    virtual Tensor<T> run_stage(std::size_t stage, const Tensor<T>& input) const = 0;
    virtual Tensor<T> head(const Tensor<T>& features) const = 0;
    virtual void collect(ParameterList<T>& out) const = 0;
    virtual std::array<std::size_t, kStageCount> stage_blocks() const = 0;
};

}  // namespace detail

namespace {

std::string stage_prefix(std::size_t s) { return "stage" + std::to_string(s + 1); }

template <typename T>
class CnnBackbone final : public detail::Backbone<T> {
public:
    explicit CnnBackbone(const ModelConfig& c) {
        Rng rng = Rng::stream(c.seed, "init");
        std::size_t in = c.channels;
        for (std::size_t s = 0; s < kStageCount; ++s) {
            const std::size_t out = c.widths[s];
            Stage stage;
            stage.transition = ConvUnit<T>::create(in, out, s == 0 ? 1 : 2, rng);
            for (std::size_t b = 0; b < c.stage_depth; ++b) {
                stage.blocks.push_back(ResidualBlock<T>::create(out, rng));
            }
            stages_[s] = std::move(stage);
            in = out;
        }
        classifier_ = Linear<T>::create(in, c.class_count, rng);
    }

    Tensor<T> run_stage(std::size_t stage, const Tensor<T>& input) const override {
        const Stage& st = stages_[stage - 1];
        Tensor<T> x = st.transition(input);
        for (const auto& block : st.blocks) x = block(x);
        return x;
    }

    Tensor<T> head(const Tensor<T>& features) const override {
        return classifier_(global_avg_pool(features));
    }

    void collect(ParameterList<T>& out) const override {
        for (std::size_t s = 0; s < kStageCount; ++s) {
            const std::string p = stage_prefix(s);
            stages_[s].transition.collect(p + ".transition", out);
            for (std::size_t b = 0; b < stages_[s].blocks.size(); ++b) {
                stages_[s].blocks[b].collect(p + ".block" + std::to_string(b), out);
            }
        }
        classifier_.collect("head.linear", out);
    }

    std::array<std::size_t, kStageCount> stage_blocks() const override {
        std::array<std::size_t, kStageCount> out{};
        for (std::size_t s = 0; s < kStageCount; ++s) out[s] = 1 + stages_[s].blocks.size();
        return out;
    }

private:
    struct Stage {
        ConvUnit<T> transition;
        std::vector<ResidualBlock<T>> blocks;
    };
    std::array<Stage, kStageCount> stages_;
    Linear<T> classifier_;
};

// Shared skeleton of the two token models: patch embedding in front of
// stage 1, block lists per stage, final norm + pooled linear head.
template <typename T, typename Block>
class TokenBackbone final : public detail::Backbone<T> {
public:
    explicit TokenBackbone(const ModelConfig& c) : config_(c) {
        Rng rng = Rng::stream(c.seed, "init");
        const std::size_t d = c.embed_dim;
        const std::size_t n = c.token_count();
        embed_ = Linear<T>::create(c.channels * c.patch_size * c.patch_size, d, rng);
        if constexpr (std::is_same_v<Block, TransformerBlock<T>>) {
            const std::size_t slots = n + (c.class_token ? 1 : 0);
            position_ = trunc_normal_param<T>({slots, d}, 0.02, rng);
            if (c.class_token) class_token_ = trunc_normal_param<T>({1, d}, 0.02, rng);
        }
        const auto counts = split_depth(c.depth);
        for (std::size_t s = 0; s < kStageCount; ++s) {
            for (std::size_t b = 0; b < counts[s]; ++b) {
                if constexpr (std::is_same_v<Block, TransformerBlock<T>>) {
                    stages_[s].push_back(TransformerBlock<T>::create(d, c.heads, d * c.mlp_ratio, rng));
                } else {
                    stages_[s].push_back(MixerBlock<T>::create(n, d, c.token_hidden, d * c.mlp_ratio, rng));
                }
            }
        }
        norm_ = LayerNorm<T>::create(d);
        classifier_ = Linear<T>::create(d, c.class_count, rng);
    }

    Tensor<T> run_stage(std::size_t stage, const Tensor<T>& input) const override {
        Tensor<T> x = stage == 1 ? embed(input) : input;
        for (const auto& block : stages_[stage - 1]) x = block(x);
        return x;
    }

    Tensor<T> head(const Tensor<T>& features) const override {
        Tensor<T> x = norm_(features);
        if (config_.class_token) {
            x = reshape(narrow(x, 1, 0, 1), {x.dim(0), x.dim(2)});
        } else {
            x = mean(x, std::size_t{1});
        }
        return classifier_(x);
    }

    void collect(ParameterList<T>& out) const override {
        embed_.collect("embed.patch", out);
        if (position_.defined()) out.push_back({"embed.position", position_});
        if (class_token_.defined()) out.push_back({"embed.class_token", class_token_});
        for (std::size_t s = 0; s < kStageCount; ++s) {
            for (std::size_t b = 0; b < stages_[s].size(); ++b) {
                stages_[s][b].collect(stage_prefix(s) + ".block" + std::to_string(b), out);
            }
        }
        norm_.collect("head.norm", out);
        classifier_.collect("head.linear", out);
    }

    std::array<std::size_t, kStageCount> stage_blocks() const override {
        std::array<std::size_t, kStageCount> out{};
        for (std::size_t s = 0; s < kStageCount; ++s) out[s] = stages_[s].size();
        return out;
    }

private:
    Tensor<T> embed(const Tensor<T>& images) const {
        Tensor<T> x = embed_(patchify(images, config_.patch_size));
        if (class_token_.defined()) {
            const std::size_t b = images.dim(0);
            // Broadcast the token over the batch by adding it to zeros.
            Tensor<T> cls = add(Tensor<T>::zeros({b, 1, config_.embed_dim}), class_token_);
            x = concat<T>({cls, x}, 1);
        }
        if (position_.defined()) x = add(x, position_);
        return x;
    }

    ModelConfig config_;
    Linear<T> embed_;
    Tensor<T> position_;
    Tensor<T> class_token_;
    std::array<std::vector<Block>, kStageCount> stages_;
    LayerNorm<T> norm_;
    Linear<T> classifier_;
};

template <typename T>
std::shared_ptr<const detail::Backbone<T>> make_backbone(const ModelConfig& c) {
    switch (c.family) {
        case Family::cnn: return std::make_shared<CnnBackbone<T>>(c);
        case Family::vit: return std::make_shared<TokenBackbone<T, TransformerBlock<T>>>(c);
        case Family::mixer: return std::make_shared<TokenBackbone<T, MixerBlock<T>>>(c);
    }
    throw ConfigError("unknown model family");
}

void check_stage(std::size_t stage) {
    if (stage < 1 || stage > kStageCount) {
        throw DomainError("stage index " + std::to_string(stage) + " outside 1..4");
    }
}

}  // namespace

template <typename T>
StagedModel<T>::StagedModel(const ModelConfig& config) : config_(config) {
    config_.validate();
    backbone_ = make_backbone<T>(config_);
}

template <typename T>
void StagedModel<T>::check_images(const Tensor<T>& images) const {
    const Shape expected{config_.channels, config_.height, config_.width};
    if (images.rank() != 4 || !std::equal(expected.begin(), expected.end(), images.shape().begin() + 1)) {
        throw DimensionError("input geometry mismatch: got " + to_string(images.shape()) +
                             ", expected [B x " + std::to_string(config_.channels) + " x " +
                             std::to_string(config_.height) + " x " + std::to_string(config_.width) + "]");
    }
}

template <typename T>
Tensor<T> StagedModel<T>::forward(const Tensor<T>& images) const {
    return head(stage_features(images, kStageCount));
}

template <typename T>
Tensor<T> StagedModel<T>::stage_features(const Tensor<T>& images, std::size_t stage) const {
    check_stage(stage);
    check_images(images);
    Tensor<T> x = images;
    for (std::size_t s = 1; s <= stage; ++s) x = backbone_->run_stage(s, x);
    return x;
}

template <typename T>
Tensor<T> StagedModel<T>::run_stage(std::size_t stage, const Tensor<T>& input) const {
    check_stage(stage);
    if (stage == 1) check_images(input);
    return backbone_->run_stage(stage, input);
}

template <typename T>
Tensor<T> StagedModel<T>::head(const Tensor<T>& stage4) const {
    return backbone_->head(stage4);
}

template <typename T>
typename StagedModel<T>::Trace StagedModel<T>::trace(const Tensor<T>& images) const {
    check_images(images);
    Trace t;
    Tensor<T> x = images;
    for (std::size_t s = 1; s <= kStageCount; ++s) {
        x = backbone_->run_stage(s, x);
        t.stages[s - 1] = x;
    }
    t.logits = backbone_->head(x);
    return t;
}

template <typename T>
Tensor<T> StagedModel<T>::flatten_features(const Tensor<T>& stage_output) const {
    Tensor<T> x = stage_output;
    if (config_.class_token) x = narrow(x, 1, 1, x.dim(1) - 1);
    const std::size_t b = x.dim(0);
    return reshape(x, {b, x.numel() / b});
}

template <typename T>
Shape StagedModel<T>::feature_shape(std::size_t stage, std::size_t batch) const {
    check_stage(stage);
    if (config_.family == Family::cnn) {
        std::size_t h = config_.height;
        std::size_t w = config_.width;
        for (std::size_t s = 2; s <= stage; ++s) {
            h = (h - 1) / 2 + 1;
            w = (w - 1) / 2 + 1;
        }
        return {batch, config_.widths[stage - 1], h, w};
    }
    return {batch, config_.token_count() + (config_.class_token ? 1 : 0), config_.embed_dim};
}

template <typename T>
ParameterList<T> StagedModel<T>::parameters() const {
    ParameterList<T> out;
    backbone_->collect(out);
    return out;
}

template <typename T>
std::size_t StagedModel<T>::parameter_count() const {
    return count_parameters(parameters());
}

template <typename T>
std::array<std::size_t, kStageCount> StagedModel<T>::stage_blocks() const {
    return backbone_->stage_blocks();
}

template class StagedModel<float>;
template class StagedModel<double>;

}  // namespace ofakd
