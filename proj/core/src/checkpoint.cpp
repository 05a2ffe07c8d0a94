#include "ofakd/checkpoint.hpp"

#include <fstream>

#include "ofakd/serialize.hpp"

namespace ofakd {

namespace {

constexpr const char* kManifest = "manifest.json";
constexpr const char* kFormat = "ofakd-checkpoint";

}  // namespace

template <typename T>
void save_checkpoint(const std::filesystem::path& dir, const StagedModel<T>& model, const nlohmann::json& extra) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw_io("cannot create checkpoint directory", dir.string());

    nlohmann::json params = nlohmann::json::array();
    for (const auto& p : model.parameters()) {
        const std::string file = p.name + ".oft";
        save_tensor(dir / file, p.value);
        params.push_back({{"name", p.name}, {"shape", p.value.shape()}, {"file", file}});
    }
    nlohmann::json manifest = extra.is_object() ? extra : nlohmann::json::object();
    manifest["format"] = kFormat;
    manifest["version"] = 1;
    manifest["dtype"] = dtype_of<T>() == DType::f32 ? "f32" : "f64";
    manifest["config"] = config_to_json(model.config());
    manifest["seed"] = model.config().seed;
    manifest["parameters"] = std::move(params);

    const auto path = dir / kManifest;
    std::ofstream os(path);
    if (!os) throw_io("cannot open for writing", path.string());
    os << manifest.dump(2) << '\n';
    if (!os) throw_io("write failed", path.string());
}

nlohmann::json read_checkpoint_manifest(const std::filesystem::path& dir) {
    const auto path = dir / kManifest;
    std::ifstream is(path);
    if (!is) throw_io("cannot open checkpoint manifest", path.string());
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
    if (manifest.value("format", std::string{}) != kFormat) {
        throw FormatError(path.string() + ": not a checkpoint manifest (format must be '" + kFormat + "')");
    }
    return manifest;
}

ModelConfig read_checkpoint_config(const std::filesystem::path& dir) {
    const auto manifest = read_checkpoint_manifest(dir);
    if (!manifest.contains("config")) throw FormatError((dir / kManifest).string() + ": missing config");
    return config_from_json(manifest["config"]);
}

template <typename T>
StagedModel<T> load_checkpoint(const std::filesystem::path& dir) {
    const auto manifest = read_checkpoint_manifest(dir);
    const auto manifest_path = (dir / kManifest).string();
    if (!manifest.contains("config") || !manifest.contains("parameters")) {
        throw FormatError(manifest_path + ": missing config or parameters");
    }
    StagedModel<T> model(config_from_json(manifest["config"]));
    auto params = model.parameters();
    const auto& listed = manifest["parameters"];
    if (listed.size() != params.size()) {
        throw FormatError(manifest_path + ": lists " + std::to_string(listed.size()) + " parameters, model has " +
                          std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i];
        const auto name = listed[i].value("name", std::string{});
        if (name != p.name) {
            throw FormatError(manifest_path + ": parameter " + std::to_string(i) + " is '" + name + "', expected '" +
                              p.name + "'");
        }
        const Tensor<T> stored = load_tensor<T>(dir / listed[i].value("file", name + ".oft"));
        if (stored.shape() != p.value.shape()) {
            throw FormatError(manifest_path + ": parameter '" + name + "' has shape " + to_string(stored.shape()) +
                              ", expected " + to_string(p.value.shape()));
        }
        std::copy(stored.data().begin(), stored.data().end(), p.value.mutable_data().begin());
    }
    return model;
}

template <typename T, typename U>
void copy_parameters(const ParameterList<T>& src, const ParameterList<U>& dst) {
    if (src.size() != dst.size()) {
        throw DimensionError("copy_parameters: " + std::to_string(src.size()) + " vs " + std::to_string(dst.size()) +
                             " parameters");
    }
    for (std::size_t i = 0; i < src.size(); ++i) {
        if (src[i].name != dst[i].name || src[i].value.shape() != dst[i].value.shape()) {
            throw DimensionError("copy_parameters: mismatch at '" + src[i].name + "' / '" + dst[i].name + "'");
        }
        Tensor<U> target = dst[i].value;
        auto out = target.mutable_data();
        auto in = src[i].value.data();
        for (std::size_t k = 0; k < in.size(); ++k) out[k] = static_cast<U>(in[k]);
    }
}

template void save_checkpoint<float>(const std::filesystem::path&, const StagedModel<float>&, const nlohmann::json&);
template void save_checkpoint<double>(const std::filesystem::path&, const StagedModel<double>&, const nlohmann::json&);
template StagedModel<float> load_checkpoint<float>(const std::filesystem::path&);
template StagedModel<double> load_checkpoint<double>(const std::filesystem::path&);
template void copy_parameters<float, float>(const ParameterList<float>&, const ParameterList<float>&);
template void copy_parameters<float, double>(const ParameterList<float>&, const ParameterList<double>&);
template void copy_parameters<double, float>(const ParameterList<double>&, const ParameterList<float>&);
template void copy_parameters<double, double>(const ParameterList<double>&, const ParameterList<double>&);

}  // namespace ofakd
