#include "ofakd/ablate.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

namespace ofakd {

std::string to_string(AblationAxis axis) {
    switch (axis) {
        case AblationAxis::branches: return "branches";
        case AblationAxis::gamma: return "gamma";
        case AblationAxis::scale: return "scale";
        case AblationAxis::clip: return "clip";
    }
    return "?";
}

AblationAxis ablation_axis_from_string(std::string_view name) {
    if (name == "branches") return AblationAxis::branches;
    if (name == "gamma") return AblationAxis::gamma;
    if (name == "scale") return AblationAxis::scale;
    if (name == "clip") return AblationAxis::clip;
    throw ConfigError("unknown ablation axis '" + std::string(name) + "' (expected branches, gamma, scale or clip)");
}

std::vector<std::string> default_axis_values(AblationAxis axis) {
    switch (axis) {
        case AblationAxis::branches: return {"none", "1", "2", "3", "4", "1,4", "1,2,4", "1,2,3,4"};
        case AblationAxis::gamma: return {"1.0", "1.1", "1.2", "1.3", "1.4", "1.5"};
        case AblationAxis::scale: return {"0.5", "0.8", "1.0", "1.2", "1.4", "1.6"};
        case AblationAxis::clip: return {"1", "3", "4", "5", "6", "7"};
    }
    return {};
}

namespace {

double parse_number(const std::string& value, AblationAxis axis) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(value, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != value.size() || value.empty()) {
        throw ConfigError(to_string(axis) + " value '" + value + "' is not a number");
    }
    return v;
}

std::vector<std::size_t> parse_stages(const std::string& value) {
    std::vector<std::size_t> out;
    if (value == "none" || value.empty()) return out;
    std::stringstream ss(value);
    std::string part;
    while (std::getline(ss, part, ',')) {
        if (part.size() != 1 || part[0] < '1' || part[0] > '4') {
            throw ConfigError("branch set '" + value + "' must list stages 1..4 separated by commas");
        }
        out.push_back(static_cast<std::size_t>(part[0] - '0'));
    }
    return out;
}

}  // namespace

RunManifest apply_axis_value(const RunManifest& base, AblationAxis axis, const std::string& value) {
    RunManifest m = base;
    switch (axis) {
        case AblationAxis::branches: m.branches = parse_stages(value); break;
        case AblationAxis::gamma: m.loss.gamma = parse_number(value, axis); break;
        case AblationAxis::scale: m.loss.scale = parse_number(value, axis); break;
        case AblationAxis::clip: m.clip_norm = parse_number(value, axis); break;
    }
    m.validate();
    return m;
}

std::vector<AblationSummary> summarize(const std::vector<AblationRow>& rows) {
    std::vector<AblationSummary> out;
    std::vector<std::vector<double>> groups;
    for (const auto& r : rows) {
        std::size_t k = 0;
        while (k < out.size() && out[k].setting != r.setting) ++k;
        if (k == out.size()) {
            out.push_back({r.setting, 0, 0.0, 0.0});
            groups.emplace_back();
        }
        groups[k].push_back(r.accuracy);
    }
    for (std::size_t k = 0; k < out.size(); ++k) {
        const auto& g = groups[k];
        double sum = 0.0;
        for (double v : g) sum += v;
        const double mean = sum / static_cast<double>(g.size());
        double sq = 0.0;
        for (double v : g) sq += (v - mean) * (v - mean);
        out[k].runs = g.size();
        out[k].mean = mean;
        out[k].stddev = g.size() > 1 ? std::sqrt(sq / static_cast<double>(g.size() - 1)) : 0.0;
    }
    return out;
}

namespace {

// Settings such as "1,2,4" contain commas, so they are quoted.
std::string csv_field(const std::string& s) {
    return s.find(',') == std::string::npos ? s : "\"" + s + "\"";
}

std::string fixed(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

}  // namespace

std::string AblationResult::rows_csv() const {
    std::string out = "setting,seed,accuracy\n";
    for (const auto& r : rows) out += csv_field(r.setting) + "," + std::to_string(r.seed) + "," + fixed(r.accuracy) + "\n";
    return out;
}

std::string AblationResult::summary_csv() const {
    std::string out = "setting,runs,mean,std\n";
    for (const auto& s : summary) {
        out += csv_field(s.setting) + "," + std::to_string(s.runs) + "," + fixed(s.mean) + "," + fixed(s.stddev) + "\n";
    }
    return out;
}

nlohmann::json AblationResult::to_json() const {
    nlohmann::json j{{"axis", to_string(axis)}, {"rows", nlohmann::json::array()}, {"summary", nlohmann::json::array()}};
    for (const auto& r : rows) j["rows"].push_back({{"setting", r.setting}, {"seed", r.seed}, {"accuracy", r.accuracy}});
    for (const auto& s : summary) {
        j["summary"].push_back({{"setting", s.setting}, {"runs", s.runs}, {"mean", s.mean}, {"std", s.stddev}});
    }
    return j;
}

template <typename T>
AblationResult ablate(const RunManifest& base, const StagedModel<T>& teacher, const DatasetPair& data,
                      AblationAxis axis, const std::vector<std::string>& values,
                      const std::vector<std::uint64_t>& seeds) {
    if (seeds.empty()) throw ConfigError("ablate: no seeds given");
    const auto settings = values.empty() ? default_axis_values(axis) : values;
    AblationResult result;
    result.axis = axis;
    for (const auto& value : settings) {
        const RunManifest configured = apply_axis_value(base, axis, value);
        for (auto seed : seeds) {
            RunManifest run = configured;
            run.seed = seed;
            run.student.seed = seed;
            const auto trained = distill_student<T>(teacher, data, run);
            result.rows.push_back({value, seed, trained.metrics.back().test_acc});
        }
    }
    result.summary = summarize(result.rows);
    return result;
}

template AblationResult ablate<float>(const RunManifest&, const StagedModel<float>&, const DatasetPair&,
                                      AblationAxis, const std::vector<std::string>&,
                                      const std::vector<std::uint64_t>&);
template AblationResult ablate<double>(const RunManifest&, const StagedModel<double>&, const DatasetPair&,
                                       AblationAxis, const std::vector<std::string>&,
                                       const std::vector<std::uint64_t>&);

}  // namespace ofakd
