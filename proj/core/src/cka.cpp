#include "ofakd/cka.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <Eigen/Dense>

#include "ofakd/serialize.hpp"

namespace ofakd {

namespace {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const Matrix>;

ConstMap as_matrix(const Tensor<double>& t) {
    return ConstMap(t.data().data(), static_cast<Eigen::Index>(t.dim(0)), static_cast<Eigen::Index>(t.dim(1)));
}

void require_matrix(const Tensor<double>& t, const char* what) {
    if (!t.defined() || t.rank() != 2) {
        throw DimensionError(std::string(what) + ": expected a rank-2 tensor, got " +
                             (t.defined() ? to_string(t.shape()) : std::string("undefined")));
    }
}

Matrix centered(const Matrix& k) {
    const Eigen::VectorXd row_mean = k.rowwise().mean();
    const Eigen::RowVectorXd col_mean = k.colwise().mean();
    const double all_mean = k.mean();
    Matrix out = k;
    out.colwise() -= row_mean;
    out.rowwise() -= col_mean;
    out.array() += all_mean;
    return out;
}

double hsic_of(const Matrix& k, const Matrix& l) {
    const double n = static_cast<double>(k.rows());
    return centered(k).cwiseProduct(centered(l)).sum() / ((n - 1.0) * (n - 1.0));
}

Matrix gram_of(const ConstMap& x) { return x * x.transpose(); }

double cka_rows(const ConstMap& x, const ConstMap& y) {
    const Matrix k = gram_of(x);
    const Matrix l = gram_of(y);
    const double kk = hsic_of(k, k);
    const double ll = hsic_of(l, l);
    if (kk < kDegenerateHsic || ll < kDegenerateHsic) {
        throw DegenerateFeaturesError("cka: degenerate (constant) features, self-HSIC " +
                                      std::to_string(std::min(kk, ll)));
    }
    return hsic_of(k, l) / std::sqrt(kk * ll);
}

void check_pair(const Tensor<double>& x, const Tensor<double>& y) {
    require_matrix(x, "cka");
    require_matrix(y, "cka");
    if (x.dim(0) != y.dim(0)) {
        throw DimensionError("cka: sample counts differ (" + std::to_string(x.dim(0)) + " vs " +
                             std::to_string(y.dim(0)) + ")");
    }
}

}  // namespace

Tensor<double> gram(const Tensor<double>& x) {
    require_matrix(x, "gram");
    if (x.dim(0) < 2) throw DimensionError("gram: need at least 2 samples");
    const Matrix g = gram_of(as_matrix(x));
    return Tensor<double>({x.dim(0), x.dim(0)}, std::vector<double>(g.data(), g.data() + g.size()));
}

double hsic(const Tensor<double>& k, const Tensor<double>& l) {
    require_matrix(k, "hsic");
    require_matrix(l, "hsic");
    if (k.dim(0) != k.dim(1) || k.shape() != l.shape()) {
        throw DimensionError("hsic: expected two equal square matrices, got " +
                             to_string(k.shape()) + " and " + to_string(l.shape()));
    }
    if (k.dim(0) < 2) throw DimensionError("hsic: need n >= 2");
    return hsic_of(as_matrix(k), as_matrix(l));
}

double cka(const Tensor<double>& x, const Tensor<double>& y) {
    check_pair(x, y);
    if (x.dim(0) < 2) throw DimensionError("cka: need at least 2 samples");
    return cka_rows(as_matrix(x), as_matrix(y));
}

double batched_cka(const Tensor<double>& x, const Tensor<double>& y, std::size_t batch_size) {
    check_pair(x, y);
    if (batch_size < kMinCkaSamples) {
        throw DomainError("batched_cka: batch_size " + std::to_string(batch_size) + " below minimum " +
                          std::to_string(kMinCkaSamples));
    }
    const std::size_t batches = x.dim(0) / batch_size;
    if (batches == 0) {
        throw DimensionError("batched_cka: stream of " + std::to_string(x.dim(0)) +
                             " samples exhausted before one batch of " + std::to_string(batch_size));
    }
    const auto b = static_cast<Eigen::Index>(batch_size);
    const ConstMap mx = as_matrix(x);
    const ConstMap my = as_matrix(y);
    double total = 0.0;
    for (std::size_t i = 0; i < batches; ++i) {
        const auto start = static_cast<Eigen::Index>(i) * b;
        const Matrix bx = mx.middleRows(start, b);
        const Matrix by = my.middleRows(start, b);
        total += cka_rows(ConstMap(bx.data(), bx.rows(), bx.cols()), ConstMap(by.data(), by.rows(), by.cols()));
    }
    return total / static_cast<double>(batches);
}

CkaMatrix heatmap(const std::vector<FeatureRecord>& a, const std::vector<FeatureRecord>& b,
                  std::size_t batch_size) {
    if (a.empty() || b.empty()) throw DimensionError("heatmap: empty feature list");
    const std::size_t n = a.front().matrix.dim(0);
    for (const auto* list : {&a, &b}) {
        for (const auto& r : *list) {
            require_matrix(r.matrix, "heatmap");
            if (r.matrix.dim(0) != n) {
                throw DimensionError("heatmap: layer '" + r.label + "' has " + std::to_string(r.matrix.dim(0)) +
                                     " samples, expected " + std::to_string(n));
            }
        }
    }
    CkaMatrix m;
    for (const auto& r : a) m.row_labels.push_back(r.label);
    for (const auto& r : b) m.col_labels.push_back(r.label);
    for (const auto& ra : a) {
        for (const auto& rb : b) {
            m.values.push_back(batch_size > 0 ? batched_cka(ra.matrix, rb.matrix, batch_size)
                                              : cka(ra.matrix, rb.matrix));
        }
    }
    return m;
}

std::string CkaMatrix::to_csv() const {
    std::ostringstream os;
    os << "layer";
    for (const auto& c : col_labels) os << ',' << c;
    os << '\n';
    char cell[32];
    for (std::size_t i = 0; i < rows(); ++i) {
        os << row_labels[i];
        for (std::size_t j = 0; j < cols(); ++j) {
            std::snprintf(cell, sizeof cell, "%.6f", at(i, j));
            os << ',' << cell;
        }
        os << '\n';
    }
    return os.str();
}

nlohmann::json CkaMatrix::summary() const {
    double diag = 0.0;
    double off = 0.0;
    std::size_t n_diag = 0;
    std::size_t n_off = 0;
    nlohmann::json matched = nlohmann::json::array();
    for (std::size_t i = 0; i < rows(); ++i) {
        for (std::size_t j = 0; j < cols(); ++j) {
            if (i == j) {
                diag += at(i, j);
                ++n_diag;
                matched.push_back({{"row", row_labels[i]}, {"col", col_labels[j]}, {"cka", at(i, j)}});
            } else {
                off += at(i, j);
                ++n_off;
            }
        }
    }
    return {{"rows", row_labels},
            {"cols", col_labels},
            {"mean_diagonal", n_diag ? diag / static_cast<double>(n_diag) : 0.0},
            {"mean_off_diagonal", n_off ? off / static_cast<double>(n_off) : 0.0},
            {"matched_stages", matched}};
}

void save_feature_dir(const std::filesystem::path& dir, const FeatureDump& dump) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw_io("cannot create directory", dir.string());
    nlohmann::json manifest = dump.extra.is_object() ? dump.extra : nlohmann::json::object();
    manifest["layers"] = nlohmann::json::array();
    for (const auto& r : dump.layers) {
        manifest["layers"].push_back(r.label);
        save_tensor(dir / (r.label + ".oft"), r.matrix);
    }
    manifest["sample_indices"] = dump.sample_indices;
    std::ofstream os(dir / "manifest.json");
    if (!os) throw_io("cannot open for writing", (dir / "manifest.json").string());
    os << manifest.dump(2) << '\n';
}

FeatureDump load_feature_dir(const std::filesystem::path& dir) {
    const auto path = dir / "manifest.json";
    std::ifstream is(path);
    if (!is) throw_io("cannot open feature manifest", path.string());
    FeatureDump dump;
    try {
        nlohmann::json manifest = nlohmann::json::parse(is);
        for (const auto& label : manifest.at("layers")) {
            const auto name = label.get<std::string>();
            dump.layers.push_back({name, load_tensor<double>(dir / (name + ".oft"))});
        }
        dump.sample_indices = manifest.value("sample_indices", std::vector<std::size_t>{});
        manifest.erase("layers");
        manifest.erase("sample_indices");
        dump.extra = std::move(manifest);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
    return dump;
}

}  // namespace ofakd
