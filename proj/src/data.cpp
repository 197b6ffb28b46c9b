#include "sslab/data.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "sslab/util.hpp"

namespace sslab {

std::size_t Batch::n_labeled() const {
    std::size_t c = 0;
    for (bool m : labeled_mask)
        if (m) ++c;
    return c;
}

void Batch::validate(std::size_t n_classes) const {
    if (inputs.shape.size() != 2 || inputs.shape[0] != labels.size() ||
        labels.size() != labeled_mask.size())
        throw ShapeError("batch: inputs " + inputs.shape_str() + " vs " +
                         std::to_string(labels.size()) + " labels");
    for (std::size_t i = 0; i < labels.size(); ++i) {
        bool valid = labels[i] >= 0 && labels[i] < static_cast<int>(n_classes);
        if (valid != labeled_mask[i])
            throw UsageError("batch: labeled mask disagrees with label at row " +
                             std::to_string(i));
    }
}

namespace {

struct RawPoints {
    Tensor xy;
    std::vector<int> labels;
};

RawPoints draw_two_moons(std::size_t n, double noise, std::mt19937_64& rng) {
    RawPoints out;
    out.xy = Tensor({n, 2});
    out.labels.resize(n);
    std::uniform_real_distribution<double> angle(0.0, M_PI);
    std::normal_distribution<double> jitter(0.0, 1.0);
    std::size_t n0 = n / 2;
    for (std::size_t i = 0; i < n; ++i) {
        double phi = angle(rng);
        double x, y;
        if (i < n0) {
            x = std::cos(phi);
            y = std::sin(phi);
            out.labels[i] = 0;
        } else {
            x = 1.0 - std::cos(phi);
            y = 0.5 - std::sin(phi);
            out.labels[i] = 1;
        }
        out.xy.at(i, 0) = x + noise * jitter(rng);
        out.xy.at(i, 1) = y + noise * jitter(rng);
    }
    return out;
}

RawPoints draw_rings(std::size_t n, double noise, std::mt19937_64& rng) {
    RawPoints out;
    out.xy = Tensor({n, 2});
    out.labels.resize(n);
    std::uniform_real_distribution<double> angle(0.0, 2.0 * M_PI);
    std::normal_distribution<double> jitter(0.0, 1.0);
    std::size_t n0 = n / 2;
    for (std::size_t i = 0; i < n; ++i) {
        double phi = angle(rng);
        double radius = i < n0 ? 1.0 : 2.0;
        out.labels[i] = i < n0 ? 0 : 1;
        out.xy.at(i, 0) = radius * std::cos(phi) + noise * jitter(rng);
        out.xy.at(i, 1) = radius * std::sin(phi) + noise * jitter(rng);
    }
    return out;
}

SslDataset split_ssl(RawPoints train, RawPoints test, std::size_t n_labeled,
                     std::mt19937_64& rng) {
    std::size_t n = train.labels.size();
    if (n_labeled % 2 != 0 || n_labeled < 2 || n_labeled > n)
        throw UsageError("dataset: n_labeled must be even, >= 2 and <= n");

    // stratified pick: n_labeled/2 per class
    std::vector<std::size_t> class0, class1;
    for (std::size_t i = 0; i < n; ++i)
        (train.labels[i] == 0 ? class0 : class1).push_back(i);
    std::shuffle(class0.begin(), class0.end(), rng);
    std::shuffle(class1.begin(), class1.end(), rng);
    std::vector<char> is_labeled(n, 0);
    for (std::size_t c = 0; c < n_labeled / 2; ++c) {
        if (c >= class0.size() || c >= class1.size())
            throw UsageError("dataset: not enough points in one class for the labeled split");
        is_labeled[class0[c]] = 1;
        is_labeled[class1[c]] = 1;
    }

    SslDataset data;
    data.n_classes = 2;
    data.dim = 2;
    auto take = [&](bool labeled_rows) {
        Batch b;
        std::vector<std::size_t> rows;
        for (std::size_t i = 0; i < n; ++i)
            if (static_cast<bool>(is_labeled[i]) == labeled_rows) rows.push_back(i);
        b.inputs = Tensor({rows.size(), 2});
        for (std::size_t k = 0; k < rows.size(); ++k) {
            b.inputs.at(k, 0) = train.xy.at(rows[k], 0);
            b.inputs.at(k, 1) = train.xy.at(rows[k], 1);
            b.labels.push_back(labeled_rows ? train.labels[rows[k]] : -1);
            b.labeled_mask.push_back(labeled_rows);
        }
        return b;
    };
    data.labeled = take(true);
    data.unlabeled = take(false);

    data.test.inputs = std::move(test.xy);
    data.test.labels = std::move(test.labels);
    data.test.labeled_mask.assign(data.test.labels.size(), true);
    return data;
}

}  // namespace

SslDataset make_two_moons(std::size_t n, double noise_sigma, std::size_t n_labeled,
                          std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    RawPoints train = draw_two_moons(n, noise_sigma, rng);
    RawPoints test = draw_two_moons(n, noise_sigma, rng);
    return split_ssl(std::move(train), std::move(test), n_labeled, rng);
}

SslDataset make_rings(std::size_t n, double noise_sigma, std::size_t n_labeled,
                      std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    RawPoints train = draw_rings(n, noise_sigma, rng);
    RawPoints test = draw_rings(n, noise_sigma, rng);
    return split_ssl(std::move(train), std::move(test), n_labeled, rng);
}

ZcaTransform fit_zca(const Tensor& X, double epsilon) {
    if (X.shape.size() != 2) throw ShapeError("zca: expected a matrix, got " + X.shape_str());
    std::size_t n = X.shape[0], d = X.shape[1];
    if (n < d) throw UsageError("zca: need at least as many rows as features");
    if (epsilon <= 0.0) throw UsageError("zca: epsilon must be positive");

    ZcaTransform t;
    t.epsilon = epsilon;
    t.mean = Tensor({d});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) t.mean.data[j] += X.at(i, j);
    for (double& v : t.mean.data) v /= static_cast<double>(n);

    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(static_cast<long>(d), static_cast<long>(d));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t a = 0; a < d; ++a) {
            double xa = X.at(i, a) - t.mean.data[a];
            for (std::size_t b = 0; b < d; ++b)
                cov(static_cast<long>(a), static_cast<long>(b)) +=
                    xa * (X.at(i, b) - t.mean.data[b]);
        }
    cov /= static_cast<double>(n);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    Eigen::VectorXd scaled = (eig.eigenvalues().array() + epsilon).rsqrt();
    Eigen::MatrixXd W =
        eig.eigenvectors() * scaled.asDiagonal() * eig.eigenvectors().transpose();

    t.whitening = Tensor({d, d});
    for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = 0; b < d; ++b)
            t.whitening.at(a, b) = W(static_cast<long>(a), static_cast<long>(b));
    return t;
}

Tensor apply_zca(const ZcaTransform& t, const Tensor& X) {
    if (X.shape.size() != 2 || X.shape[1] != t.mean.numel())
        throw ShapeError("zca: input " + X.shape_str() + " vs transform dim " +
                         std::to_string(t.mean.numel()));
    std::size_t n = X.shape[0], d = X.shape[1];
    Tensor out({n, d});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t b = 0; b < d; ++b) {
            double s = 0.0;
            for (std::size_t a = 0; a < d; ++a)
                s += (X.at(i, a) - t.mean.data[a]) * t.whitening.at(a, b);
            out.at(i, b) = s;
        }
    return out;
}

Tensor augment_gaussian(const Tensor& inputs, double sigma, std::mt19937_64& rng) {
    if (sigma < 0.0) throw UsageError("augment: negative sigma");
    Tensor out = inputs;
    if (sigma == 0.0) return out;
    std::normal_distribution<double> normal(0.0, 1.0);
    for (double& v : out.data) v += sigma * normal(rng);
    return out;
}

Batch augment_gaussian(const Batch& batch, double sigma, std::mt19937_64& rng) {
    Batch out = batch;
    out.inputs = augment_gaussian(batch.inputs, sigma, rng);
    return out;
}

BatchSampler::BatchSampler(const SslDataset& data, std::size_t n_labeled_per_batch,
                           std::size_t n_unlabeled_per_batch, std::uint64_t seed)
    : data_(data), nl_(n_labeled_per_batch), nu_(n_unlabeled_per_batch), rng_(seed) {
    if (nl_ == 0 || data_.labeled.n() == 0)
        throw UsageError("sampler: need labeled examples in every batch");
    if (nu_ > 0 && data_.unlabeled.n() == 0)
        throw UsageError("sampler: unlabeled composition requested but the pool is empty");
}

std::size_t BatchSampler::draw(std::vector<std::size_t>& order, std::size_t& cursor,
                               std::size_t pool, std::mt19937_64& rng) {
    if (cursor >= order.size()) {
        order.resize(pool);
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
    }
    return order[cursor++];
}

Batch BatchSampler::next() {
    Batch b;
    std::size_t total = nl_ + nu_;
    b.inputs = Tensor({total, data_.dim});
    b.labels.reserve(total);
    b.labeled_mask.reserve(total);
    for (std::size_t k = 0; k < nl_; ++k) {
        std::size_t i = draw(labeled_order_, labeled_cursor_, data_.labeled.n(), rng_);
        for (std::size_t j = 0; j < data_.dim; ++j) b.inputs.at(k, j) = data_.labeled.inputs.at(i, j);
        b.labels.push_back(data_.labeled.labels[i]);
        b.labeled_mask.push_back(true);
    }
    for (std::size_t k = 0; k < nu_; ++k) {
        std::size_t i = draw(unlabeled_order_, unlabeled_cursor_, data_.unlabeled.n(), rng_);
        for (std::size_t j = 0; j < data_.dim; ++j)
            b.inputs.at(nl_ + k, j) = data_.unlabeled.inputs.at(i, j);
        b.labels.push_back(-1);
        b.labeled_mask.push_back(false);
    }
    return b;
}

double median_nn_distance(const Tensor& X) {
    std::size_t n = X.shape[0], d = X.shape[1];
    if (n < 2) throw UsageError("median_nn_distance: need at least two points");
    std::vector<double> nn(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double best = -1.0;
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            double s = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                double diff = X.at(i, c) - X.at(j, c);
                s += diff * diff;
            }
            if (best < 0.0 || s < best) best = s;
        }
        nn[i] = std::sqrt(best);
    }
    std::sort(nn.begin(), nn.end());
    return n % 2 == 1 ? nn[n / 2] : 0.5 * (nn[n / 2 - 1] + nn[n / 2]);
}

double median_pairwise_distance(const Tensor& X) {
    std::size_t n = X.shape[0], d = X.shape[1];
    if (n < 2) throw UsageError("median_pairwise_distance: need at least two points");
    std::vector<double> dists;
    dists.reserve(n * (n - 1) / 2);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            double s = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                double diff = X.at(i, c) - X.at(j, c);
                s += diff * diff;
            }
            dists.push_back(std::sqrt(s));
        }
    std::nth_element(dists.begin(), dists.begin() + static_cast<long>(dists.size() / 2),
                     dists.end());
    return dists[dists.size() / 2];
}

// ---- CSV -------------------------------------------------------------------

namespace {

void write_batch_rows(std::ostream& os, const Batch& b, const char* split) {
    char buf[64];
    for (std::size_t i = 0; i < b.n(); ++i) {
        for (std::size_t j = 0; j < b.inputs.shape[1]; ++j) {
            std::snprintf(buf, sizeof buf, "%.17g", b.inputs.at(i, j));
            os << buf << ',';
        }
        os << b.labels[i] << ',' << split << '\n';
    }
}

}  // namespace

void save_dataset_csv(const std::string& path, const SslDataset& data) {
    std::ofstream os(path);
    if (!os) throw UsageError("dataset: cannot open " + path + " for writing");
    for (std::size_t j = 0; j < data.dim; ++j) os << 'x' << j << ',';
    os << "label,split\n";
    write_batch_rows(os, data.labeled, "labeled");
    write_batch_rows(os, data.unlabeled, "unlabeled");
    write_batch_rows(os, data.test, "test");
}

SslDataset load_dataset_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw UsageError("dataset: cannot open " + path);
    std::string line;
    if (!std::getline(is, line)) throw UsageError("dataset: empty file " + path);
    std::size_t d = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) - 1;

    struct Row {
        std::vector<double> x;
        int label;
        std::string split;
    };
    std::vector<Row> rows;
    int max_label = 1;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        Row r;
        for (std::size_t j = 0; j < d; ++j) {
            std::getline(ss, cell, ',');
            r.x.push_back(std::stod(cell));
        }
        std::getline(ss, cell, ',');
        r.label = std::stoi(cell);
        std::getline(ss, r.split, ',');
        max_label = std::max(max_label, r.label);
        rows.push_back(std::move(r));
    }

    SslDataset data;
    data.dim = d;
    data.n_classes = static_cast<std::size_t>(max_label) + 1;
    auto fill = [&](Batch& b, const std::string& split, bool labeled_rows) {
        std::vector<const Row*> sel;
        for (const Row& r : rows)
            if (r.split == split) sel.push_back(&r);
        b.inputs = Tensor({sel.size(), d});
        for (std::size_t i = 0; i < sel.size(); ++i) {
            for (std::size_t j = 0; j < d; ++j) b.inputs.at(i, j) = sel[i]->x[j];
            b.labels.push_back(sel[i]->label);
            b.labeled_mask.push_back(labeled_rows && sel[i]->label >= 0);
        }
    };
    fill(data.labeled, "labeled", true);
    fill(data.unlabeled, "unlabeled", false);
    fill(data.test, "test", true);
    return data;
}

}  // namespace sslab
