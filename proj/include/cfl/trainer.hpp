#pragma once

// Reference local trainer: a logistic-regression classifier trained by SGD on
// synthetic two-class Gaussian data. The trainer is deliberately small; the
// protocol does not care what produced the update vectors, and a loader hook
// accepts externally vectorized datasets in CSV form.

#include <cmath>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cfl/core.hpp"
#include "cfl/model.hpp"
#include "cfl/topology.hpp"

namespace cfl {

struct Sample {
    std::vector<double> features;
    int label{0};  // 0 or 1
};

struct DatasetShard {
    ClientId owner{};
    std::vector<Sample> samples;

    std::size_t size() const { return samples.size(); }
};

// Fixed class direction for the synthetic task; both classes are unit-variance
// Gaussians centred at +/- direction, so a bias-free linear model separates them.
struct SyntheticTask {
    std::vector<double> direction;

    static SyntheticTask make(std::size_t dim, std::uint64_t seed) {
        SyntheticTask task;
        Rng rng(seed);
        task.direction.resize(dim);
        double norm = 0.0;
        for (auto& v : task.direction) {
            v = rng.normal(0.0, 1.0);
            norm += v * v;
        }
        norm = std::sqrt(norm);
        for (auto& v : task.direction) v = 1.5 * v / norm;
        return task;
    }

    Sample sample(Rng& rng) const {
        Sample s;
        s.label = rng.chance(0.5) ? 1 : 0;
        const double sign = s.label == 1 ? 1.0 : -1.0;
        s.features.resize(direction.size());
        for (std::size_t i = 0; i < direction.size(); ++i) {
            s.features[i] = sign * direction[i] + rng.normal(0.0, 1.0);
        }
        return s;
    }
};

// Shard sizes follow a normal distribution truncated at 1. `spread` is the
// paper's "variance 100" figure; it is interpreted as a standard deviation by
// default, with the literal-variance reading available behind the flag.
inline std::vector<std::size_t> sample_shard_sizes(std::size_t n, double mean, double spread,
                                                   bool spread_is_stddev, std::uint64_t seed) {
    if (mean <= 0.0) throw ConfigError("shard size mean must be > 0");
    const double stddev = spread_is_stddev ? spread : std::sqrt(spread);
    Rng rng(seed);
    std::vector<std::size_t> sizes(n);
    for (auto& s : sizes) {
        const double v = rng.normal(mean, stddev);
        s = static_cast<std::size_t>(std::max<long long>(1, std::llround(v)));
    }
    return sizes;
}

inline std::vector<DatasetShard> shard_dataset(const std::vector<ClientId>& owners, double mean,
                                               double spread, bool spread_is_stddev,
                                               const SyntheticTask& task, std::uint64_t seed) {
    auto sizes = sample_shard_sizes(owners.size(), mean, spread, spread_is_stddev, seed);
    Rng rng(seed ^ 0xDA7Aull);
    std::vector<DatasetShard> shards(owners.size());
    for (std::size_t i = 0; i < owners.size(); ++i) {
        shards[i].owner = owners[i];
        shards[i].samples.reserve(sizes[i]);
        for (std::size_t k = 0; k < sizes[i]; ++k) shards[i].samples.push_back(task.sample(rng));
    }
    return shards;
}

// ---- training -----------------------------------------------------------------

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

inline double dot(const ModelVector& w, const std::vector<double>& x) {
    double z = 0.0;
    for (std::size_t i = 0; i < w.dim(); ++i) z += w[i] * x[i];
    return z;
}

// Mean cross-entropy gradient over the shard at `w`.
inline ModelVector logistic_gradient(const ModelVector& w, const DatasetShard& shard) {
    ModelVector g(w.dim());
    for (const auto& s : shard.samples) {
        if (s.features.size() != w.dim()) throw DimensionMismatch("feature size vs model dim");
        const double err = sigmoid(dot(w, s.features)) - static_cast<double>(s.label);
        for (std::size_t i = 0; i < w.dim(); ++i) g[i] += err * s.features[i];
    }
    const double inv = shard.samples.empty() ? 0.0 : 1.0 / static_cast<double>(shard.samples.size());
    for (std::size_t i = 0; i < g.dim(); ++i) g[i] *= inv;
    return g;
}

inline double logistic_loss(const ModelVector& w, const DatasetShard& shard) {
    double loss = 0.0;
    for (const auto& s : shard.samples) {
        const double p = sigmoid(dot(w, s.features));
        const double eps = 1e-12;
        loss -= s.label == 1 ? std::log(p + eps) : std::log(1.0 - p + eps);
    }
    return shard.samples.empty() ? 0.0 : loss / static_cast<double>(shard.samples.size());
}

// w <- Train(W, D): mini-batch SGD (batch 32) over `epochs` seeded-shuffled
// passes. epochs = 0 or lr = 0 returns the global model unchanged.
inline ModelVector local_train(const ModelVector& global, const DatasetShard& shard,
                               std::size_t epochs, double lr, std::uint64_t seed) {
    for (const auto& s : shard.samples) {
        if (s.features.size() != global.dim()) {
            throw DimensionMismatch("feature size " + std::to_string(s.features.size()) +
                                    " vs model dim " + std::to_string(global.dim()));
        }
    }
    ModelVector w = global;
    if (shard.samples.empty() || lr == 0.0) return w;
    Rng rng(seed);
    std::vector<std::size_t> order(shard.samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    constexpr std::size_t kBatch = 32;
    for (std::size_t e = 0; e < epochs; ++e) {
        rng.shuffle(order);
        for (std::size_t start = 0; start < order.size(); start += kBatch) {
            const std::size_t stop = std::min(order.size(), start + kBatch);
            ModelVector g(w.dim());
            for (std::size_t k = start; k < stop; ++k) {
                const auto& s = shard.samples[order[k]];
                const double err = sigmoid(dot(w, s.features)) - static_cast<double>(s.label);
                for (std::size_t i = 0; i < w.dim(); ++i) g[i] += err * s.features[i];
            }
            const double step = lr / static_cast<double>(stop - start);
            for (std::size_t i = 0; i < w.dim(); ++i) w[i] -= step * g[i];
        }
    }
    return w;
}

// x = w - W
inline ModelVector compute_update(const ModelVector& w, const ModelVector& global) {
    return subtract(w, global);
}

// X = p * x with p in [0, 1]
inline ModelVector weigh_update(const ModelVector& x, double p) {
    if (p < 0.0 || p > 1.0) throw DomainError("aggregation weight outside [0,1]");
    return scale(x, p);
}

inline double accuracy(const ModelVector& w, const std::vector<Sample>& samples) {
    if (samples.empty()) return 0.0;
    std::size_t hit = 0;
    for (const auto& s : samples) {
        const int pred = dot(w, s.features) >= 0.0 ? 1 : 0;
        if (pred == s.label) hit++;
    }
    return static_cast<double>(hit) / static_cast<double>(samples.size());
}

// ---- aggregation weights ----------------------------------------------------------

// p_{h,i} within the cluster and q_h across clusters; their product is the
// client's flat weight |D_i| / total.
struct AggregationWeights {
    std::map<ClientId, double> p;        // in-cluster weight per target
    std::vector<double> q;               // per cluster
    std::map<ClientId, std::uint64_t> dataset_size;
    std::uint64_t total_size{0};
};

inline AggregationWeights compute_weights(const ClusterPlan& plan,
                                          const std::map<ClientId, std::uint64_t>& sizes) {
    AggregationWeights w;
    w.dataset_size = sizes;
    std::vector<std::uint64_t> cluster_total(plan.clusters.size(), 0);
    for (std::size_t c = 0; c < plan.clusters.size(); ++c) {
        for (auto id : plan.clusters[c].targets) {
            auto it = sizes.find(id);
            if (it == sizes.end()) throw ConfigError("missing dataset size for target " + to_string(id));
            cluster_total[c] += it->second;
            w.total_size += it->second;
        }
    }
    if (w.total_size == 0) throw ConfigError("no training data among targets");
    w.q.resize(plan.clusters.size(), 0.0);
    for (std::size_t c = 0; c < plan.clusters.size(); ++c) {
        w.q[c] = static_cast<double>(cluster_total[c]) / static_cast<double>(w.total_size);
        for (auto id : plan.clusters[c].targets) {
            w.p[id] = static_cast<double>(sizes.at(id)) / static_cast<double>(cluster_total[c]);
        }
    }
    return w;
}

// ---- dataset import -----------------------------------------------------------------

// CSV rows of feature values with the label in the last column.
inline std::vector<Sample> load_samples_csv(const std::string& text) {
    std::vector<Sample> out;
    std::istringstream lines(text);
    std::string line;
    while (std::getline(lines, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream cells(line);
        std::string cell;
        std::vector<double> row;
        while (std::getline(cells, cell, ',')) row.push_back(std::stod(cell));
        if (row.size() < 2) throw ConfigError("dataset row needs features plus a label");
        Sample s;
        s.label = static_cast<int>(row.back()) != 0 ? 1 : 0;
        row.pop_back();
        s.features = std::move(row);
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace cfl
