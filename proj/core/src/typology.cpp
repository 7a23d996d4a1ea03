#include "conspace/typology.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>

#include "conspace/csv.hpp"

namespace conspace {

std::vector<ClusterProfile> load_profiles_csv(const std::filesystem::path& path) {
    csv::Reader reader(path, {"cluster_id", "floating_density", "working_density",
                              "residential_density"});
    std::vector<ClusterProfile> profiles;
    while (auto row = reader.next()) {
        ClusterProfile p;
        p.cluster_id = static_cast<int>(reader.as_long(*row, 0));
        p.floating_density = reader.as_double(*row, 1);
        p.working_density = reader.as_double(*row, 2);
        p.residential_density = reader.as_double(*row, 3);
        if (p.floating_density < 0 || p.working_density < 0 || p.residential_density < 0
            || !std::isfinite(p.floating_density) || !std::isfinite(p.working_density)
            || !std::isfinite(p.residential_density)) {
            throw SchemaError(path.string(), reader.line(), 2,
                              "densities must be finite and nonnegative");
        }
        profiles.push_back(p);
    }
    return profiles;
}

void write_profiles_csv(const std::vector<ClusterProfile>& profiles,
                        const std::filesystem::path& path) {
    csv::Writer w(path, {"cluster_id", "floating_density", "working_density",
                         "residential_density"});
    for (const auto& p : profiles) {
        w.row({csv::format_long(p.cluster_id), csv::format_double(p.floating_density),
               csv::format_double(p.working_density),
               csv::format_double(p.residential_density)});
    }
}

namespace {

// Lloyd iterations from a k-means++ seeding. Empty clusters are re-seeded
// with the point farthest from its centroid.
struct KmeansRun {
    std::vector<int> assignment;
    Eigen::MatrixXd centroids;  // k x dim
    double wcss = 0.0;
};

KmeansRun kmeans_once(const Eigen::MatrixXd& data, int k, std::uint64_t seed) {
    const Eigen::Index n = data.rows();
    const Eigen::Index dim = data.cols();
    std::mt19937_64 rng(seed);

    // k-means++ seeding.
    Eigen::MatrixXd centroids(k, dim);
    std::vector<double> d2(static_cast<std::size_t>(n),
                           std::numeric_limits<double>::infinity());
    {
        std::uniform_int_distribution<Eigen::Index> first(0, n - 1);
        centroids.row(0) = data.row(first(rng));
        for (int c = 1; c < k; ++c) {
            double total = 0.0;
            for (Eigen::Index i = 0; i < n; ++i) {
                const double d = (data.row(i) - centroids.row(c - 1)).squaredNorm();
                d2[static_cast<std::size_t>(i)] =
                    std::min(d2[static_cast<std::size_t>(i)], d);
                total += d2[static_cast<std::size_t>(i)];
            }
            std::uniform_real_distribution<double> u(0.0, total);
            double target = u(rng);
            Eigen::Index chosen = n - 1;
            for (Eigen::Index i = 0; i < n; ++i) {
                target -= d2[static_cast<std::size_t>(i)];
                if (target <= 0.0) {
                    chosen = i;
                    break;
                }
            }
            centroids.row(c) = data.row(chosen);
        }
    }

    std::vector<int> assignment(static_cast<std::size_t>(n), -1);
    for (int iter = 0; iter < 200; ++iter) {
        bool moved = false;
        for (Eigen::Index i = 0; i < n; ++i) {
            int best = 0;
            double best_d = (data.row(i) - centroids.row(0)).squaredNorm();
            for (int c = 1; c < k; ++c) {
                const double d = (data.row(i) - centroids.row(c)).squaredNorm();
                if (d < best_d) {
                    best_d = d;
                    best = c;
                }
            }
            if (assignment[static_cast<std::size_t>(i)] != best) {
                assignment[static_cast<std::size_t>(i)] = best;
                moved = true;
            }
        }
        Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, dim);
        Eigen::VectorXd counts = Eigen::VectorXd::Zero(k);
        for (Eigen::Index i = 0; i < n; ++i) {
            sums.row(assignment[static_cast<std::size_t>(i)]) += data.row(i);
            counts(assignment[static_cast<std::size_t>(i)]) += 1.0;
        }
        for (int c = 0; c < k; ++c) {
            if (counts(c) > 0.0) {
                centroids.row(c) = sums.row(c) / counts(c);
            } else {
                // Re-seed an empty cluster with the worst-fitted point.
                Eigen::Index worst = 0;
                double worst_d = -1.0;
                for (Eigen::Index i = 0; i < n; ++i) {
                    const double d =
                        (data.row(i)
                         - centroids.row(assignment[static_cast<std::size_t>(i)]))
                            .squaredNorm();
                    if (d > worst_d) {
                        worst_d = d;
                        worst = i;
                    }
                }
                centroids.row(c) = data.row(worst);
                assignment[static_cast<std::size_t>(worst)] = c;
                moved = true;
            }
        }
        if (!moved) break;
    }

    KmeansRun run;
    run.assignment = std::move(assignment);
    run.centroids = std::move(centroids);
    for (Eigen::Index i = 0; i < n; ++i) {
        run.wcss +=
            (data.row(i) - run.centroids.row(run.assignment[static_cast<std::size_t>(i)]))
                .squaredNorm();
    }
    return run;
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace

TypologyResult kmeans_typology(const std::vector<ClusterProfile>& profiles,
                               int k, std::uint64_t seed, int n_restarts) {
    const auto n = static_cast<Eigen::Index>(profiles.size());
    if (n < k) {
        throw InvalidInputError("kmeans_typology: need at least k=" + std::to_string(k)
                                + " profiles, got " + std::to_string(profiles.size()));
    }
    if (k < 1 || k > 26) throw InvalidInputError("kmeans_typology: k must be in [1, 26]");
    if (n_restarts < 1) throw InvalidInputError("kmeans_typology: n_restarts must be >= 1");

    Eigen::MatrixXd raw(n, 3);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& p = profiles[static_cast<std::size_t>(i)];
        raw(i, 0) = p.floating_density;
        raw(i, 1) = p.working_density;
        raw(i, 2) = p.residential_density;
    }

    // z-score features; a constant feature stays at zero rather than dividing by 0.
    Eigen::MatrixXd data = raw;
    for (Eigen::Index c = 0; c < 3; ++c) {
        const double mean = data.col(c).mean();
        data.col(c).array() -= mean;
        const double sd = n > 1 ? std::sqrt(data.col(c).squaredNorm()
                                            / static_cast<double>(n - 1)) : 0.0;
        if (sd > 0.0) data.col(c) /= sd;
        else data.col(c).setZero();
    }

    KmeansRun best;
    best.wcss = std::numeric_limits<double>::infinity();
    int best_restart = 0;
    for (int r = 0; r < n_restarts; ++r) {
        KmeansRun run = kmeans_once(data, k, splitmix64(seed ^ (0x5eedULL + r)));
        if (run.wcss < best.wcss) {
            best = std::move(run);
            best_restart = r;
        }
    }

    // Order clusters by descending floating+working centroid sum -> 'A'..
    std::vector<int> order(static_cast<std::size_t>(k));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        const double sa = best.centroids(a, 0) + best.centroids(a, 1);
        const double sb = best.centroids(b, 0) + best.centroids(b, 1);
        if (sa != sb) return sa > sb;
        return best.centroids(a, 2) < best.centroids(b, 2);
    });
    std::vector<int> letter_of(static_cast<std::size_t>(k));
    for (int pos = 0; pos < k; ++pos) {
        letter_of[static_cast<std::size_t>(order[static_cast<std::size_t>(pos)])] = pos;
    }

    TypologyResult result;
    result.wcss = best.wcss;
    result.best_restart = best_restart;
    result.centroids_z = Eigen::MatrixXd(k, 3);
    result.centroids = Eigen::MatrixXd(k, 3);
    Eigen::MatrixXd raw_sums = Eigen::MatrixXd::Zero(k, 3);
    Eigen::VectorXd raw_counts = Eigen::VectorXd::Zero(k);
    for (Eigen::Index i = 0; i < n; ++i) {
        const int c = best.assignment[static_cast<std::size_t>(i)];
        raw_sums.row(c) += raw.row(i);
        raw_counts(c) += 1.0;
    }
    for (int c = 0; c < k; ++c) {
        const int pos = letter_of[static_cast<std::size_t>(c)];
        result.centroids_z.row(pos) = best.centroids.row(c);
        result.centroids.row(pos) = raw_sums.row(c) / std::max(1.0, raw_counts(c));
    }
    for (Eigen::Index i = 0; i < n; ++i) {
        const int pos = letter_of[static_cast<std::size_t>(
            best.assignment[static_cast<std::size_t>(i)])];
        result.labels[profiles[static_cast<std::size_t>(i)].cluster_id] =
            static_cast<char>('A' + pos);
    }
    return result;
}

void write_types_csv(const TypologyResult& typology, const std::filesystem::path& path) {
    csv::Writer w(path, {"cluster_id", "type"});
    for (const auto& [id, type] : typology.labels) {
        w.row({csv::format_long(id), std::string(1, type)});
    }
}

std::map<int, char> load_types_csv(const std::filesystem::path& path) {
    csv::Reader reader(path, {"cluster_id", "type"});
    std::map<int, char> types;
    while (auto row = reader.next()) {
        if ((*row)[1].size() != 1) {
            throw SchemaError(path.string(), reader.line(), 2,
                              "type must be a single letter");
        }
        types[static_cast<int>(reader.as_long(*row, 0))] = (*row)[1][0];
    }
    return types;
}

long long FlowNetwork::total() const {
    long long t = 0;
    for (const auto& [id, size] : node_size) t += size;
    for (const auto& e : edges) t += e.weight;
    return t;
}

FlowNetwork build_flow_network(const std::vector<MappedRecord>& records,
                               const std::map<int, char>& types,
                               const std::set<std::string>& periods,
                               const std::string& period_group,
                               const std::map<int, GeoPoint>& centroids,
                               double split_km) {
    if (!(split_km > 0.0)) throw InvalidInputError("build_flow_network: split_km must be > 0");

    FlowNetwork net;
    net.period_group = period_group;
    for (const auto& [id, type] : types) {
        net.node_type[id] = type;
        net.node_size[id] = 0;
    }

    auto type_of = [&](int cluster) -> char {
        const auto it = types.find(cluster);
        return it != types.end() ? it->second : '?';
    };
    auto centroid_of = [&](int cluster) -> const GeoPoint& {
        const auto it = centroids.find(cluster);
        if (it == centroids.end()) {
            throw MissingKeyError("no centroid for cluster " + std::to_string(cluster));
        }
        return it->second;
    };

    std::map<std::pair<int, int>, long long> remote;
    for (const auto& r : records) {
        if (!periods.count(r.period)) continue;
        const double d = r.dest_cluster == r.res_cluster
            ? 0.0
            : haversine_km(centroid_of(r.dest_cluster), centroid_of(r.res_cluster));
        if (d <= split_km) {
            net.node_size[r.dest_cluster] += r.count;
            net.node_type.emplace(r.dest_cluster, type_of(r.dest_cluster));
        } else {
            remote[{r.res_cluster, r.dest_cluster}] += r.count;
        }
    }
    for (const auto& [key, weight] : remote) {
        if (weight <= 0) continue;
        net.node_size.emplace(key.first, 0);
        net.node_size.emplace(key.second, 0);
        net.node_type.emplace(key.first, type_of(key.first));
        net.node_type.emplace(key.second, type_of(key.second));
        net.edges.push_back({key.first, key.second, weight, type_of(key.second)});
    }
    return net;
}

void write_flow_network_json(const FlowNetwork& network, const std::filesystem::path& path) {
    nlohmann::ordered_json j;
    j["period_group"] = network.period_group;
    auto& nodes = j["nodes"] = nlohmann::ordered_json::array();
    for (const auto& [id, size] : network.node_size) {
        nodes.push_back({{"cluster_id", id},
                         {"size", size},
                         {"type", std::string(1, network.node_type.at(id))}});
    }
    auto& edges = j["edges"] = nlohmann::ordered_json::array();
    for (const auto& e : network.edges) {
        edges.push_back({{"source", e.source},
                         {"target", e.target},
                         {"weight", e.weight},
                         {"target_type", std::string(1, e.target_type)}});
    }
    j["total_purchases"] = network.total();
    std::ofstream out(path);
    if (!out) throw InvalidInputError("cannot open output file: " + path.string());
    out << j.dump(2) << '\n';
}

DistanceRank distance_rank(const std::vector<MappedRecord>& records,
                           const std::map<int, GeoPoint>& centroids,
                           int top_k) {
    if (records.empty()) throw InvalidInputError("distance_rank: no records");

    std::set<std::string> amenity_set;
    for (const auto& r : records) amenity_set.insert(r.amenity);
    std::vector<std::string> amenities(amenity_set.begin(), amenity_set.end());
    std::vector<std::string> intervals(kDistanceIntervals.begin(), kDistanceIntervals.end());

    LabeledMatrix counts(intervals, amenities);
    auto centroid_of = [&](int cluster) -> const GeoPoint& {
        const auto it = centroids.find(cluster);
        if (it == centroids.end()) {
            throw MissingKeyError("no centroid for cluster " + std::to_string(cluster));
        }
        return it->second;
    };
    for (const auto& r : records) {
        const double d = r.dest_cluster == r.res_cluster
            ? 0.0
            : haversine_km(centroid_of(r.dest_cluster), centroid_of(r.res_cluster));
        counts.add(interval_of(d), r.amenity, static_cast<double>(r.count));
    }

    const SpecializationMatrix spec = rca(counts);

    DistanceRank out;
    out.x = LabeledMatrix(intervals, amenities);
    out.x.values() = spec.rca;
    for (const auto& interval : intervals) {
        const Eigen::Index d = out.x.row_of(interval);
        std::vector<std::size_t> order(amenities.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            const double va = out.x.values()(d, static_cast<Eigen::Index>(a));
            const double vb = out.x.values()(d, static_cast<Eigen::Index>(b));
            if (va != vb) return va > vb;
            return amenities[a] < amenities[b];
        });
        const int limit = std::min<int>(top_k, static_cast<int>(amenities.size()));
        for (int rank = 0; rank < limit; ++rank) {
            out.top.push_back({interval, rank + 1, amenities[order[static_cast<std::size_t>(rank)]],
                               out.x.values()(d, static_cast<Eigen::Index>(
                                   order[static_cast<std::size_t>(rank)]))});
        }
    }
    return out;
}

void write_distance_rank_csv(const DistanceRank& rank, const std::filesystem::path& path) {
    csv::Writer w(path, {"interval", "rank", "amenity", "X_value"});
    for (const auto& e : rank.top) {
        w.row({e.interval, csv::format_long(e.rank), e.amenity, csv::format_double(e.value)});
    }
}

}  // namespace conspace
