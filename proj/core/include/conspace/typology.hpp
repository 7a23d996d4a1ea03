#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "conspace/geo.hpp"
#include "conspace/matrix.hpp"
#include "conspace/panel.hpp"

namespace conspace {

struct ClusterProfile {
    int cluster_id = 0;
    double floating_density = 0.0;     // persons per km^2
    double working_density = 0.0;
    double residential_density = 0.0;
};

std::vector<ClusterProfile> load_profiles_csv(const std::filesystem::path& path);
void write_profiles_csv(const std::vector<ClusterProfile>& profiles,
                        const std::filesystem::path& path);

// k-means over z-scored (floating, working, residential) densities.
// Best of n_restarts by within-cluster sum of squares; labels are assigned
// A.. in descending order of the (floating + working) centroid sum.
struct TypologyResult {
    std::map<int, char> labels;      // cluster_id -> 'A'..'E'
    Eigen::MatrixXd centroids;       // k x 3, raw feature space, row per label
    Eigen::MatrixXd centroids_z;     // k x 3, standardized space
    double wcss = 0.0;
    int best_restart = 0;
};

TypologyResult kmeans_typology(const std::vector<ClusterProfile>& profiles,
                               int k = 5,
                               std::uint64_t seed = 0,
                               int n_restarts = 16);

void write_types_csv(const TypologyResult& typology, const std::filesystem::path& path);
std::map<int, char> load_types_csv(const std::filesystem::path& path);

// Origin-destination network for one period group. Node size aggregates
// local purchases (distance <= split_km); directed edges carry the remote
// purchases (distance > split_km) from residence to shopping cluster.
struct FlowNetwork {
    std::string period_group;
    std::map<int, long long> node_size;
    std::map<int, char> node_type;

    struct Edge {
        int source = 0;       // residence cluster
        int target = 0;       // shopping cluster
        long long weight = 0;
        char target_type = '?';
    };
    std::vector<Edge> edges;  // sorted by (source, target)

    long long total() const;  // sum of node sizes and edge weights
};

FlowNetwork build_flow_network(const std::vector<MappedRecord>& records,
                               const std::map<int, char>& types,
                               const std::set<std::string>& periods,
                               const std::string& period_group,
                               const std::map<int, GeoPoint>& centroids,
                               double split_km = 1.0);

void write_flow_network_json(const FlowNetwork& network, const std::filesystem::path& path);

// Distance-interval specialization: the interval x amenity RCA matrix plus
// the per-interval top-k ranking.
struct DistanceRank {
    LabeledMatrix x;  // rows: intervals, cols: amenities

    struct Entry {
        std::string interval;
        int rank = 0;
        std::string amenity;
        double value = 0.0;
    };
    std::vector<Entry> top;
};

DistanceRank distance_rank(const std::vector<MappedRecord>& records,
                           const std::map<int, GeoPoint>& centroids,
                           int top_k = 10);

void write_distance_rank_csv(const DistanceRank& rank, const std::filesystem::path& path);

}  // namespace conspace
