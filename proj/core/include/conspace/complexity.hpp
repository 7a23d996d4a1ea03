#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "conspace/matrix.hpp"

namespace conspace {

// One consumer group: a residential cell, age band, gender and the shopping
// area (cluster) the purchases happen in.
struct ConsumerGroupKey {
    std::string residence_cell;
    std::string age_band;
    std::string gender;
    int shopping_area = 0;

    std::string to_label() const;
};

// RCA values and their strict RCA > 1 binarization, aligned with the source
// count matrix. Zero rows/columns yield RCA 0 everywhere in that slice.
struct SpecializationMatrix {
    std::vector<std::string> row_labels;
    std::vector<std::string> col_labels;
    Eigen::MatrixXd rca;
    Eigen::MatrixXd binary;  // 1.0 where rca > 1, else 0.0
};

SpecializationMatrix rca(const LabeledMatrix& counts);

// Symmetric co-purchase proximity over amenities, phi in [0,1], diagonal 1.
struct ProximityMatrix {
    std::vector<std::string> labels;
    Eigen::MatrixXd phi;

    // Row sums excluding the diagonal (denominator of relatedness density).
    Eigen::VectorXd neighbor_strength() const;
};

// phi(p,q) = min over both directions of the conditional co-specialization
// share across units; all-zero columns give 0.
ProximityMatrix proximity(const SpecializationMatrix& spec);

// Relatedness density: for each (unit, amenity), the phi-weighted share of
// the amenity's related amenities the unit is specialized in. The self term
// is excluded from numerator and denominator. Values in [0,1].
LabeledMatrix relatedness_density(const SpecializationMatrix& unit_spec,
                                  const ProximityMatrix& prox);

struct NodeStats {
    double total_count = 0.0;
    std::string large_category;
};

struct SpaceEdge {
    std::string p;
    std::string q;
    double phi = 0.0;
    bool backbone = false;  // in max spanning forest or phi >= threshold
};

// All p<q edges sorted by phi descending (ties by labels); backbone flags
// mark the maximum-spanning-forest edges plus every edge at or above the
// threshold.
struct ConsumptionSpace {
    std::vector<std::string> nodes;
    std::vector<SpaceEdge> edges;
    double threshold = 0.0;
};

ConsumptionSpace build_consumption_space(const ProximityMatrix& prox, double threshold);

// Emits edge list (amenity_p,amenity_p_prime,phi), a JSON graph with node
// and edge attribute blocks, and the top-k/bottom-k pair table.
void write_consumption_space(const ConsumptionSpace& space,
                             const std::map<std::string, NodeStats>& node_stats,
                             int top_k,
                             const std::filesystem::path& edges_csv,
                             const std::filesystem::path& graph_json,
                             const std::filesystem::path& pair_table_csv);

// omega rows: cluster_id,amenity,period,omega
struct OmegaTable {
    // key: (cluster_id, amenity, period)
    std::map<std::tuple<int, std::string, std::string>, double> values;

    double at(int cluster, const std::string& amenity, const std::string& period) const;
    void set(int cluster, const std::string& amenity, const std::string& period, double v);

    static OmegaTable load_csv(const std::filesystem::path& path);
    void write_csv(const std::filesystem::path& path) const;
};

}  // namespace conspace
