#include "conspace/complexity.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "conspace/csv.hpp"

namespace conspace {

LabeledMatrix::LabeledMatrix(std::vector<std::string> row_labels,
                             std::vector<std::string> col_labels)
    : row_labels_(std::move(row_labels)), col_labels_(std::move(col_labels)) {
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(row_labels_.size()); ++i) {
        if (!row_index_.emplace(row_labels_[static_cast<std::size_t>(i)], i).second) {
            throw InvalidInputError("duplicate row label: '"
                                    + row_labels_[static_cast<std::size_t>(i)] + "'");
        }
    }
    for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(col_labels_.size()); ++j) {
        if (!col_index_.emplace(col_labels_[static_cast<std::size_t>(j)], j).second) {
            throw InvalidInputError("duplicate column label: '"
                                    + col_labels_[static_cast<std::size_t>(j)] + "'");
        }
    }
    values_ = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(row_labels_.size()),
                                    static_cast<Eigen::Index>(col_labels_.size()));
}

Eigen::Index LabeledMatrix::row_of(const std::string& label) const {
    const auto it = row_index_.find(label);
    if (it == row_index_.end()) throw MissingKeyError("unknown row label: '" + label + "'");
    return it->second;
}

Eigen::Index LabeledMatrix::col_of(const std::string& label) const {
    const auto it = col_index_.find(label);
    if (it == col_index_.end()) throw MissingKeyError("unknown column label: '" + label + "'");
    return it->second;
}

void LabeledMatrix::add(const std::string& row, const std::string& col, double v) {
    values_(row_of(row), col_of(col)) += v;
}

std::string ConsumerGroupKey::to_label() const {
    return residence_cell + "|" + age_band + "|" + gender + "|"
        + std::to_string(shopping_area);
}

SpecializationMatrix rca(const LabeledMatrix& counts) {
    const auto& x = counts.values();
    if (x.rows() == 0 || x.cols() == 0 || (x.array() < 0).any()) {
        throw InvalidInputError("rca: counts must be a nonempty nonnegative matrix");
    }
    const double total = x.sum();
    if (total <= 0.0) throw InvalidInputError("rca: all-zero count matrix");

    const Eigen::VectorXd row_sums = x.rowwise().sum();
    const Eigen::VectorXd col_sums = x.colwise().sum();

    SpecializationMatrix out;
    out.row_labels = counts.row_labels();
    out.col_labels = counts.col_labels();
    out.rca = Eigen::MatrixXd::Zero(x.rows(), x.cols());
    for (Eigen::Index u = 0; u < x.rows(); ++u) {
        if (row_sums(u) <= 0.0) continue;  // zero unit: RCA row stays 0
        for (Eigen::Index p = 0; p < x.cols(); ++p) {
            if (col_sums(p) <= 0.0) continue;  // zero amenity: RCA column stays 0
            const double unit_share = x(u, p) / row_sums(u);
            const double global_share = col_sums(p) / total;
            out.rca(u, p) = unit_share / global_share;
        }
    }
    out.binary = (out.rca.array() > 1.0).cast<double>();
    return out;
}

Eigen::VectorXd ProximityMatrix::neighbor_strength() const {
    Eigen::VectorXd s = phi.rowwise().sum();
    s -= phi.diagonal();
    return s;
}

ProximityMatrix proximity(const SpecializationMatrix& spec) {
    const Eigen::MatrixXd& m = spec.binary;
    if (m.cols() < 2) throw InvalidInputError("proximity: need at least 2 amenity columns");

    // co(p,q) = number of units specialized in both; k(p) = units specialized in p.
    const Eigen::MatrixXd co = m.transpose() * m;
    const Eigen::VectorXd k = co.diagonal();

    ProximityMatrix out;
    out.labels = spec.col_labels;
    out.phi = Eigen::MatrixXd::Zero(m.cols(), m.cols());
    for (Eigen::Index p = 0; p < m.cols(); ++p) {
        for (Eigen::Index q = p + 1; q < m.cols(); ++q) {
            const double denom = std::max(k(p), k(q));
            const double v = denom > 0.0 ? co(p, q) / denom : 0.0;
            out.phi(p, q) = v;
            out.phi(q, p) = v;
        }
        out.phi(p, p) = 1.0;  // defined, not derived
    }
    return out;
}

LabeledMatrix relatedness_density(const SpecializationMatrix& unit_spec,
                                  const ProximityMatrix& prox) {
    if (unit_spec.col_labels != prox.labels) {
        throw SchemaError("<relatedness_density>", 0, 0,
                          "amenity labels of specialization matrix and proximity "
                          "matrix do not align");
    }
    Eigen::MatrixXd phi_off = prox.phi;
    phi_off.diagonal().setZero();
    const Eigen::VectorXd denom = phi_off.colwise().sum();

    // omega(u,p) = sum_q phi(p,q) X(u,q) / sum_q phi(p,q), self term excluded.
    const Eigen::MatrixXd numer = unit_spec.binary * phi_off;

    LabeledMatrix omega(unit_spec.row_labels, unit_spec.col_labels);
    for (Eigen::Index u = 0; u < numer.rows(); ++u) {
        for (Eigen::Index p = 0; p < numer.cols(); ++p) {
            omega.values()(u, p) = denom(p) > 0.0 ? numer(u, p) / denom(p) : 0.0;
        }
    }
    return omega;
}

namespace {

// Union-find for the maximum spanning forest.
struct DisjointSet {
    std::vector<std::size_t> parent;
    explicit DisjointSet(std::size_t n) : parent(n) {
        std::iota(parent.begin(), parent.end(), std::size_t{0});
    }
    std::size_t find(std::size_t x) {
        while (parent[x] != x) {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        return x;
    }
    bool unite(std::size_t a, std::size_t b) {
        a = find(a);
        b = find(b);
        if (a == b) return false;
        parent[b] = a;
        return true;
    }
};

}  // namespace

ConsumptionSpace build_consumption_space(const ProximityMatrix& prox, double threshold) {
    const Eigen::Index n = prox.phi.rows();
    ConsumptionSpace space;
    space.nodes = prox.labels;
    space.threshold = threshold;
    for (Eigen::Index p = 0; p < n; ++p) {
        for (Eigen::Index q = p + 1; q < n; ++q) {
            space.edges.push_back({prox.labels[static_cast<std::size_t>(p)],
                                   prox.labels[static_cast<std::size_t>(q)],
                                   prox.phi(p, q), false});
        }
    }
    std::sort(space.edges.begin(), space.edges.end(),
              [](const SpaceEdge& a, const SpaceEdge& b) {
                  if (a.phi != b.phi) return a.phi > b.phi;
                  if (a.p != b.p) return a.p < b.p;
                  return a.q < b.q;
              });

    std::unordered_map<std::string, std::size_t> node_pos;
    for (std::size_t i = 0; i < space.nodes.size(); ++i) node_pos[space.nodes[i]] = i;

    // Kruskal over positive edges (already sorted descending).
    DisjointSet ds(space.nodes.size());
    for (auto& e : space.edges) {
        if (e.phi <= 0.0) break;
        if (ds.unite(node_pos[e.p], node_pos[e.q])) e.backbone = true;
    }
    for (auto& e : space.edges) {
        if (e.phi >= threshold) e.backbone = true;
    }
    return space;
}

void write_consumption_space(const ConsumptionSpace& space,
                             const std::map<std::string, NodeStats>& node_stats,
                             int top_k,
                             const std::filesystem::path& edges_csv,
                             const std::filesystem::path& graph_json,
                             const std::filesystem::path& pair_table_csv) {
    {
        csv::Writer w(edges_csv, {"amenity_p", "amenity_p_prime", "phi"});
        for (const auto& e : space.edges) {
            w.row({e.p, e.q, csv::format_double(e.phi)});
        }
    }
    {
        nlohmann::ordered_json j;
        j["threshold"] = space.threshold;
        auto& nodes = j["nodes"] = nlohmann::ordered_json::array();
        for (const auto& id : space.nodes) {
            nlohmann::ordered_json node;
            node["id"] = id;
            const auto it = node_stats.find(id);
            node["large_category"] = it != node_stats.end() ? it->second.large_category : "";
            node["total_count"] = it != node_stats.end() ? it->second.total_count : 0.0;
            nodes.push_back(std::move(node));
        }
        auto& edges = j["edges"] = nlohmann::ordered_json::array();
        for (const auto& e : space.edges) {
            if (!e.backbone) continue;
            edges.push_back({{"source", e.p}, {"target", e.q}, {"phi", e.phi}});
        }
        std::ofstream out(graph_json);
        if (!out) throw InvalidInputError("cannot open output file: " + graph_json.string());
        out << j.dump(2) << '\n';
    }
    {
        csv::Writer w(pair_table_csv, {"which", "rank", "amenity_p", "amenity_p_prime", "phi"});
        const int k = std::min<int>(top_k, static_cast<int>(space.edges.size()));
        for (int r = 0; r < k; ++r) {
            const auto& e = space.edges[static_cast<std::size_t>(r)];
            w.row({"top", csv::format_long(r + 1), e.p, e.q, csv::format_double(e.phi)});
        }
        for (int r = 0; r < k; ++r) {
            const auto& e = space.edges[space.edges.size() - 1 - static_cast<std::size_t>(r)];
            w.row({"bottom", csv::format_long(r + 1), e.p, e.q, csv::format_double(e.phi)});
        }
    }
}

double OmegaTable::at(int cluster, const std::string& amenity,
                      const std::string& period) const {
    const auto it = values.find({cluster, amenity, period});
    if (it == values.end()) {
        throw MissingKeyError("no omega for cluster " + std::to_string(cluster)
                              + ", amenity '" + amenity + "', period '" + period + "'");
    }
    return it->second;
}

void OmegaTable::set(int cluster, const std::string& amenity,
                     const std::string& period, double v) {
    values[{cluster, amenity, period}] = v;
}

OmegaTable OmegaTable::load_csv(const std::filesystem::path& path) {
    csv::Reader reader(path, {"cluster_id", "amenity", "period", "omega"});
    OmegaTable table;
    while (auto row = reader.next()) {
        table.set(static_cast<int>(reader.as_long(*row, 0)), (*row)[1], (*row)[2],
                  reader.as_double(*row, 3));
    }
    return table;
}

void OmegaTable::write_csv(const std::filesystem::path& path) const {
    csv::Writer w(path, {"cluster_id", "amenity", "period", "omega"});
    for (const auto& [key, v] : values) {
        w.row({csv::format_long(std::get<0>(key)), std::get<1>(key), std::get<2>(key),
               csv::format_double(v)});
    }
}

}  // namespace conspace
