#include "conspace/cluster.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "conspace/csv.hpp"

namespace conspace {

namespace {
std::vector<GeoPoint> locations_of(const std::vector<StorePoint>& stores) {
    std::vector<GeoPoint> pts;
    pts.reserve(stores.size());
    for (const auto& s : stores) pts.push_back(s.location);
    return pts;
}
}  // namespace

StoreIndex::StoreIndex(std::vector<StorePoint> stores)
    : stores_(std::move(stores)), index_(locations_of(stores_)) {
    for (std::size_t i = 0; i < stores_.size(); ++i) {
        const auto& s = stores_[i];
        if (s.store_id.empty() || s.category_small.empty() || s.category_large.empty()) {
            throw InvalidInputError("store " + std::to_string(i)
                                    + ": id and categories must be nonempty");
        }
        if (!by_id_.emplace(s.store_id, i).second) {
            throw InvalidInputError("duplicate store id: '" + s.store_id + "'");
        }
    }
}

std::vector<std::size_t> StoreIndex::within_radius(const GeoPoint& center,
                                                   double radius_km) const {
    return index_.within_radius(center, radius_km);
}

std::size_t StoreIndex::position_of(const std::string& store_id) const {
    const auto it = by_id_.find(store_id);
    if (it == by_id_.end()) throw MissingKeyError("unknown store id: '" + store_id + "'");
    return it->second;
}

std::vector<std::string> neighbors_within(const StoreIndex& index,
                                          const GeoPoint& center,
                                          double radius_km) {
    std::vector<std::string> ids;
    for (std::size_t i : index.within_radius(center, radius_km)) {
        ids.push_back(index.store(i).store_id);
    }
    return ids;
}

double DensityField::at(const std::string& store_id) const {
    const auto it = scores.find(store_id);
    if (it == scores.end()) throw MissingKeyError("no density score for store '" + store_id + "'");
    return it->second;
}

DensityField effective_density(const StoreIndex& stores, double gamma, double cutoff_km) {
    if (stores.size() == 0) throw InvalidInputError("effective_density: empty store list");
    if (!(gamma > 0.0)) throw InvalidInputError("effective_density: gamma must be > 0");
    if (!(cutoff_km > 0.0)) throw InvalidInputError("effective_density: cutoff_km must be > 0");

    DensityField field;
    field.gamma = gamma;
    field.cutoff_km = cutoff_km;
    field.truncation_bound =
        static_cast<double>(stores.size()) * std::exp(-gamma * cutoff_km);
    field.scores.reserve(stores.size());

    for (std::size_t a = 0; a < stores.size(); ++a) {
        const auto& center = stores.store(a);
        double sum = 0.0;
        // within_radius returns ascending positions, so the sum order is fixed.
        for (std::size_t b : stores.within_radius(center.location, cutoff_km)) {
            sum += std::exp(-gamma * haversine_km(center.location, stores.store(b).location));
        }
        field.scores.emplace(center.store_id, sum);
    }
    return field;
}

std::vector<std::string> find_peaks(const DensityField& field,
                                    const StoreIndex& stores,
                                    double peak_radius_km) {
    if (!(peak_radius_km > 0.0)) {
        throw InvalidInputError("find_peaks: peak_radius_km must be > 0");
    }
    std::vector<std::pair<double, std::string>> peaks;  // (A, id)
    for (std::size_t a = 0; a < stores.size(); ++a) {
        const auto& sa = stores.store(a);
        const double score_a = field.at(sa.store_id);
        bool is_peak = true;
        for (std::size_t b : stores.within_radius(sa.location, peak_radius_km)) {
            if (b == a) continue;
            const auto& sb = stores.store(b);
            const double score_b = field.at(sb.store_id);
            if (score_b > score_a || (score_b == score_a && sb.store_id < sa.store_id)) {
                is_peak = false;
                break;
            }
        }
        if (is_peak) peaks.emplace_back(score_a, sa.store_id);
    }
    std::sort(peaks.begin(), peaks.end(), [](const auto& x, const auto& y) {
        return x.first > y.first || (x.first == y.first && x.second < y.second);
    });
    std::vector<std::string> ids;
    ids.reserve(peaks.size());
    for (auto& [score, id] : peaks) ids.push_back(std::move(id));
    return ids;
}

ClusterAssignment assign_clusters(const StoreIndex& stores,
                                  const std::vector<std::string>& peaks,
                                  const DensityField& field,
                                  double max_assign_km) {
    if (peaks.empty()) throw InvalidInputError("assign_clusters: no peaks");
    if (!(max_assign_km > 0.0)) {
        throw InvalidInputError("assign_clusters: max_assign_km must be > 0");
    }

    struct PeakRef {
        std::size_t pos;
        double score;
        const std::string* id;
    };
    std::vector<PeakRef> refs;
    refs.reserve(peaks.size());
    for (const auto& id : peaks) {
        refs.push_back({stores.position_of(id), field.at(id), &id});
    }

    ClusterAssignment result;
    result.clusters.resize(peaks.size());
    for (std::size_t k = 0; k < peaks.size(); ++k) {
        result.clusters[k].cluster_id = static_cast<int>(k) + 1;
        result.clusters[k].peak_store = peaks[k];
    }

    std::vector<std::vector<std::size_t>> member_pos(peaks.size());
    for (std::size_t s = 0; s < stores.size(); ++s) {
        const GeoPoint& loc = stores.store(s).location;
        int best = -1;
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < refs.size(); ++k) {
            const double d = haversine_km(loc, stores.store(refs[k].pos).location);
            if (d > max_assign_km) continue;
            if (best < 0 || d < best_d) {
                best = static_cast<int>(k);
                best_d = d;
            } else if (d == best_d) {
                const auto& cur = refs[static_cast<std::size_t>(best)];
                if (refs[k].score > cur.score
                    || (refs[k].score == cur.score && *refs[k].id < *cur.id)) {
                    best = static_cast<int>(k);
                }
            }
        }
        if (best < 0) {
            result.unassigned.push_back(stores.store(s).store_id);
        } else {
            member_pos[static_cast<std::size_t>(best)].push_back(s);
        }
    }

    for (std::size_t k = 0; k < peaks.size(); ++k) {
        auto& cluster = result.clusters[k];
        const GeoPoint peak_loc = stores.store(refs[k].pos).location;
        double lat_sum = 0.0, lon_sum = 0.0, radius = 0.0;
        for (std::size_t s : member_pos[k]) {
            const auto& st = stores.store(s);
            cluster.members.push_back(st.store_id);
            lat_sum += st.location.lat;
            lon_sum += st.location.lon;
            radius = std::max(radius, haversine_km(peak_loc, st.location));
        }
        if (cluster.members.empty()) {
            // Cannot happen: a peak is within 0 km of itself.
            throw Error("internal: peak '" + cluster.peak_store + "' has no members");
        }
        std::sort(cluster.members.begin(), cluster.members.end());
        const double n = static_cast<double>(cluster.members.size());
        cluster.centroid = {lat_sum / n, lon_sum / n};
        cluster.radius_km = radius;
    }
    std::sort(result.unassigned.begin(), result.unassigned.end());
    return result;
}

std::vector<StorePoint> load_stores_csv(const std::filesystem::path& path) {
    csv::Reader reader(path, {"store_id", "lat", "lon", "category_small", "category_large"});
    std::vector<StorePoint> stores;
    while (auto row = reader.next()) {
        stores.push_back({(*row)[0],
                          {reader.as_double(*row, 1), reader.as_double(*row, 2)},
                          (*row)[3],
                          (*row)[4]});
    }
    return stores;
}

void write_stores_csv(const std::vector<StorePoint>& stores,
                      const std::filesystem::path& path) {
    csv::Writer w(path, {"store_id", "lat", "lon", "category_small", "category_large"});
    for (const auto& s : stores) {
        w.row({s.store_id, csv::format_double(s.location.lat),
               csv::format_double(s.location.lon), s.category_small, s.category_large});
    }
}

void write_clusters_csv(const std::vector<AmenityCluster>& clusters,
                        const std::filesystem::path& path) {
    csv::Writer w(path, {"cluster_id", "peak_store", "centroid_lat", "centroid_lon",
                         "n_members", "radius_km"});
    for (const auto& c : clusters) {
        w.row({csv::format_long(c.cluster_id), c.peak_store,
               csv::format_double(c.centroid.lat), csv::format_double(c.centroid.lon),
               csv::format_long(static_cast<long long>(c.members.size())),
               csv::format_double(c.radius_km)});
    }
}

std::vector<AmenityCluster> load_clusters_csv(const std::filesystem::path& path) {
    csv::Reader reader(path, {"cluster_id", "peak_store", "centroid_lat", "centroid_lon",
                              "n_members", "radius_km"});
    std::vector<AmenityCluster> clusters;
    while (auto row = reader.next()) {
        AmenityCluster c;
        c.cluster_id = static_cast<int>(reader.as_long(*row, 0));
        c.peak_store = (*row)[1];
        c.centroid = {reader.as_double(*row, 2), reader.as_double(*row, 3)};
        c.radius_km = reader.as_double(*row, 5);
        clusters.push_back(std::move(c));  // members live in the membership file
    }
    return clusters;
}

void write_membership_csv(const std::vector<AmenityCluster>& clusters,
                          const std::filesystem::path& path) {
    csv::Writer w(path, {"store_id", "cluster_id"});
    for (const auto& c : clusters) {
        for (const auto& id : c.members) {
            w.row({id, csv::format_long(c.cluster_id)});
        }
    }
}

std::unordered_map<std::string, int> load_membership_csv(const std::filesystem::path& path) {
    csv::Reader reader(path, {"store_id", "cluster_id"});
    std::unordered_map<std::string, int> membership;
    while (auto row = reader.next()) {
        membership[(*row)[0]] = static_cast<int>(reader.as_long(*row, 1));
    }
    return membership;
}

}  // namespace conspace
