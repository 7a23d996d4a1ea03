#pragma once

#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "conspace/geo.hpp"

namespace conspace {

struct StorePoint {
    std::string store_id;
    GeoPoint location;
    std::string category_small;
    std::string category_large;
};

// Immutable store set plus its spatial index. Safe for concurrent queries.
class StoreIndex {
public:
    explicit StoreIndex(std::vector<StorePoint> stores);

    const std::vector<StorePoint>& stores() const { return stores_; }
    const StorePoint& store(std::size_t i) const { return stores_[i]; }
    std::size_t size() const { return stores_.size(); }

    // Store positions within radius_km of center, ascending. Exact.
    std::vector<std::size_t> within_radius(const GeoPoint& center, double radius_km) const;

    // Position of a store id; MissingKeyError if unknown.
    std::size_t position_of(const std::string& store_id) const;

private:
    std::vector<StorePoint> stores_;
    SpatialIndex index_;
    std::unordered_map<std::string, std::size_t> by_id_;
};

// Store ids within radius_km of center; identical to an exhaustive scan.
std::vector<std::string> neighbors_within(const StoreIndex& index,
                                          const GeoPoint& center,
                                          double radius_km);

// Effective shop count per store: A = sum over neighbors within cutoff of
// exp(-gamma * d), self term included (so A >= 1).
struct DensityField {
    std::unordered_map<std::string, double> scores;
    double gamma = 0.0;        // decay rate per km
    double cutoff_km = 0.0;    // truncation radius
    double truncation_bound = 0.0;  // N * exp(-gamma * cutoff_km)

    double at(const std::string& store_id) const;
};

DensityField effective_density(const StoreIndex& stores, double gamma, double cutoff_km);

// Local density peaks: stores whose A is >= every neighbor's within
// peak_radius_km. Exact ties keep only the smaller store id, so one peak
// survives per tied neighborhood. Sorted by A descending, then id.
std::vector<std::string> find_peaks(const DensityField& field,
                                    const StoreIndex& stores,
                                    double peak_radius_km);

struct AmenityCluster {
    int cluster_id = 0;
    std::string peak_store;
    GeoPoint centroid;                 // mean of member coordinates
    std::vector<std::string> members;  // sorted store ids, includes peak_store
    double radius_km = 0.0;            // max member-to-peak distance
};

struct ClusterAssignment {
    std::vector<AmenityCluster> clusters;
    std::vector<std::string> unassigned;  // sorted store ids beyond max_assign_km of all peaks
};

// Assign every store within max_assign_km of some peak to the peak with the
// strongest decayed influence exp(-gamma*d), i.e. the nearest peak; exact
// distance ties go to the peak with larger A, then smaller id. Cluster ids
// are 1..K in find_peaks order (A descending).
ClusterAssignment assign_clusters(const StoreIndex& stores,
                                  const std::vector<std::string>& peaks,
                                  const DensityField& field,
                                  double max_assign_km);

// File schema: store_id,lat,lon,category_small,category_large
std::vector<StorePoint> load_stores_csv(const std::filesystem::path& path);
void write_stores_csv(const std::vector<StorePoint>& stores,
                      const std::filesystem::path& path);

// cluster_id,peak_store,centroid_lat,centroid_lon,n_members,radius_km
void write_clusters_csv(const std::vector<AmenityCluster>& clusters,
                        const std::filesystem::path& path);
std::vector<AmenityCluster> load_clusters_csv(const std::filesystem::path& path);

// store_id,cluster_id
void write_membership_csv(const std::vector<AmenityCluster>& clusters,
                          const std::filesystem::path& path);
std::unordered_map<std::string, int> load_membership_csv(const std::filesystem::path& path);

}  // namespace conspace
