#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "conspace/error.hpp"

namespace conspace {

// Mean Earth radius in km; one spherical model serves both store distances
// and trip distances (at intra-city scale the geodesic/euclidean gap is <0.1%).
inline constexpr double kEarthRadiusKm = 6371.0088;

// Meridional arc length of one degree of latitude on that sphere.
inline constexpr double kKmPerDegreeLat = kEarthRadiusKm * 3.14159265358979323846 / 180.0;

struct GeoPoint {
    double lat = 0.0;  // degrees, [-90, 90]
    double lon = 0.0;  // degrees, [-180, 180]
};

bool is_valid(const GeoPoint& p);
void validate(const GeoPoint& p);  // throws InvalidInputError

// Great-circle distance in km. Symmetric, nonnegative, zero iff a == b.
double haversine_km(const GeoPoint& a, const GeoPoint& b);

// Exact radius queries over an immutable point set. Points are addressed by
// their position in the construction vector. The internal layout is a
// latitude-sorted band prefilter; results are exact, never approximate.
// Immutable after construction, so concurrent queries are safe.
class SpatialIndex {
public:
    explicit SpatialIndex(const std::vector<GeoPoint>& points);

    // Indices of all points with haversine_km(center, p) <= radius_km,
    // ascending. radius_km must be > 0.
    std::vector<std::size_t> within_radius(const GeoPoint& center, double radius_km) const;

    std::size_t size() const { return entries_.size(); }

private:
    struct Entry {
        double lat;
        double lon;
        std::size_t idx;
    };
    std::vector<Entry> entries_;  // sorted by lat
};

// Registry of 50m-grid cell centroids, keyed by opaque cell id.
// Centroids come from input data; no map projection is assumed.
class CellRegistry {
public:
    void insert(const std::string& cell_id, GeoPoint centroid);

    bool contains(const std::string& cell_id) const;
    const GeoPoint& at(const std::string& cell_id) const;  // MissingKeyError names the id

    // Haversine between two registered centroids; i == j gives 0 exactly.
    double distance_km(const std::string& i, const std::string& j) const;

    std::size_t size() const { return entries_.size(); }
    const std::unordered_map<std::string, GeoPoint>& entries() const { return entries_; }

    // File schema: cell_id,lat,lon (header row, '.' decimal separator).
    static CellRegistry load_csv(const std::filesystem::path& path);
    void write_csv(const std::filesystem::path& path) const;

private:
    std::unordered_map<std::string, GeoPoint> entries_;
};

}  // namespace conspace
