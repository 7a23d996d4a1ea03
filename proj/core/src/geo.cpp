#include "conspace/geo.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "conspace/csv.hpp"

namespace conspace {

namespace {
constexpr double kPi = 3.14159265358979323846;

double deg2rad(double deg) { return deg * (kPi / 180.0); }
}  // namespace

bool is_valid(const GeoPoint& p) {
    return std::isfinite(p.lat) && std::isfinite(p.lon)
        && p.lat >= -90.0 && p.lat <= 90.0
        && p.lon >= -180.0 && p.lon <= 180.0;
}

void validate(const GeoPoint& p) {
    if (!is_valid(p)) {
        throw InvalidInputError("invalid coordinate: lat=" + std::to_string(p.lat)
                                + " lon=" + std::to_string(p.lon));
    }
}

double haversine_km(const GeoPoint& a, const GeoPoint& b) {
    validate(a);
    validate(b);
    const double phi_a = deg2rad(a.lat);
    const double phi_b = deg2rad(b.lat);
    const double half_dphi = (phi_b - phi_a) / 2.0;
    const double half_dlam = deg2rad(b.lon - a.lon) / 2.0;
    const double s1 = std::sin(half_dphi);
    const double s2 = std::sin(half_dlam);
    const double h = s1 * s1 + std::cos(phi_a) * std::cos(phi_b) * s2 * s2;
    return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(h)));
}

SpatialIndex::SpatialIndex(const std::vector<GeoPoint>& points) {
    entries_.reserve(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
        validate(points[i]);
        entries_.push_back({points[i].lat, points[i].lon, i});
    }
    std::sort(entries_.begin(), entries_.end(), [](const Entry& a, const Entry& b) {
        return a.lat < b.lat || (a.lat == b.lat && a.idx < b.idx);
    });
}

std::vector<std::size_t> SpatialIndex::within_radius(const GeoPoint& center,
                                                     double radius_km) const {
    if (!(radius_km > 0.0) || !std::isfinite(radius_km)) {
        throw InvalidInputError("within_radius: radius must be > 0, got "
                                + std::to_string(radius_km));
    }
    validate(center);

    // Great-circle distance is bounded below by the meridional arc, so a
    // latitude band of +/- radius/kKmPerDegreeLat cannot lose candidates.
    // Widened by one ulp-scale factor against rounding.
    const double band = radius_km / kKmPerDegreeLat * (1.0 + 1e-12) + 1e-12;

    const auto lo = std::lower_bound(
        entries_.begin(), entries_.end(), center.lat - band,
        [](const Entry& e, double v) { return e.lat < v; });
    const auto hi = std::upper_bound(
        entries_.begin(), entries_.end(), center.lat + band,
        [](double v, const Entry& e) { return v < e.lat; });

    std::vector<std::size_t> out;
    for (auto it = lo; it != hi; ++it) {
        if (haversine_km(center, {it->lat, it->lon}) <= radius_km) {
            out.push_back(it->idx);
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

void CellRegistry::insert(const std::string& cell_id, GeoPoint centroid) {
    if (cell_id.empty()) throw InvalidInputError("cell id must be nonempty");
    validate(centroid);
    entries_[cell_id] = centroid;
}

bool CellRegistry::contains(const std::string& cell_id) const {
    return entries_.count(cell_id) > 0;
}

const GeoPoint& CellRegistry::at(const std::string& cell_id) const {
    const auto it = entries_.find(cell_id);
    if (it == entries_.end()) {
        throw MissingKeyError("unknown cell id: '" + cell_id + "'");
    }
    return it->second;
}

double CellRegistry::distance_km(const std::string& i, const std::string& j) const {
    const GeoPoint& a = at(i);
    const GeoPoint& b = at(j);
    if (i == j) return 0.0;
    return haversine_km(a, b);
}

CellRegistry CellRegistry::load_csv(const std::filesystem::path& path) {
    csv::Reader reader(path, {"cell_id", "lat", "lon"});
    CellRegistry reg;
    while (auto row = reader.next()) {
        reg.insert((*row)[0], {reader.as_double(*row, 1), reader.as_double(*row, 2)});
    }
    return reg;
}

void CellRegistry::write_csv(const std::filesystem::path& path) const {
    // Sorted by id so output is reproducible.
    std::map<std::string, GeoPoint> sorted(entries_.begin(), entries_.end());
    csv::Writer w(path, {"cell_id", "lat", "lon"});
    for (const auto& [id, p] : sorted) {
        w.row({id, csv::format_double(p.lat), csv::format_double(p.lon)});
    }
}

}  // namespace conspace
