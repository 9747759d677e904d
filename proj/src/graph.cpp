#include "stgt/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <unordered_map>
#include <unordered_set>

#include "stgt/csv.hpp"

namespace stgt {

double weight_fn(double distance_km, double omega) {
    if (distance_km < 0.0) {
        throw ValueError("weight_fn: negative distance " + std::to_string(distance_km));
    }
    if (omega <= 0.0) {
        throw ValueError("weight_fn: omega must be > 0, got " + std::to_string(omega));
    }
    return std::exp(-omega * distance_km);
}

SensorGraph::SensorGraph(std::vector<std::string> node_ids, std::vector<Edge> edges,
                         double omega)
    : node_ids_(std::move(node_ids)), edges_(std::move(edges)), omega_(omega) {
    if (node_ids_.empty()) throw ValueError("graph needs at least one station");
    adjacency_ = Tensor({node_ids_.size(), node_ids_.size()});
    for (const Edge& e : edges_) {
        adjacency_(e.from, e.to) = weight_fn(e.distance_km, omega_);
    }
}

std::size_t SensorGraph::index_of(const std::string& id) const {
    const auto it = std::lower_bound(node_ids_.begin(), node_ids_.end(), id);
    if (it == node_ids_.end() || *it != id) {
        throw ValueError("unknown station id '" + id + "'");
    }
    return static_cast<std::size_t>(it - node_ids_.begin());
}

SensorGraph build_graph(const StationTable& stations, const SegmentTable& segments,
                        double omega) {
    if (omega <= 0.0) {
        throw ValueError("build_graph: omega must be > 0, got " + std::to_string(omega));
    }
    std::vector<std::string> ids;
    ids.reserve(stations.rows.size());
    for (const Station& s : stations.rows) ids.push_back(s.id);
    std::sort(ids.begin(), ids.end());
    if (const auto dup = std::adjacent_find(ids.begin(), ids.end()); dup != ids.end()) {
        throw ValueError("duplicate station id '" + *dup + "'");
    }

    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < ids.size(); ++i) index.emplace(ids[i], i);

    std::vector<Edge> edges;
    edges.reserve(segments.rows.size());
    for (const Segment& s : segments.rows) {
        const auto from = index.find(s.from);
        const auto to = index.find(s.to);
        if (from == index.end()) throw ValueError("segment references unknown station id '" + s.from + "'");
        if (to == index.end()) throw ValueError("segment references unknown station id '" + s.to + "'");
        if (s.distance_km <= 0.0) {
            throw ValueError("segment " + s.from + "->" + s.to + " has non-positive distance " +
                             std::to_string(s.distance_km));
        }
        edges.push_back({from->second, to->second, s.distance_km});
    }
    return SensorGraph(std::move(ids), std::move(edges), omega);
}

NormScheme parse_norm_scheme(const std::string& name) {
    if (name == "sym") return NormScheme::sym;
    if (name == "row") return NormScheme::row;
    throw ConfigError("unknown adjacency normalization '" + name + "' (expected sym or row)");
}

std::string to_string(NormScheme scheme) {
    return scheme == NormScheme::sym ? "sym" : "row";
}

Tensor normalize_adjacency(const SensorGraph& g, NormScheme scheme) {
    const std::size_t n = g.node_count();
    Tensor a = g.adjacency();
    for (std::size_t i = 0; i < n; ++i) a(i, i) += 1.0; // self-loops keep degrees positive
    std::vector<double> degree(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) degree[i] += a(i, j);
    }
    Tensor out({n, n});
    if (scheme == NormScheme::row) {
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) out(i, j) = a(i, j) / degree[i];
        }
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                out(i, j) = a(i, j) / std::sqrt(degree[i] * degree[j]);
            }
        }
    }
    return out;
}

StationTable load_stations_csv(const std::string& path) {
    const auto rows = csv::read_rows(path);
    if (rows.empty() || rows[0] != std::vector<std::string>{"station_id", "latitude", "longitude"}) {
        throw IoError(path + ": expected header station_id,latitude,longitude");
    }
    StationTable table;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        if (rows[r].size() != 3) throw IoError(path + ": row " + std::to_string(r + 1) + " has wrong field count");
        table.rows.push_back({rows[r][0],
                              csv::parse_double(rows[r][1], path),
                              csv::parse_double(rows[r][2], path)});
    }
    return table;
}

SegmentTable load_segments_csv(const std::string& path) {
    const auto rows = csv::read_rows(path);
    if (rows.empty() || rows[0] != std::vector<std::string>{"from_id", "to_id", "distance_km"}) {
        throw IoError(path + ": expected header from_id,to_id,distance_km");
    }
    SegmentTable table;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        if (rows[r].size() != 3) throw IoError(path + ": row " + std::to_string(r + 1) + " has wrong field count");
        table.rows.push_back({rows[r][0], rows[r][1], csv::parse_double(rows[r][2], path)});
    }
    return table;
}

void write_stations_csv(const StationTable& stations, const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw IoError("cannot write " + path);
    std::fputs("station_id,latitude,longitude\n", f);
    for (const Station& s : stations.rows) {
        std::fprintf(f, "%s,%.6f,%.6f\n", s.id.c_str(), s.latitude, s.longitude);
    }
    std::fclose(f);
}

void write_segments_csv(const SegmentTable& segments, const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw IoError("cannot write " + path);
    std::fputs("from_id,to_id,distance_km\n", f);
    for (const Segment& s : segments.rows) {
        std::fprintf(f, "%s,%s,%.6f\n", s.from.c_str(), s.to.c_str(), s.distance_km);
    }
    std::fclose(f);
}

} // namespace stgt
