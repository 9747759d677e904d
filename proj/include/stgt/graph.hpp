#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "stgt/tensor.hpp"

namespace stgt {

struct Station {
    std::string id;
    double latitude = 0.0;
    double longitude = 0.0;
};

struct StationTable {
    std::vector<Station> rows;
};

/// A direct station-to-station connection: traffic flows from `from` to
/// `to` with no intermediate station, over `distance_km` of road.
struct Segment {
    std::string from;
    std::string to;
    double distance_km = 0.0;
};

struct SegmentTable {
    std::vector<Segment> rows;
};

struct Edge {
    std::size_t from = 0;
    std::size_t to = 0;
    double distance_km = 0.0;
};

/// Closeness weight for a connection of road distance d (km):
/// w = exp(-omega * d). Strictly decreasing in d.
double weight_fn(double distance_km, double omega);

/// Transformed road network: one node per sensor station (ordered by id),
/// directed edges where segments declare a direct connection, and the
/// weighted adjacency with w_ij = weight_fn(d_ij) on edges, 0 elsewhere.
class SensorGraph {
public:
    SensorGraph(std::vector<std::string> node_ids, std::vector<Edge> edges, double omega);

    const std::vector<std::string>& node_ids() const { return node_ids_; }
    std::size_t node_count() const { return node_ids_.size(); }
    const std::vector<Edge>& edges() const { return edges_; }
    const Tensor& adjacency() const { return adjacency_; }
    double omega() const { return omega_; }

    /// Index of a station id in matrix order; throws if unknown.
    std::size_t index_of(const std::string& id) const;

private:
    std::vector<std::string> node_ids_;
    std::vector<Edge> edges_;
    Tensor adjacency_;
    double omega_;
};

SensorGraph build_graph(const StationTable& stations, const SegmentTable& segments,
                        double omega);

enum class NormScheme { sym, row };

NormScheme parse_norm_scheme(const std::string& name);
std::string to_string(NormScheme scheme);

/// GCN propagation matrix with self-loops: sym is D^(-1/2)(W+I)D^(-1/2),
/// row is D^(-1)(W+I), with D the diagonal of row sums of (W+I).
Tensor normalize_adjacency(const SensorGraph& g, NormScheme scheme);

/// stations.csv: header `station_id,latitude,longitude`.
StationTable load_stations_csv(const std::string& path);
/// segments.csv: header `from_id,to_id,distance_km`.
SegmentTable load_segments_csv(const std::string& path);

void write_stations_csv(const StationTable& stations, const std::string& path);
void write_segments_csv(const SegmentTable& segments, const std::string& path);

} // namespace stgt
