#include "stgt/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <unordered_map>

#include "stgt/csv.hpp"
#include "stgt/error.hpp"

namespace stgt {

namespace {

// Howard Hinnant's civil-date algorithms, proleptic Gregorian, UTC.
std::int64_t days_from_civil(int y, int m, int d) {
    y -= m <= 2;
    const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153u * static_cast<unsigned>(m + (m > 2 ? -3 : 9)) + 2u) / 5u +
                         static_cast<unsigned>(d) - 1u;
    const unsigned doe = yoe * 365u + yoe / 4u - yoe / 100u + doy;
    return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

void civil_from_days(std::int64_t z, int& y, int& m, int& d) {
    z += 719468;
    const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    const unsigned doe = static_cast<unsigned>(z - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    const std::int64_t yy = static_cast<std::int64_t>(yoe) + era * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    d = static_cast<int>(doy - (153 * mp + 2) / 5 + 1);
    m = static_cast<int>(mp < 10 ? mp + 3 : mp - 9);
    y = static_cast<int>(yy + (m <= 2));
}

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
    std::int64_t q = a / b;
    if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
    return q;
}

bool all_digits(const std::string& s, std::size_t from, std::size_t count) {
    for (std::size_t i = from; i < from + count; ++i) {
        if (s[i] < '0' || s[i] > '9') return false;
    }
    return true;
}

} // namespace

std::int64_t parse_timestamp(const std::string& iso) {
    // strict YYYY-MM-DDTHH:MM:SS
    const bool shaped = iso.size() == 19 && iso[4] == '-' && iso[7] == '-' &&
                        iso[10] == 'T' && iso[13] == ':' && iso[16] == ':' &&
                        all_digits(iso, 0, 4) && all_digits(iso, 5, 2) &&
                        all_digits(iso, 8, 2) && all_digits(iso, 11, 2) &&
                        all_digits(iso, 14, 2) && all_digits(iso, 17, 2);
    if (!shaped) throw IoError("bad timestamp '" + iso + "' (want YYYY-MM-DDTHH:MM:SS)");
    const int y = std::stoi(iso.substr(0, 4));
    const int mo = std::stoi(iso.substr(5, 2));
    const int d = std::stoi(iso.substr(8, 2));
    const int h = std::stoi(iso.substr(11, 2));
    const int mi = std::stoi(iso.substr(14, 2));
    const int s = std::stoi(iso.substr(17, 2));
    if (mo < 1 || mo > 12 || d < 1 || d > 31 || h > 23 || mi > 59 || s > 59)
        throw IoError("bad timestamp '" + iso + "'");
    return days_from_civil(y, mo, d) * 86400 + h * 3600 + mi * 60 + s;
}

std::string format_timestamp(std::int64_t epoch_seconds) {
    const std::int64_t day = floor_div(epoch_seconds, 86400);
    std::int64_t rem = epoch_seconds - day * 86400;
    int y, m, d;
    civil_from_days(day, y, m, d);
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d", y, m, d,
                  static_cast<int>(rem / 3600), static_cast<int>(rem / 60 % 60),
                  static_cast<int>(rem % 60));
    return buf;
}

SpeedSeries load_series(const std::string& path, const SensorGraph& graph) {
    const auto rows = csv::read_rows(path);
    if (rows.size() < 3) throw IoError(path + ": need a header and at least two rows");
    const auto& header = rows.front();
    if (header.empty() || header[0] != "timestamp")
        throw IoError(path + ": first column must be 'timestamp'");

    std::unordered_map<std::string, std::size_t> column_of;
    for (std::size_t c = 1; c < header.size(); ++c) column_of.emplace(header[c], c);

    // columns get reordered to the graph's node order; extras are ignored
    const std::size_t n = graph.node_count();
    std::vector<std::size_t> pick(n);
    for (std::size_t j = 0; j < n; ++j) {
        const auto it = column_of.find(graph.node_ids()[j]);
        if (it == column_of.end())
            throw IoError(path + ": no column for station '" + graph.node_ids()[j] + "'");
        pick[j] = it->second;
    }

    SpeedSeries series;
    series.node_ids = graph.node_ids();
    const std::size_t steps = rows.size() - 1;
    series.timestamps.resize(steps);
    series.values = Tensor({steps, n});
    for (std::size_t r = 0; r < steps; ++r) {
        const auto& row = rows[r + 1];
        if (row.size() != header.size())
            throw IoError(path + ": row " + std::to_string(r + 2) + " has " +
                          std::to_string(row.size()) + " fields, header has " +
                          std::to_string(header.size()));
        series.timestamps[r] = parse_timestamp(row[0]);
        if (r > 0 && series.timestamps[r] <= series.timestamps[r - 1])
            throw IoError(path + ": timestamps must be strictly increasing (row " +
                          std::to_string(r + 2) + ")");
        for (std::size_t j = 0; j < n; ++j) {
            const std::string& field = row[pick[j]];
            series.values(r, j) = field.empty()
                                      ? std::numeric_limits<double>::quiet_NaN()
                                      : csv::parse_double(field, path + " row " +
                                                                     std::to_string(r + 2));
        }
    }

    const std::int64_t delta = series.timestamps[1] - series.timestamps[0];
    if (delta <= 0 || delta % 60 != 0)
        throw IoError(path + ": sampling interval must be a positive whole number of minutes");
    for (std::size_t r = 2; r < steps; ++r) {
        if (series.timestamps[r] - series.timestamps[r - 1] != delta)
            throw IoError(path + ": irregular sampling interval at row " +
                          std::to_string(r + 2));
    }
    series.step_minutes = static_cast<int>(delta / 60);
    return series;
}

SpeedSeries clean_series(const SpeedSeries& raw, double day_threshold) {
    if (!(day_threshold > 0.0 && day_threshold <= 1.0))
        throw ValueError("day_threshold must be in (0, 1]");
    const std::size_t steps = raw.steps();
    const std::size_t n = raw.stations();
    if (steps == 0 || n == 0) throw ValueError("empty series");

    // pass 1: drop days where too many stations have holes
    std::vector<char> keep_row(steps, 0);
    std::size_t r = 0;
    while (r < steps) {
        const std::int64_t day = floor_div(raw.timestamps[r], 86400);
        std::size_t end = r;
        while (end < steps && floor_div(raw.timestamps[end], 86400) == day) ++end;
        std::size_t broken_stations = 0;
        for (std::size_t j = 0; j < n; ++j) {
            for (std::size_t t = r; t < end; ++t) {
                if (std::isnan(raw.values(t, j))) {
                    ++broken_stations;
                    break;
                }
            }
        }
        if (static_cast<double>(broken_stations) <=
            day_threshold * static_cast<double>(n)) {
            for (std::size_t t = r; t < end; ++t) keep_row[t] = 1;
        }
        r = end;
    }

    // pass 2: drop stations that still have holes on the kept days
    std::vector<char> keep_col(n, 1);
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t t = 0; t < steps && keep_col[j]; ++t) {
            if (keep_row[t] && std::isnan(raw.values(t, j))) keep_col[j] = 0;
        }
    }

    std::size_t kept_rows = 0, kept_cols = 0;
    for (char k : keep_row) kept_rows += k;
    for (char k : keep_col) kept_cols += k;
    if (kept_rows == 0) throw ValueError("cleaning removed every day of data");
    if (kept_cols == 0) throw ValueError("cleaning removed every station");

    SpeedSeries out;
    out.step_minutes = raw.step_minutes;
    out.timestamps.reserve(kept_rows);
    for (std::size_t j = 0; j < n; ++j)
        if (keep_col[j]) out.node_ids.push_back(raw.node_ids[j]);
    out.values = Tensor({kept_rows, kept_cols});
    std::size_t tr = 0;
    for (std::size_t t = 0; t < steps; ++t) {
        if (!keep_row[t]) continue;
        out.timestamps.push_back(raw.timestamps[t]);
        std::size_t tc = 0;
        for (std::size_t j = 0; j < n; ++j) {
            if (!keep_col[j]) continue;
            out.values(tr, tc) = raw.values(t, j);
            ++tc;
        }
        ++tr;
    }
    return out;
}

WindowedBatch make_windows(const SpeedSeries& series, std::size_t history,
                           std::size_t horizon, std::size_t stride) {
    if (history == 0 || horizon == 0) throw ValueError("history and horizon must be positive");
    if (stride == 0) throw ValueError("stride must be positive");
    const std::size_t steps = series.steps();
    const std::size_t n = series.stations();
    if (n == 0) throw ValueError("series has no stations");
    const std::int64_t delta = static_cast<std::int64_t>(series.step_minutes) * 60;

    // windows never straddle a day boundary or a cleaning gap
    std::vector<std::pair<std::size_t, std::size_t>> segments; // [begin, end)
    std::size_t begin = 0;
    for (std::size_t t = 1; t <= steps; ++t) {
        const bool boundary =
            t == steps || series.timestamps[t] - series.timestamps[t - 1] != delta ||
            floor_div(series.timestamps[t], 86400) !=
                floor_div(series.timestamps[t - 1], 86400);
        if (boundary) {
            segments.emplace_back(begin, t);
            begin = t;
        }
    }

    const std::size_t span = history + horizon;
    std::size_t total = 0;
    for (const auto& [b, e] : segments)
        if (e - b >= span) total += (e - b - span) / stride + 1;
    if (total == 0)
        throw ValueError("no full window fits: need " + std::to_string(span) +
                         " consecutive steps within one day");

    WindowedBatch batch;
    batch.node_ids = series.node_ids;
    batch.step_minutes = series.step_minutes;
    batch.inputs = Tensor({total, n, history});
    batch.targets = Tensor({total, n, horizon});
    batch.anchors.reserve(total);
    std::size_t s = 0;
    for (const auto& [b, e] : segments) {
        if (e - b < span) continue;
        for (std::size_t anchor = b + history - 1; anchor + horizon < e; anchor += stride) {
            batch.anchors.push_back(series.timestamps[anchor]);
            for (std::size_t j = 0; j < n; ++j) {
                for (std::size_t f = 0; f < history; ++f)
                    batch.inputs(s, j, f) = series.values(anchor + 1 - history + f, j);
                for (std::size_t k = 0; k < horizon; ++k)
                    batch.targets(s, j, k) = series.values(anchor + 1 + k, j);
            }
            ++s;
        }
    }
    return batch;
}

namespace {

WindowedBatch slice_batch(const WindowedBatch& batch, std::size_t from, std::size_t count,
                          const char* which) {
    if (count == 0)
        throw ValueError(std::string(which) + " split is empty; adjust the ratios or add data");
    WindowedBatch out;
    out.node_ids = batch.node_ids;
    out.step_minutes = batch.step_minutes;
    const std::size_t n = batch.nodes();
    const std::size_t f = batch.history();
    const std::size_t h = batch.horizon();
    out.inputs = Tensor({count, n, f});
    out.targets = Tensor({count, n, h});
    out.anchors.assign(batch.anchors.begin() + static_cast<std::ptrdiff_t>(from),
                       batch.anchors.begin() + static_cast<std::ptrdiff_t>(from + count));
    std::copy_n(batch.inputs.data() + from * n * f, count * n * f, out.inputs.data());
    std::copy_n(batch.targets.data() + from * n * h, count * n * h, out.targets.data());
    return out;
}

} // namespace

SplitBatches split(const WindowedBatch& batch, double train_ratio, double val_ratio,
                   double test_ratio) {
    if (train_ratio < 0 || val_ratio < 0 || test_ratio < 0 ||
        std::abs(train_ratio + val_ratio + test_ratio - 1.0) > 1e-9)
        throw ValueError("split ratios must be nonnegative and sum to 1");
    const std::size_t total = batch.count();
    const auto n_train = static_cast<std::size_t>(
        std::floor(static_cast<double>(total) * train_ratio));
    const auto n_val =
        static_cast<std::size_t>(std::floor(static_cast<double>(total) * val_ratio));
    if (n_train + n_val > total) throw ValueError("split ratios overflow the window count");
    const std::size_t n_test = total - n_train - n_val;
    SplitBatches out;
    out.train = slice_batch(batch, 0, n_train, "train");
    out.val = slice_batch(batch, n_train, n_val, "val");
    out.test = slice_batch(batch, n_train + n_val, n_test, "test");
    return out;
}

Normalizer fit_normalizer(const WindowedBatch& train) {
    const std::size_t s = train.count();
    const std::size_t n = train.nodes();
    const std::size_t f = train.history();
    Normalizer norm;
    norm.mean.assign(n, 0.0);
    norm.stddev.assign(n, 0.0);
    const double count = static_cast<double>(s * f);
    for (std::size_t j = 0; j < n; ++j) {
        double sum = 0.0;
        for (std::size_t i = 0; i < s; ++i)
            for (std::size_t k = 0; k < f; ++k) sum += train.inputs(i, j, k);
        const double mean = sum / count;
        double sq = 0.0;
        for (std::size_t i = 0; i < s; ++i) {
            for (std::size_t k = 0; k < f; ++k) {
                const double d = train.inputs(i, j, k) - mean;
                sq += d * d;
            }
        }
        norm.mean[j] = mean;
        const double sd = std::sqrt(sq / count);
        norm.stddev[j] = sd > 1e-8 ? sd : 1.0; // constant node: keep z at 0
    }
    return norm;
}

namespace {

void check_node_axis(const Tensor& t, std::size_t n, const char* op) {
    if (t.rank() != 3 || t.dim(1) != n)
        throw ShapeError(std::string(op) + ": want [S x " + std::to_string(n) +
                         " x K], got " + t.shape_str());
}

} // namespace

Tensor Normalizer::normalize(const Tensor& t) const {
    check_node_axis(t, mean.size(), "normalize");
    Tensor out(t.shape());
    const std::size_t s = t.dim(0), n = t.dim(1), k = t.dim(2);
    for (std::size_t i = 0; i < s; ++i)
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t c = 0; c < k; ++c)
                out(i, j, c) = (t(i, j, c) - mean[j]) / stddev[j];
    return out;
}

Tensor Normalizer::denormalize(const Tensor& t) const {
    check_node_axis(t, mean.size(), "denormalize");
    Tensor out(t.shape());
    const std::size_t s = t.dim(0), n = t.dim(1), k = t.dim(2);
    for (std::size_t i = 0; i < s; ++i)
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t c = 0; c < k; ++c)
                out(i, j, c) = t(i, j, c) * stddev[j] + mean[j];
    return out;
}

void write_speeds_csv(const SpeedSeries& series, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << "timestamp";
    for (const auto& id : series.node_ids) out << ',' << id;
    out << '\n';
    char buf[32];
    for (std::size_t t = 0; t < series.steps(); ++t) {
        out << format_timestamp(series.timestamps[t]);
        for (std::size_t j = 0; j < series.stations(); ++j) {
            const double v = series.values(t, j);
            if (std::isnan(v)) {
                out << ',';
            } else {
                std::snprintf(buf, sizeof buf, "%.17g", v);
                out << ',' << buf;
            }
        }
        out << '\n';
    }
    if (!out.good()) throw IoError("write failed: " + path);
}

} // namespace stgt
