#pragma once

// Benchmark report writers: a human-readable text summary and a CSV with one
// row per route plus a mean row. Infraction columns are counts per km driven.

#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>

#include "m2da/sim.hpp"

namespace m2da {

namespace detail {

struct RouteRow {
    std::string name;
    double ds = 0.0, rc = 0.0, is = 0.0;
    double ped = 0.0, veh = 0.0, stat = 0.0, red = 0.0, to = 0.0, block = 0.0;
};

inline RouteRow route_row(const std::string& name, const std::vector<RouteResult>& runs) {
    RouteRow row;
    row.name = name;
    double n = static_cast<double>(runs.size());
    for (const auto& r : runs) {
        row.ds += r.ds / n;
        row.rc += r.rc / n;
        row.is += r.is / n;
        row.ped += r.per_km(r.counts.ped) / n;
        row.veh += r.per_km(r.counts.veh) / n;
        row.stat += r.per_km(r.counts.stat) / n;
        row.red += r.per_km(r.counts.red) / n;
        row.to += r.per_km(r.counts.timeout) / n;
        row.block += r.per_km(r.counts.block) / n;
    }
    return row;
}

inline std::vector<RouteRow> report_rows(const BenchmarkReport& rep) {
    std::vector<RouteRow> rows;
    for (std::size_t i = 0; i < rep.per_route.size(); ++i)
        rows.push_back(route_row(rep.route_names[i], rep.per_route[i]));
    RouteRow mean;
    mean.name = "mean";
    double n = static_cast<double>(rows.size());
    for (const auto& r : rows) {
        mean.ds += r.ds / n;
        mean.rc += r.rc / n;
        mean.is += r.is / n;
        mean.ped += r.ped / n;
        mean.veh += r.veh / n;
        mean.stat += r.stat / n;
        mean.red += r.red / n;
        mean.to += r.to / n;
        mean.block += r.block / n;
    }
    rows.push_back(mean);
    return rows;
}

}  // namespace detail

inline std::string format_text_report(const BenchmarkReport& rep) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(2);
    os << "Route            DS      RC      IS    Ped    Veh   Stat    Red     TO  Block\n";
    for (const auto& r : detail::report_rows(rep)) {
        os << std::left << std::setw(14) << r.name << std::right << std::setw(7) << r.ds
           << std::setw(8) << r.rc << std::setw(8) << r.is << std::setw(7) << r.ped
           << std::setw(7) << r.veh << std::setw(7) << r.stat << std::setw(7) << r.red
           << std::setw(7) << r.to << std::setw(7) << r.block << "\n";
    }
    os << std::setprecision(2) << "aggregate: DS " << rep.mean_ds << " +/- " << rep.std_ds
       << ", RC " << rep.mean_rc << " +/- " << rep.std_rc << ", IS " << std::setprecision(3)
       << rep.mean_is << " +/- " << rep.std_is << "\n";
    return os.str();
}

inline std::string format_csv_report(const BenchmarkReport& rep) {
    std::ostringstream os;
    os << std::setprecision(10);
    os << "route,DS,RC,IS,Ped,Veh,Stat,Red,TO,Block\n";
    for (const auto& r : detail::report_rows(rep)) {
        os << r.name << "," << r.ds << "," << r.rc << "," << r.is << "," << r.ped << "," << r.veh
           << "," << r.stat << "," << r.red << "," << r.to << "," << r.block << "\n";
    }
    return os.str();
}

inline void write_report(const BenchmarkReport& rep, const std::string& path) {
    std::ofstream txt(path);
    if (!txt) throw std::runtime_error("write_report: cannot open " + path);
    txt << format_text_report(rep);
    std::ofstream csv(path + ".csv");
    if (!csv) throw std::runtime_error("write_report: cannot open " + path + ".csv");
    csv << format_csv_report(rep);
}

}  // namespace m2da
