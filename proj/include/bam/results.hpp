// SPDX-License-Identifier: Apache-2.0
//
// Results file: one TSV row per (method, seed) matrix cell. Columns are
// method, seed, one score per task (0-100 scale, '-' when the method did not
// train that task), the average over trained tasks, wall-clock seconds,
// config digest, content addresses of any teacher checkpoints, and a status.
// Readers tolerate a truncated final line so a killed run can be resumed.
#pragma once

#include <cinttypes>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace bam::results {

struct TrialResult {
    std::string method;
    std::uint64_t seed = 0;
    std::map<std::string, double> scores;  // task id -> dev score, 0-100 scale
    double average = 0.0;
    double wall_clock_s = 0.0;
    std::uint64_t config_digest = 0;
    std::string teachers = "-";  // comma-joined checkpoint digests, '-' if none
    bool ok = true;
    std::string status = "ok";
};

namespace detail {

inline std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string format_hex(std::uint64_t v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%016" PRIx64, v);
    return buf;
}

inline std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> cols;
    std::size_t pos = 0;
    while (true) {
        const auto tab = line.find('\t', pos);
        if (tab == std::string::npos) {
            cols.push_back(line.substr(pos));
            return cols;
        }
        cols.push_back(line.substr(pos, tab - pos));
        pos = tab + 1;
    }
}

inline double parse_double(const std::string& s, const std::string& what) {
    char* end = nullptr;
    const double d = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0')
        throw std::runtime_error("results file: bad " + what + " '" + s + "'");
    return d;
}

}  // namespace detail

inline std::string header_line(const std::vector<std::string>& task_ids) {
    std::string out = "method\tseed";
    for (const auto& id : task_ids) out += "\tscore:" + id;
    out += "\taverage\twall_clock_s\tconfig_digest\tteachers\tstatus";
    return out;
}

inline std::string row_line(const TrialResult& r, const std::vector<std::string>& task_ids) {
    std::string out = r.method + "\t" + std::to_string(r.seed);
    for (const auto& id : task_ids) {
        auto it = r.scores.find(id);
        out += "\t";
        out += it == r.scores.end() ? "-" : detail::format_double(it->second);
    }
    out += "\t";
    out += r.ok ? detail::format_double(r.average) : "-";
    out += "\t" + detail::format_double(r.wall_clock_s);
    out += "\t" + detail::format_hex(r.config_digest);
    out += "\t" + (r.teachers.empty() ? std::string("-") : r.teachers);
    std::string status = r.status;
    for (char& c : status)
        if (c == '\t' || c == '\n') c = ' ';
    out += "\t" + status;
    return out;
}

struct ResultsFile {
    std::vector<std::string> task_ids;
    std::vector<TrialResult> rows;
};

inline ResultsFile read_results(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open results file: " + path);
    std::string line;
    if (!std::getline(f, line)) throw std::runtime_error("results file is empty: " + path);
    auto cols = detail::split_tabs(line);
    const std::size_t ncols = cols.size();
    if (ncols < 8 || cols[0] != "method" || cols[1] != "seed" || cols.back() != "status")
        throw std::runtime_error("results file: unrecognized header: " + path);
    ResultsFile out;
    for (std::size_t i = 2; i + 5 < ncols; ++i) {
        if (cols[i].rfind("score:", 0) != 0)
            throw std::runtime_error("results file: expected score column, got '" + cols[i] + "'");
        out.task_ids.push_back(cols[i].substr(6));
    }
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        auto fields = detail::split_tabs(line);
        if (fields.size() != ncols) continue;  // truncated final line of a killed run
        TrialResult r;
        r.method = fields[0];
        r.seed = std::strtoull(fields[1].c_str(), nullptr, 10);
        for (std::size_t i = 0; i < out.task_ids.size(); ++i) {
            const std::string& cell = fields[2 + i];
            if (cell != "-")
                r.scores[out.task_ids[i]] = detail::parse_double(cell, "score");
        }
        const std::size_t base = 2 + out.task_ids.size();
        r.status = fields[base + 4];
        r.ok = r.status == "ok";
        r.average = fields[base] == "-" ? 0.0 : detail::parse_double(fields[base], "average");
        r.wall_clock_s = detail::parse_double(fields[base + 1], "wall clock");
        r.config_digest = std::strtoull(fields[base + 2].c_str(), nullptr, 16);
        r.teachers = fields[base + 3];
        out.rows.push_back(std::move(r));
    }
    return out;
}

}  // namespace bam::results
