// SPDX-License-Identifier: Apache-2.0
//
// Flat key-value experiment configuration. Every knob has a default; files
// override defaults; unknown keys are rejected so typos surface immediately.
// The digest over the canonical (sorted) key=value listing identifies a
// configuration in results files and checkpoints.
#pragma once

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "bam/rng.hpp"

namespace bam::config {

inline const std::map<std::string, std::string>& default_entries() {
    static const std::map<std::string, std::string> defaults = {
        // synthetic suite
        {"suite_seed", "42"},
        {"input_width", "32"},
        {"latent_width", "8"},
        {"noise_rate", "0.1"},
        {"relatedness_perturbation", "0.2"},
        {"calibration_size", "2001"},
        {"dev_size", "1000"},
        {"big_train", "20000"},
        {"small_train", "500"},
        {"med_train", "2000"},
        {"reg_train", "2000"},
        // model
        {"hidden", "64 64"},
        // training
        {"base_lr", "1e-4"},
        {"layer_decay", "0.9"},
        {"teacher_layer_decay", "auto"},  // auto = pick from {1.0, 0.9} by dev score
        {"batch_size", "32"},
        {"teacher_epochs", "3"},
        {"student_epochs", "6"},
        {"sampling_exponent", "0.75"},
        {"finetune_lr_scale", "0.1"},
        {"finetune_epochs", "3"},
        {"teacher_mode", "fresh"},  // fresh = retrain per seed; shared = seed 0 teachers
        // matrix
        {"methods", "single multi single_multi"},
        {"seeds", "0..19"},
        // significance
        {"significance_test", "mannwhitney"},  // mannwhitney | bootstrap
        {"alpha", "0.05"},
        {"bootstrap_resamples", "10000"},
        {"comparisons", "single_multi>single single_multi>multi"},
    };
    return defaults;
}

class Config {
  public:
    Config() : kv_(default_entries()) {}

    static Config from_file(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw std::runtime_error("cannot open config: " + path);
        Config cfg;
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(f, line)) {
            ++line_no;
            const auto start = line.find_first_not_of(" \t");
            if (start == std::string::npos || line[start] == '#') continue;
            const auto space = line.find(' ', start);
            if (space == std::string::npos)
                throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                         ": expected 'key value'");
            const std::string key = line.substr(start, space - start);
            std::string value = line.substr(space + 1);
            const auto last = value.find_last_not_of(" \t\r");
            value = last == std::string::npos ? "" : value.substr(0, last + 1);
            if (!default_entries().count(key))
                throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                         ": unknown config key '" + key + "'");
            cfg.kv_[key] = value;
        }
        return cfg;
    }

    void set(const std::string& key, const std::string& value) {
        if (!default_entries().count(key))
            throw std::invalid_argument("unknown config key '" + key + "'");
        kv_[key] = value;
    }

    const std::string& get(const std::string& key) const {
        auto it = kv_.find(key);
        if (it == kv_.end()) throw std::invalid_argument("unknown config key '" + key + "'");
        return it->second;
    }

    double get_double(const std::string& key) const {
        const std::string& v = get(key);
        char* end = nullptr;
        const double d = std::strtod(v.c_str(), &end);
        if (end == v.c_str() || *end != '\0')
            throw std::invalid_argument("config key '" + key + "': bad number '" + v + "'");
        return d;
    }

    std::size_t get_size(const std::string& key) const {
        const double d = get_double(key);
        if (d < 0.0 || d != double(std::size_t(d)))
            throw std::invalid_argument("config key '" + key + "': expected a count");
        return std::size_t(d);
    }

    std::vector<std::string> get_list(const std::string& key) const {
        std::istringstream ss(get(key));
        std::vector<std::string> out;
        std::string tok;
        while (ss >> tok) out.push_back(tok);
        return out;
    }

    /// "0..19" (inclusive range) or an explicit whitespace-separated list.
    std::vector<std::uint64_t> seeds() const {
        const std::string& v = get("seeds");
        const auto dots = v.find("..");
        std::vector<std::uint64_t> out;
        if (dots != std::string::npos) {
            const std::uint64_t lo = std::stoull(v.substr(0, dots));
            const std::uint64_t hi = std::stoull(v.substr(dots + 2));
            if (hi < lo) throw std::invalid_argument("config key 'seeds': empty range");
            for (std::uint64_t s = lo; s <= hi; ++s) out.push_back(s);
        } else {
            for (const auto& tok : get_list("seeds")) out.push_back(std::stoull(tok));
        }
        if (out.empty()) throw std::invalid_argument("config key 'seeds': none given");
        return out;
    }

    /// Digest of the full canonical key=value listing.
    std::uint64_t digest() const {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (const auto& [k, v] : kv_) {
            h = fnv1a64(k.data(), k.size(), h);
            h = fnv1a64("=", 1, h);
            h = fnv1a64(v.data(), v.size(), h);
            h = fnv1a64("\n", 1, h);
        }
        return h;
    }

    const std::map<std::string, std::string>& entries() const { return kv_; }

  private:
    std::map<std::string, std::string> kv_;
};

}  // namespace bam::config
