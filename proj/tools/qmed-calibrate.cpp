// Scenario tuning helper: runs a scenario (optionally sweeping parameter
// alternatives) and prints the numbers the tuning loop cares about — per-pair
// volumes/ratios/means, indexer-view means per caller, and the
// single-last-obs availability error per QM.
#include <algorithm>
#include <chrono>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "qmed/domain.hpp"
#include "qmed/predictors.hpp"
#include "qmed/simnet.hpp"

namespace {

using namespace qmed;

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

// "link a b fwd_median={0.2,0.4} rev_loss=0.1" -> one line per alternative;
// multiple {...} groups multiply out.
std::vector<std::string> expand_alternatives(const std::string& line) {
    auto open = line.find('{');
    if (open == std::string::npos) return {line};
    auto close = line.find('}', open);
    if (close == std::string::npos) throw std::runtime_error("unbalanced { in --vary: " + line);
    std::vector<std::string> out;
    for (const std::string& alt : split(line.substr(open + 1, close - open - 1), ',')) {
        std::string next = line.substr(0, open) + alt + line.substr(close + 1);
        for (auto& expanded : expand_alternatives(next)) out.push_back(std::move(expanded));
    }
    return out;
}

// Declaration identity: which original line a variant replaces.
std::string line_key(const std::string& line) {
    std::istringstream in(line);
    std::string kind, a, b;
    in >> kind;
    if (kind == "link") {
        in >> a >> b;
        return kind + " " + a + " " + b;
    }
    if (kind == "horizon" || kind == "seed") return kind;
    in >> a;
    return kind + " " + a;
}

struct Combo {
    std::vector<std::string> overrides;
};

void print_scorecard(const simnet::SimulationOutput& sim, std::ostream& out) {
    auto qm_stats = pair_stats(sim.qm_view);

    std::map<QmId, std::uint64_t> qm_volume;
    for (const auto& rec : sim.qm_view) ++qm_volume[rec.obs.qm];

    for (const auto& [key, tally] : qm_stats) {
        out << "pair qm=" << key.qm << " indexer=" << key.indexer
            << " attempts=" << tally.attempts;
        char buf[64];
        if (auto r = tally.response_ratio()) {
            std::snprintf(buf, sizeof buf, "%.3f", *r);
            out << " ratio=" << buf;
        }
        if (auto m = tally.mean_elapsed()) {
            std::snprintf(buf, sizeof buf, "%.3f", *m);
            out << " qm_mean=" << buf;
        }
        out << '\n';
    }

    for (const auto& [key, s] : simnet::indexer_view_stats(sim.indexer_view)) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.4f", s.mean());
        out << "service indexer=" << key.first << " caller=" << key.second
            << " mean=" << buf << " n=" << s.count << '\n';
    }

    auto report = predictors::per_indexer_mse(sim.qm_view, predictors::Method::SingleLastObs,
                                              {}, predictors::Metric::Availability);
    std::vector<std::pair<QmId, std::uint64_t>> by_volume(qm_volume.begin(), qm_volume.end());
    std::sort(by_volume.begin(), by_volume.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    for (const auto& [qm, volume] : by_volume) {
        auto it = report.per_qm.find(qm);
        if (it == report.per_qm.end()) continue;
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.4f", it->second.mse);
        out << "slo-avail qm=" << qm << " mse=" << buf << " n_obs=" << volume << '\n';
    }
    if (by_volume.size() >= 2) {
        double ssq = 0.0;
        std::uint64_t n = 0;
        for (int i = 0; i < 2; ++i) {
            auto it = report.per_qm.find(by_volume[i].first);
            if (it == report.per_qm.end()) continue;
            ssq += it->second.sq_err_sum;
            n += it->second.n_predictions;
        }
        if (n > 0) {
            char buf[64];
            std::snprintf(buf, sizeof buf, "%.4f", ssq / static_cast<double>(n));
            out << "slo-avail pooled-top2 (" << by_volume[0].first << ","
                << by_volume[1].first << ") mse=" << buf << '\n';
        }
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"scenario calibration sweeps"};
    std::string scenario_path;
    std::vector<std::string> vary;
    double horizon = 0.0;
    std::uint64_t seed = 0;
    bool seed_set = false;
    app.add_option("scenario", scenario_path, "base scenario file")->required();
    app.add_option("--vary", vary,
                   "scenario line with {a,b,c} alternatives; replaces the matching "
                   "declaration; repeatable (combinations multiply)");
    app.add_option("--horizon", horizon, "override horizon seconds");
    app.add_option("--seed", seed, "override seed")->each([&](const std::string&) {
        seed_set = true;
    });
    CLI11_PARSE(app, argc, argv);

    std::ifstream file(scenario_path);
    if (!file) {
        std::cerr << "cannot read " << scenario_path << '\n';
        return 2;
    }
    std::vector<std::string> base_lines;
    for (std::string line; std::getline(file, line);) base_lines.push_back(line);

    std::vector<std::vector<std::string>> groups;
    try {
        for (const auto& v : vary) groups.push_back(expand_alternatives(v));
    } catch (const std::exception& e) {
        std::cerr << e.what() << '\n';
        return 2;
    }

    std::vector<Combo> combos{{}};
    for (const auto& group : groups) {
        std::vector<Combo> next;
        for (const auto& combo : combos) {
            for (const auto& alt : group) {
                Combo c = combo;
                c.overrides.push_back(alt);
                next.push_back(std::move(c));
            }
        }
        combos = std::move(next);
    }

    int combo_idx = 0;
    for (const auto& combo : combos) {
        ++combo_idx;
        std::vector<std::string> lines = base_lines;
        for (const auto& ov : combo.overrides) {
            const std::string key = line_key(ov);
            bool replaced = false;
            for (auto& line : lines) {
                if (line_key(line) == key) {
                    line = ov;
                    replaced = true;
                    break;
                }
            }
            if (!replaced) lines.push_back(ov);
        }
        if (horizon > 0.0) {
            bool replaced = false;
            for (auto& line : lines) {
                if (line_key(line) == "horizon") {
                    line = "horizon " + format_double(horizon);
                    replaced = true;
                }
            }
            if (!replaced) lines.push_back("horizon " + format_double(horizon));
        }

        std::ostringstream text;
        for (const auto& line : lines) text << line << '\n';

        std::cout << "=== combo " << combo_idx << "/" << combos.size() << '\n';
        for (const auto& ov : combo.overrides) std::cout << "  " << ov << '\n';
        try {
            std::istringstream in(text.str());
            auto scenario = simnet::parse_scenario(in);
            if (seed_set) scenario.seed = seed;
            auto t0 = std::chrono::steady_clock::now();
            auto sim = simnet::run_simulation(scenario);
            auto t1 = std::chrono::steady_clock::now();
            print_scorecard(sim, std::cout);
            std::chrono::duration<double> wall = t1 - t0;
            char buf[64];
            std::snprintf(buf, sizeof buf, "%.2f", wall.count());
            std::cout << "sim-wall-s " << buf << '\n';
        } catch (const std::exception& e) {
            std::cout << "error: " << e.what() << '\n';
        }
    }
    return 0;
}
