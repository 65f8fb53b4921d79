#pragma once

// Plain-text artifacts: dataset, mixture, history and attack CSVs, trace CSVs,
// key = value reports. Doubles are written in shortest round-trip form.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include "mnat/common.hpp"
#include "mnat/eval.hpp"
#include "mnat/game.hpp"
#include "mnat/measures.hpp"
#include "mnat/solver.hpp"

namespace mnat {

namespace fs = std::filesystem;

inline std::string fmt(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

inline double parse_double(const std::string& s, const std::string& where) {
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    double v = 0.0;
    const char* b = s.data();
    const char* e = b + s.size();
    if (b != e && *b == '+') ++b;
    const auto r = std::from_chars(b, e, v);
    if (r.ec != std::errc() || r.ptr != e) throw input_error(where + ": cannot parse number '" + s + "'");
    return v;
}

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) {
        while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
        while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
        out.push_back(cell);
    }
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

inline std::vector<std::vector<std::string>> read_csv(const fs::path& path, std::vector<std::string>& header) {
    std::ifstream in(path);
    if (!in) throw input_error("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw input_error(path.string() + ": empty file");
    header = split_csv(line);
    std::vector<std::vector<std::string>> rows;
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        auto row = split_csv(line);
        if (row.size() != header.size())
            throw input_error(path.string() + ": row " + std::to_string(rows.size() + 1) + " has " +
                              std::to_string(row.size()) + " fields, expected " + std::to_string(header.size()));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline std::ofstream open_out(const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    return out;
}

}  // namespace detail

// --- datasets ---------------------------------------------------------------

inline void write_dataset(const fs::path& path, const Dataset& data) {
    auto out = detail::open_out(path);
    for (std::size_t k = 0; k < data.dim; ++k) out << 'x' << k + 1 << ',';
    out << "y\n";
    for (const auto& s : data.samples) {
        for (double v : s.x) out << fmt(v) << ',';
        out << s.y << '\n';
    }
}

inline Dataset read_dataset(const fs::path& path) {
    std::vector<std::string> header;
    const auto rows = detail::read_csv(path, header);
    if (header.size() < 2 || header.back() != "y") throw input_error(path.string() + ": expected columns x1..xd,y");
    Dataset data;
    data.dim = header.size() - 1;
    for (const auto& r : rows) {
        LabeledSample s;
        for (std::size_t k = 0; k < data.dim; ++k) s.x.push_back(parse_double(r[k], path.string()));
        const double y = parse_double(r.back(), path.string());
        if (y != 1.0 && y != -1.0) throw input_error(path.string() + ": labels must be +1 or -1");
        s.y = static_cast<int>(y);
        data.samples.push_back(std::move(s));
    }
    data.validate();
    return data;
}

// --- mixtures and histories -------------------------------------------------

inline void write_mixture(const fs::path& path, const ParticleMixture& mix) {
    auto out = detail::open_out(path);
    out << "particle_id,weight";
    for (std::size_t k = 0; k < mix.theta_dim(); ++k) out << ",theta_" << k;
    out << '\n';
    for (std::size_t j = 0; j < mix.size(); ++j) {
        out << j << ',' << fmt(mix.weights[j]);
        for (double v : mix.particles[j]) out << ',' << fmt(v);
        out << '\n';
    }
}

inline ParticleMixture read_mixture(const fs::path& path) {
    std::vector<std::string> header;
    const auto rows = detail::read_csv(path, header);
    if (header.size() < 3 || header[0] != "particle_id" || header[1] != "weight")
        throw input_error(path.string() + ": expected columns particle_id,weight,theta_0..");
    ParticleMixture mix;
    for (const auto& r : rows) {
        mix.weights.push_back(parse_double(r[1], path.string()));
        Vec th;
        for (std::size_t k = 2; k < r.size(); ++k) th.push_back(parse_double(r[k], path.string()));
        mix.particles.push_back(std::move(th));
    }
    mix.validate(1e-9);
    return mix;
}

/// One mixture file per snapshot plus history_index.csv listing them in order.
inline void write_history(const fs::path& dir, const HistoryAverage& hist) {
    fs::create_directories(dir);
    auto index = detail::open_out(dir / "history_index.csv");
    index << "snapshot,file\n";
    for (std::size_t s = 0; s < hist.count(); ++s) {
        const std::string name = "snapshot_" + std::to_string(s) + ".csv";
        write_mixture(dir / name, hist.snapshots[s]);
        index << s << ',' << name << '\n';
    }
}

inline HistoryAverage read_history(const fs::path& dir) {
    std::vector<std::string> header;
    const auto rows = detail::read_csv(dir / "history_index.csv", header);
    HistoryAverage hist;
    for (const auto& r : rows) hist.snapshots.push_back(read_mixture(dir / r.at(1)));
    if (hist.snapshots.empty()) throw input_error(dir.string() + ": history has no snapshots");
    return hist;
}

/// Rows (sample_id, atom_id, x1..xd) with uniform weight over each sample's atoms.
inline void write_attack(const fs::path& path, const AttackAverage& attack) {
    auto out = detail::open_out(path);
    const std::size_t d = attack.atoms.empty() || attack.atoms[0].empty() ? 0 : attack.atoms[0][0].size();
    out << "sample_id,atom_id";
    for (std::size_t k = 0; k < d; ++k) out << ",x" << k + 1;
    out << '\n';
    for (std::size_t i = 0; i < attack.atoms.size(); ++i)
        for (std::size_t a = 0; a < attack.atoms[i].size(); ++a) {
            out << i << ',' << a;
            for (double v : attack.atoms[i][a]) out << ',' << fmt(v);
            out << '\n';
        }
}

inline AttackAverage read_attack(const fs::path& path) {
    std::vector<std::string> header;
    const auto rows = detail::read_csv(path, header);
    if (header.size() < 3 || header[0] != "sample_id" || header[1] != "atom_id")
        throw input_error(path.string() + ": expected columns sample_id,atom_id,x1..");
    AttackAverage attack;
    for (const auto& r : rows) {
        const auto i = static_cast<std::size_t>(parse_double(r[0], path.string()));
        if (i > attack.atoms.size()) throw input_error(path.string() + ": sample ids must be contiguous from 0");
        if (i == attack.atoms.size()) attack.atoms.emplace_back();
        Vec x;
        for (std::size_t k = 2; k < r.size(); ++k) x.push_back(parse_double(r[k], path.string()));
        attack.atoms[i].push_back(std::move(x));
    }
    if (attack.atoms.empty()) throw input_error(path.string() + ": no atoms");
    attack.updates = attack.atoms[0].size() - 1;
    return attack;
}

// --- traces and reports -----------------------------------------------------

inline constexpr const char* kTraceHeader = "iter,robust_train_loss,robust_train_acc,robust_test_loss,robust_test_acc,game_value,wall_ms";

inline void write_trace(const fs::path& path, const RunTrace& trace) {
    auto out = detail::open_out(path);
    out << kTraceHeader << '\n';
    for (const auto& r : trace.rows)
        out << r.iter << ',' << fmt(r.robust_train_loss) << ',' << fmt(r.robust_train_acc) << ','
            << fmt(r.robust_test_loss) << ',' << fmt(r.robust_test_acc) << ',' << fmt(r.game_value) << ','
            << fmt(r.wall_ms) << '\n';
}

inline RunTrace read_trace(const fs::path& path) {
    std::vector<std::string> header;
    const auto rows = detail::read_csv(path, header);
    if (header.size() != 7 || header[0] != "iter") throw input_error(path.string() + ": not a trace file");
    RunTrace trace;
    for (const auto& r : rows) {
        TraceRow t;
        t.iter = static_cast<std::size_t>(parse_double(r[0], path.string()));
        t.robust_train_loss = parse_double(r[1], path.string());
        t.robust_train_acc = parse_double(r[2], path.string());
        t.robust_test_loss = parse_double(r[3], path.string());
        t.robust_test_acc = parse_double(r[4], path.string());
        t.game_value = parse_double(r[5], path.string());
        t.wall_ms = parse_double(r[6], path.string());
        trace.rows.push_back(t);
    }
    return trace;
}

using KeyValues = std::map<std::string, std::string>;

inline void write_key_values(const fs::path& path, const KeyValues& kv) {
    auto out = detail::open_out(path);
    for (const auto& [k, v] : kv) out << k << " = " << v << '\n';
}

inline KeyValues read_key_values(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw input_error("cannot open " + path.string());
    KeyValues kv;
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find(" = ");
        if (eq == std::string::npos) continue;
        kv[line.substr(0, eq)] = line.substr(eq + 3);
    }
    return kv;
}

inline KeyValues config_values(const TrainConfig& c) {
    return {
        {"models", std::to_string(c.models)},
        {"iterations", std::to_string(c.iterations)},
        {"eta", fmt(c.eta)},
        {"eta_weights", fmt(c.eta_weights)},
        {"beta", fmt(c.beta)},
        {"pla_steps", std::to_string(c.pla.steps)},
        {"pla_step_size", fmt(c.pla.step_size)},
        {"pla_noise", fmt(c.pla.noise)},
        {"pla_window", std::to_string(c.pla.window)},
        {"minibatch", std::to_string(c.minibatch)},
        {"keep_attack_history", c.keep_attack_history ? "true" : "false"},
        {"seed", std::to_string(c.seed)},
        {"init_scale", fmt(c.init_scale)},
        {"attack", to_string(c.attack)},
        {"attack_k", std::to_string(c.attack_k)},
        {"pgd_steps", std::to_string(c.pgd_steps)},
        {"candidates", std::to_string(c.candidates)},
        {"candidate_range", fmt(c.candidate_range)},
        {"candidate_bias", c.candidate_bias ? "true" : "false"},
        {"candidate_min_accuracy", fmt(c.candidate_min_accuracy)},
        {"regularized_draws", std::to_string(c.regularized_draws)},
        {"plateau_tol", fmt(c.plateau_tol)},
        {"plateau_window", std::to_string(c.plateau_window)},
    };
}

inline KeyValues report_values(const GapReport& r) {
    return {{"sup_term", fmt(r.sup_term)},
            {"inf_term", fmt(r.inf_term)},
            {"gap", fmt(r.gap)},
            {"beta", fmt(r.beta)},
            {"theta_grid_size", std::to_string(r.theta_grid_size)},
            {"theta_polished", r.theta_polished ? "true" : "false"},
            {"x_resolution", std::to_string(r.x_resolution)},
            {"grid_error", fmt(r.grid_error)}};
}

inline KeyValues report_values(const BoundReport& r) {
    return {{"g0", fmt(r.g0)},
            {"g_beta", fmt(r.g_beta)},
            {"beta", fmt(r.beta)},
            {"eps", fmt(r.eps)},
            {"dim_x", std::to_string(r.dim_x)},
            {"lipschitz_estimate", fmt(r.lipschitz_estimate)},
            {"lipschitz_used", fmt(r.lipschitz_used)},
            {"regularization_term", fmt(r.regularization_term)},
            {"slack", fmt(r.slack)},
            {"tolerance", fmt(r.tolerance)},
            {"satisfied", r.satisfied ? "true" : "false"}};
}

/// Appends one row to gaps.csv (header written when the file is new).
inline void append_gap_row(const fs::path& path, const std::string& label, const GapReport& r) {
    const bool fresh = !fs::exists(path);
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::app);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    if (fresh) out << "label,beta,sup_term,inf_term,gap,x_resolution,theta_grid_size,grid_error\n";
    out << label << ',' << fmt(r.beta) << ',' << fmt(r.sup_term) << ',' << fmt(r.inf_term) << ',' << fmt(r.gap) << ','
        << r.x_resolution << ',' << r.theta_grid_size << ',' << fmt(r.grid_error) << '\n';
}

/// Per-step PLA losses, rows (sample_id, step, loss).
inline void write_pla_diagnostics(const fs::path& path, const std::vector<std::vector<double>>& losses) {
    auto out = detail::open_out(path);
    out << "sample_id,step,loss\n";
    for (std::size_t i = 0; i < losses.size(); ++i)
        for (std::size_t s = 0; s < losses[i].size(); ++s) out << i << ',' << s << ',' << fmt(losses[i][s]) << '\n';
}

}  // namespace mnat
