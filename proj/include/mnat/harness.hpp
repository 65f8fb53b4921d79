#pragma once

// Experiment orchestration: synthetic data, a single training entry point for every
// algorithm, epsilon x seed x algorithm sweeps and their aggregation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "mnat/common.hpp"
#include "mnat/eval.hpp"
#include "mnat/game.hpp"
#include "mnat/io.hpp"
#include "mnat/parallel.hpp"
#include "mnat/rng.hpp"
#include "mnat/solver.hpp"

namespace mnat {

inline constexpr std::uint64_t kTestSeedOffset = 1'000'000;

/// Labels +-1 with probability 1/2. Positives: 3/4 N((3,0), I) + 1/4 N((-3,0), I).
/// Negatives: N((0,0), I).
inline Dataset generate_synthetic(std::size_t n, std::uint64_t seed) {
    detail::require(n >= 1, "generate_synthetic: n must be >= 1");
    RngStream rng(seed, "synthetic");
    Dataset data;
    data.dim = 2;
    data.samples.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        LabeledSample s;
        s.y = rng.uniform() < 0.5 ? 1 : -1;
        double mx = 0.0;
        if (s.y == 1) mx = rng.uniform() < 0.75 ? 3.0 : -3.0;
        const double z0 = rng.normal();
        const double z1 = rng.normal();
        s.x = {mx + z0, z1};
        data.samples.push_back(std::move(s));
    }
    return data;
}

inline std::uint64_t file_hash(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw input_error("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return detail::fnv1a(ss.str());
}

inline std::string hex64(std::uint64_t v) {
    std::ostringstream ss;
    ss << std::hex;
    ss.width(16);
    ss.fill('0');
    ss << v;
    return ss.str();
}

// --- configuration ------------------------------------------------------------

/// Sets one TrainConfig field from its `key = value` spelling (the keys of config_values).
inline void apply_config_value(TrainConfig& c, const std::string& key, const std::string& value) {
    const auto num = [&] { return parse_double(value, key); };
    const auto count = [&] {
        const double v = num();
        if (v < 0 || v != std::floor(v)) throw input_error(key + ": expected a non-negative integer, got '" + value + "'");
        return static_cast<std::size_t>(v);
    };
    const auto flag = [&] {
        if (value == "true" || value == "1") return true;
        if (value == "false" || value == "0") return false;
        throw input_error(key + ": expected true|false, got '" + value + "'");
    };
    if (key == "models") c.models = count();
    else if (key == "iterations") c.iterations = count();
    else if (key == "eta") c.eta = num();
    else if (key == "eta_weights") c.eta_weights = num();
    else if (key == "beta") c.beta = num();
    else if (key == "pla_steps") c.pla.steps = count();
    else if (key == "pla_step_size") c.pla.step_size = num();
    else if (key == "pla_noise") c.pla.noise = num();
    else if (key == "pla_window") c.pla.window = count();
    else if (key == "minibatch") c.minibatch = count();
    else if (key == "keep_attack_history") c.keep_attack_history = flag();
    else if (key == "seed") c.seed = count();
    else if (key == "init_scale") c.init_scale = num();
    else if (key == "attack") c.attack = parse_attack(value);
    else if (key == "attack_k") c.attack_k = count();
    else if (key == "pgd_steps") c.pgd_steps = count();
    else if (key == "candidates") c.candidates = count();
    else if (key == "candidate_range") c.candidate_range = num();
    else if (key == "candidate_bias") c.candidate_bias = flag();
    else if (key == "candidate_min_accuracy") c.candidate_min_accuracy = num();
    else if (key == "regularized_draws") c.regularized_draws = count();
    else if (key == "plateau_tol") c.plateau_tol = num();
    else if (key == "plateau_window") c.plateau_window = count();
    else throw input_error("unknown config key '" + key + "'");
}

inline void apply_config(TrainConfig& c, const KeyValues& kv) {
    for (const auto& [k, v] : kv) apply_config_value(c, k, v);
}

/// Parses "lo:step:hi" or a comma list. Range values are rounded to 12 decimals.
inline std::vector<double> parse_eps_list(const std::string& s) {
    std::vector<double> out;
    if (s.find(':') != std::string::npos) {
        std::vector<std::string> parts;
        std::istringstream ss(s);
        std::string p;
        while (std::getline(ss, p, ':')) parts.push_back(p);
        if (parts.size() != 3) throw input_error("eps range must be lo:step:hi, got '" + s + "'");
        const double lo = parse_double(parts[0], "eps"), step = parse_double(parts[1], "eps"),
                     hi = parse_double(parts[2], "eps");
        if (!(step > 0.0) || hi < lo) throw input_error("eps range needs step > 0 and hi >= lo");
        const auto n = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9)) + 1;
        for (std::size_t k = 0; k < n; ++k) out.push_back(std::round((lo + k * step) * 1e12) / 1e12);
    } else {
        std::istringstream ss(s);
        std::string p;
        while (std::getline(ss, p, ',')) out.push_back(parse_double(p, "eps"));
    }
    if (out.empty()) throw input_error("empty eps list");
    for (double e : out)
        if (!(e >= 0.0)) throw input_error("eps must be >= 0");
    return out;
}

// --- one training run -----------------------------------------------------------

struct TrainOutput {
    Algorithm algo = Algorithm::frat;
    ParticleMixture strategy;              // what gets evaluated (thinned average for FRAT)
    RunTrace trace;
    std::optional<HistoryAverage> history; // FRAT only
    std::optional<AttackAverage> attack;   // FRAT only
};

inline TrainOutput train(Algorithm algo, const TrainConfig& cfg, const GameInstance& inst, const EvalConfig& ev) {
    TrainOutput out;
    out.algo = algo;
    switch (algo) {
        case Algorithm::frat: {
            auto r = frat_run(cfg, inst, ev);
            out.strategy = r.history.thinned(ev.max_snapshots).flatten();
            out.trace = std::move(r.trace);
            out.history = std::move(r.history);
            out.attack = std::move(r.attack);
            break;
        }
        case Algorithm::sat: {
            auto r = sat_run(cfg, inst, ev);
            out.strategy = ParticleMixture::dirac(r.model.theta());
            out.trace = std::move(r.trace);
            break;
        }
        case Algorithm::atm: {
            auto r = atm_run(cfg, inst, ev);
            out.strategy = std::move(r.mixture);
            out.trace = std::move(r.trace);
            break;
        }
        case Algorithm::oracle:
        case Algorithm::regularized: {
            const auto mode = algo == Algorithm::oracle ? WeightOnlyMode::oracle : WeightOnlyMode::regularized;
            auto r = weight_only_run(mode, generate_candidates(inst.data, cfg), cfg, inst, ev);
            out.strategy = std::move(r.mixture);
            out.trace = std::move(r.trace);
            break;
        }
    }
    return out;
}

// --- sweeps ----------------------------------------------------------------------

struct SweepSpec {
    std::vector<double> eps;
    std::vector<Algorithm> algos;
    std::vector<std::uint64_t> seeds;
    Norm norm = Norm::L2;
    std::size_t n_train = 100;
    std::size_t n_test = 100;
    TrainConfig base;
    std::map<Algorithm, KeyValues> overrides;
    EvalConfig eval;
    std::size_t threads = 1;

    void validate() const {
        detail::require(!eps.empty() && !algos.empty() && !seeds.empty(), "sweep: eps, algos and seeds must be nonempty");
        for (double e : eps) detail::require(e >= 0.0, "sweep: eps must be >= 0");
        detail::require(n_train >= 1 && n_test >= 1, "sweep: dataset sizes must be >= 1");
    }
};

struct SweepCell {
    Algorithm algo;
    double eps;
    std::uint64_t seed;
};

inline std::filesystem::path cell_dir(const std::filesystem::path& root, const SweepCell& c) {
    return root / "runs" / to_string(c.algo) / ("eps_" + fmt(c.eps)) / ("seed_" + std::to_string(c.seed));
}

inline TrainConfig cell_config(const SweepSpec& spec, const SweepCell& c) {
    TrainConfig cfg = spec.base;
    if (auto it = spec.overrides.find(c.algo); it != spec.overrides.end()) apply_config(cfg, it->second);
    cfg.seed = c.seed;
    cfg.threads = 1;
    return cfg;
}

/// Writes data, config echo, trace, strategy and manifest for one cell.
inline void run_cell(const SweepSpec& spec, const SweepCell& c, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const TrainConfig cfg = cell_config(spec, c);
    const Dataset train_data = generate_synthetic(spec.n_train, c.seed);
    const Dataset test_data = generate_synthetic(spec.n_test, c.seed + kTestSeedOffset);
    write_dataset(dir / "train.csv", train_data);
    write_dataset(dir / "test.csv", test_data);

    KeyValues echo = config_values(cfg);
    echo["algo"] = to_string(c.algo);
    echo["eps"] = fmt(c.eps);
    echo["norm"] = to_string(spec.norm);
    echo["eval_attack_k"] = std::to_string(spec.eval.attack_k);
    echo["eval_max_snapshots"] = std::to_string(spec.eval.max_snapshots);
    echo["eval_interval"] = std::to_string(spec.eval.interval);
    echo["n_train"] = std::to_string(spec.n_train);
    echo["n_test"] = std::to_string(spec.n_test);
    write_key_values(dir / "run_config.txt", echo);

    EvalConfig ev = spec.eval;
    ev.test = &test_data;
    const auto inst = make_instance(train_data, c.eps, spec.norm);
    const auto out = train(c.algo, cfg, inst, ev);
    write_mixture(dir / "mixture.csv", out.strategy);
    write_trace(dir / "trace.csv", out.trace);

    KeyValues manifest{{"algo", to_string(c.algo)},
                       {"eps", fmt(c.eps)},
                       {"seed", std::to_string(c.seed)},
                       {"train_seed", std::to_string(c.seed)},
                       {"test_seed", std::to_string(c.seed + kTestSeedOffset)},
                       {"dataset_hash", hex64(file_hash(dir / "train.csv"))},
                       {"test_dataset_hash", hex64(file_hash(dir / "test.csv"))},
                       {"files", "train.csv,test.csv,run_config.txt,mixture.csv,trace.csv"}};
    write_key_values(dir / "manifest.txt", manifest);
}

inline std::vector<SweepCell> sweep_cells(const SweepSpec& spec) {
    std::vector<SweepCell> cells;
    for (auto a : spec.algos)
        for (double e : spec.eps)
            for (auto s : spec.seeds) cells.push_back({a, e, s});
    return cells;
}

inline void write_sweep_spec(const std::filesystem::path& root, const SweepSpec& spec) {
    std::string eps, algos, seeds;
    for (double e : spec.eps) eps += (eps.empty() ? "" : ",") + fmt(e);
    for (auto a : spec.algos) algos += (algos.empty() ? "" : ",") + to_string(a);
    for (auto s : spec.seeds) seeds += (seeds.empty() ? "" : ",") + std::to_string(s);
    write_key_values(root / "sweep.txt", {{"eps", eps}, {"algos", algos}, {"seeds", seeds}});
}

struct SweepFailure {
    SweepCell cell;
    std::string message;
};

/// Runs every cell on a worker pool (capped by MNAT_THREADS). A failing cell leaves an
/// error.txt in its directory and is reported; the other cells still run.
inline std::vector<SweepFailure> run_sweep(const SweepSpec& spec, const std::filesystem::path& root) {
    spec.validate();
    std::filesystem::create_directories(root);
    write_sweep_spec(root, spec);
    const auto cells = sweep_cells(spec);
    std::vector<std::string> errors(cells.size());
    parallel_for(cells.size(), env_thread_cap(spec.threads), [&](std::size_t k) {
        const auto dir = cell_dir(root, cells[k]);
        try {
            std::filesystem::remove(dir / "error.txt");
            run_cell(spec, cells[k], dir);
        } catch (const std::exception& e) {
            errors[k] = e.what();
            std::ofstream(dir / "error.txt") << e.what() << '\n';
        }
    });
    std::vector<SweepFailure> failures;
    for (std::size_t k = 0; k < cells.size(); ++k)
        if (!errors[k].empty()) failures.push_back({cells[k], errors[k]});
    return failures;
}

struct AggregateResult {
    std::string csv;
    std::vector<std::string> missing;  // run directories without a usable trace
};

/// Aggregates the final trace row of every run into `algo,eps,metric,mean,min,max,n_seeds`.
/// Expected cells come from sweep.txt when present, otherwise from the directories found.
inline AggregateResult aggregate_sweep(const std::filesystem::path& root) {
    namespace fs = std::filesystem;
    struct Key {
        std::string algo;
        double eps;
        bool operator<(const Key& o) const { return std::tie(algo, eps) < std::tie(o.algo, o.eps); }
    };
    std::vector<std::tuple<std::string, double, std::string>> expected;  // algo, eps, seed
    if (fs::exists(root / "sweep.txt")) {
        const auto kv = read_key_values(root / "sweep.txt");
        const auto split = [](const std::string& s) {
            std::vector<std::string> v;
            std::istringstream ss(s);
            std::string p;
            while (std::getline(ss, p, ',')) v.push_back(p);
            return v;
        };
        for (const auto& a : split(kv.at("algos")))
            for (const auto& e : split(kv.at("eps")))
                for (const auto& s : split(kv.at("seeds"))) expected.emplace_back(a, parse_double(e, "eps"), s);
    } else if (fs::exists(root / "runs")) {
        for (const auto& a : fs::directory_iterator(root / "runs")) {
            if (!a.is_directory()) continue;
            for (const auto& e : fs::directory_iterator(a.path())) {
                const std::string en = e.path().filename().string();
                if (!e.is_directory() || en.rfind("eps_", 0) != 0) continue;
                for (const auto& s : fs::directory_iterator(e.path())) {
                    const std::string sn = s.path().filename().string();
                    if (!s.is_directory() || sn.rfind("seed_", 0) != 0) continue;
                    expected.emplace_back(a.path().filename().string(), parse_double(en.substr(4), "eps"), sn.substr(5));
                }
            }
        }
    }
    std::sort(expected.begin(), expected.end());

    static constexpr const char* kMetrics[] = {"robust_test_acc", "robust_test_loss", "robust_train_acc",
                                              "robust_train_loss"};
    std::map<Key, std::vector<std::array<double, 4>>> values;
    AggregateResult res;
    for (const auto& [algo, eps, seed] : expected) {
        const fs::path dir = root / "runs" / algo / ("eps_" + fmt(eps)) / ("seed_" + seed);
        const fs::path trace_path = dir / "trace.csv";
        if (!fs::exists(trace_path)) {
            res.missing.push_back(dir.string());
            continue;
        }
        RunTrace trace;
        try {
            trace = read_trace(trace_path);
        } catch (const std::exception&) {
            res.missing.push_back(dir.string());
            continue;
        }
        if (trace.rows.empty()) {
            res.missing.push_back(dir.string());
            continue;
        }
        const auto& r = trace.rows.back();
        values[{algo, eps}].push_back({r.robust_test_acc, r.robust_test_loss, r.robust_train_acc, r.robust_train_loss});
    }

    std::ostringstream out;
    out << "algo,eps,metric,mean,min,max,n_seeds\n";
    for (const auto& [key, runs] : values) {
        for (std::size_t m = 0; m < 4; ++m) {
            double sum = 0.0, lo = runs[0][m], hi = runs[0][m];
            for (const auto& r : runs) {
                sum += r[m];
                lo = std::min(lo, r[m]);
                hi = std::max(hi, r[m]);
            }
            out << key.algo << ',' << fmt(key.eps) << ',' << kMetrics[m] << ',' << fmt(sum / runs.size()) << ','
                << fmt(lo) << ',' << fmt(hi) << ',' << runs.size() << '\n';
        }
    }
    res.csv = out.str();
    return res;
}

}  // namespace mnat
