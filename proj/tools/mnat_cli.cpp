// Command-line front end: gen-data, train, eval, gap, sweep, aggregate, selfcheck.
//
// Exit codes: 0 success, 1 usage error, 2 runtime failure.

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "mnat/mnat.hpp"

namespace fs = std::filesystem;
using namespace mnat;

namespace {

constexpr const char* kBaselineNote =
    "The atm, oracle and regularized algorithms are reconstructions of prior-work baselines\n"
    "from one-line descriptions. They are not ports of reference implementations, and their\n"
    "numbers should not be read as reproductions of published results.\n";

struct TrainFlags {
    std::vector<std::string> sets;
    std::string config_file;
    std::size_t models = 0, iterations = 0;
    double beta = 0, eta = 0, eta_weights = 0;
    std::uint64_t seed = 0;
    bool has_seed = false;
};

void add_train_flags(CLI::App* app, TrainFlags& f) {
    app->add_option("--config", f.config_file, "key = value file with training settings");
    app->add_option("--set", f.sets, "override one setting, key=value (repeatable)");
    app->add_option("--models", f.models, "number of particles M");
    app->add_option("--iterations", f.iterations, "iterations T");
    app->add_option("--beta", f.beta, "entropy regularization");
    app->add_option("--eta", f.eta, "particle step size");
    app->add_option("--eta-weights", f.eta_weights, "multiplicative-weights step size");
    app->add_option("--seed", f.seed, "root seed");
}

TrainConfig build_config(CLI::App* app, const TrainFlags& f) {
    TrainConfig cfg;
    if (!f.config_file.empty()) {
        auto kv = read_key_values(f.config_file);
        for (const char* k : {"algo", "eps", "norm", "eval_attack_k", "eval_max_snapshots", "eval_interval", "n_train",
                              "n_test"})
            kv.erase(k);
        apply_config(cfg, kv);
    }
    for (const auto& s : f.sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw input_error("--set expects key=value, got '" + s + "'");
        apply_config_value(cfg, s.substr(0, eq), s.substr(eq + 1));
    }
    if (app->count("--models")) cfg.models = f.models;
    if (app->count("--iterations")) cfg.iterations = f.iterations;
    if (app->count("--beta")) cfg.beta = f.beta;
    if (app->count("--eta")) cfg.eta = f.eta;
    if (app->count("--eta-weights")) cfg.eta_weights = f.eta_weights;
    if (app->count("--seed")) cfg.seed = f.seed;
    cfg.validate();
    return cfg;
}

void print_kv(const KeyValues& kv) {
    for (const auto& [k, v] : kv) std::cout << k << " = " << v << '\n';
}

std::vector<std::size_t> parse_counts(const std::string& s) {
    std::vector<std::size_t> out;
    std::istringstream ss(s);
    std::string p;
    while (std::getline(ss, p, ',')) {
        const double v = parse_double(p, "list");
        if (v < 0 || v != std::floor(v)) throw input_error("expected non-negative integers, got '" + p + "'");
        out.push_back(static_cast<std::size_t>(v));
    }
    return out;
}

// --- selfcheck ------------------------------------------------------------------

bool check(const std::string& name, bool ok) {
    std::cout << (ok ? "PASS " : "FAIL ") << name << '\n';
    return ok;
}

int run_selfcheck() {
    bool all = true;
    {
        // Finite-difference gradients of the loss in theta and x.
        const Vec theta{0.7, -1.3, 0.4};
        const Vec x{0.2, 0.9};
        Vec g(3);
        loss_and_grad_theta(theta, x, -1, g);
        double worst = 0.0;
        for (std::size_t k = 0; k < 3; ++k) {
            Vec tp(theta), tm(theta);
            tp[k] += 1e-6;
            tm[k] -= 1e-6;
            const double fd = (logistic_loss_theta(tp, x, -1) - logistic_loss_theta(tm, x, -1)) / 2e-6;
            worst = std::max(worst, std::abs(fd - g[k]) / std::max(1e-12, std::abs(g[k])));
        }
        all &= check("gradient finite differences", worst <= 1e-6);
    }
    {
        // Recursive averaging equals the arithmetic mean.
        HistoryAverage h;
        h.snapshots.push_back(ParticleMixture::dirac({0.0, 0.0}));
        for (std::size_t t = 0; t < 100; ++t) h = fw_average_mixture(std::move(h), ParticleMixture::dirac({double(t), 1.0}), t);
        const auto flat = h.flatten();
        double s = 0.0;
        for (double w : flat.weights) s += w;
        all &= check("history average weights", std::abs(s - 1.0) <= 1e-12 && flat.size() == 101);
    }
    {
        Vec w{0.25, 0.25, 0.25, 0.25};
        const Vec l{0.3, 1.7, 0.0, 2.2};
        for (int k = 0; k < 10000; ++k) w = mw_update(w, l, 0.01);
        double s = 0.0;
        for (double v : w) s += v;
        all &= check("multiplicative weights stay on the simplex", std::abs(s - 1.0) <= 1e-12);
    }
    {
        // Closed-form log-partition of a linear loss on [-1, 1].
        const double beta = 0.1;
        const Ball ball{{0.0}, 1.0, Norm::Linf};
        const double q = log_partition_of([](std::span<const double> x) { return x[0]; }, ball, beta, 10000);
        const double exact = beta * std::log(beta * std::sinh(1.0 / beta));
        all &= check("log-partition closed form", std::abs(q - exact) <= 1e-6 * std::abs(exact));
    }
    {
        // Dataset round trip and closed-loop re-run from the config echo.
        const fs::path dir = fs::temp_directory_path() / ("mnat_selfcheck_" + std::to_string(::getpid()));
        fs::create_directories(dir);
        const Dataset d = generate_synthetic(20, 3);
        write_dataset(dir / "a.csv", d);
        write_dataset(dir / "b.csv", read_dataset(dir / "a.csv"));
        all &= check("dataset round trip", file_hash(dir / "a.csv") == file_hash(dir / "b.csv"));

        TrainConfig cfg;
        cfg.models = 3;
        cfg.iterations = 5;
        cfg.pla.steps = 5;
        cfg.seed = 11;
        EvalConfig ev;
        ev.attack_k = 20;
        const auto inst = make_instance(d, 1.0, Norm::L2);
        write_trace(dir / "t1.csv", train(Algorithm::frat, cfg, inst, ev).trace);
        write_key_values(dir / "cfg.txt", config_values(cfg));
        TrainConfig again;
        apply_config(again, read_key_values(dir / "cfg.txt"));
        write_trace(dir / "t2.csv", train(Algorithm::frat, again, inst, ev).trace);
        all &= check("re-run from config echo", file_hash(dir / "t1.csv") == file_hash(dir / "t2.csv"));
        fs::remove_all(dir);
    }
    return all ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Mixed Nash adversarial training: particle/Langevin solver and baselines"};
    app.require_subcommand(1);
    bool baseline_note = false;
    app.add_flag("--baseline-note", baseline_note, "print the disclaimer about baseline reconstructions");

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "write a synthetic dataset CSV");
    std::size_t gen_n = 100;
    std::uint64_t gen_seed = 0;
    std::string gen_out;
    gen->add_option("--n", gen_n, "number of samples")->check(CLI::PositiveNumber);
    gen->add_option("--seed", gen_seed, "seed");
    gen->add_option("--out", gen_out, "output CSV")->required();

    // train
    auto* tr = app.add_subcommand("train", "train one algorithm and write trace, strategy and config echo");
    TrainFlags tf;
    add_train_flags(tr, tf);
    std::string tr_algo = "frat", tr_data, tr_test, tr_out, tr_norm = "l2";
    double tr_eps = 0.0;
    std::size_t tr_eval_k = 1000, tr_eval_interval = 0, tr_snapshots = 200;
    bool tr_timing = false, tr_save_history = false;
    tr->add_option("--algo", tr_algo, "frat|sat|atm|oracle|regularized");
    tr->add_option("--data", tr_data, "training CSV")->required();
    tr->add_option("--test", tr_test, "test CSV");
    tr->add_option("--eps", tr_eps, "perturbation radius")->required();
    tr->add_option("--norm", tr_norm, "l2|linf");
    tr->add_option("--out", tr_out, "output directory")->required();
    tr->add_option("--eval-k", tr_eval_k, "uniform draws of the evaluation attack");
    tr->add_option("--eval-interval", tr_eval_interval, "trace row every n iterations (0 = final only)");
    tr->add_option("--max-snapshots", tr_snapshots, "history snapshots used when evaluating averages");
    tr->add_flag("--timing", tr_timing, "record wall-clock time in the trace");
    tr->add_flag("--save-history", tr_save_history, "write every history snapshot and the attack atoms");

    // eval
    auto* ev = app.add_subcommand("eval", "robust metrics of a saved strategy");
    std::string ev_mix, ev_data, ev_norm = "l2";
    double ev_eps = 0.0;
    std::size_t ev_k = 1000;
    std::uint64_t ev_seed = 0;
    ev->add_option("--mixture", ev_mix, "mixture CSV")->required();
    ev->add_option("--data", ev_data, "dataset CSV")->required();
    ev->add_option("--eps", ev_eps, "perturbation radius")->required();
    ev->add_option("--norm", ev_norm, "l2|linf");
    ev->add_option("--k", ev_k, "uniform draws per sample");
    ev->add_option("--seed", ev_seed, "attack seed");

    // gap
    auto* gp = app.add_subcommand("gap", "primal-dual gap reports");
    TrainFlags gf;
    add_train_flags(gp, gf);
    std::string gp_mix, gp_attack, gp_data, gp_norm = "linf", gp_out, gp_checkpoints = "10,500";
    double gp_eps = 0.0;
    std::size_t gp_res = 400;
    bool gp_grid_exact = false, gp_bound = false, gp_lagged = false, gp_uniform_start = false;
    gp->add_option("--mixture", gp_mix, "classifier mixture CSV (atomic mode)");
    gp->add_option("--attack", gp_attack, "attack atoms CSV (atomic mode)");
    gp->add_option("--data", gp_data, "dataset CSV")->required();
    gp->add_option("--eps", gp_eps, "perturbation radius")->required();
    gp->add_option("--norm", gp_norm, "l2|linf");
    gp->add_option("--resolution", gp_res, "grid cells per axis");
    gp->add_option("--out", gp_out, "directory for gaps.csv / lyapunov.csv / reports");
    gp->add_flag("--grid-exact", gp_grid_exact, "run grid-exact FRAT and report G_beta and potentials");
    gp->add_option("--checkpoints", gp_checkpoints, "iteration counts for grid-exact diagnostics");
    gp->add_flag("--lagged", gp_lagged, "grid-exact: attacker responds to the previous average");
    gp->add_flag("--uniform-start", gp_uniform_start, "grid-exact: nu^(0) uniform");
    gp->add_flag("--bound", gp_bound, "grid-exact: also check the regularization bound");

    // sweep
    auto* sw = app.add_subcommand("sweep", "eps x seed x algorithm grid with aggregation");
    TrainFlags sf;
    add_train_flags(sw, sf);
    std::string sw_eps = "0:0.1:5.0", sw_algos = "frat,sat", sw_out, sw_norm = "l2", sw_seed_list;
    std::vector<std::string> sw_algo_sets;
    std::size_t sw_seeds = 6, sw_threads = 4, sw_n_train = 100, sw_n_test = 100, sw_eval_k = 1000, sw_snapshots = 200;
    sw->add_option("--eps", sw_eps, "lo:step:hi or comma list");
    sw->add_option("--seeds", sw_seeds, "seeds 0..n-1");
    sw->add_option("--seed-list", sw_seed_list, "explicit comma-separated seeds");
    sw->add_option("--algos", sw_algos, "comma list of algorithms");
    sw->add_option("--algo-set", sw_algo_sets, "per-algorithm override algo:key=value (repeatable)");
    sw->add_option("--norm", sw_norm, "l2|linf");
    sw->add_option("--n-train", sw_n_train, "training samples per seed");
    sw->add_option("--n-test", sw_n_test, "test samples per seed");
    sw->add_option("--eval-k", sw_eval_k, "uniform draws of the evaluation attack");
    sw->add_option("--max-snapshots", sw_snapshots, "history snapshots used when evaluating averages");
    sw->add_option("--threads", sw_threads, "worker pool size (MNAT_THREADS overrides)");
    sw->add_option("--out", sw_out, "sweep directory")->required();

    auto* ag = app.add_subcommand("aggregate", "aggregate a sweep directory");
    std::string ag_dir;
    ag->add_option("--dir", ag_dir, "sweep directory")->required();

    auto* sc = app.add_subcommand("selfcheck", "quick property and oracle checks");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }
    if (baseline_note) std::cout << kBaselineNote;

    try {
        if (*gen) {
            write_dataset(gen_out, generate_synthetic(gen_n, gen_seed));
        } else if (*tr) {
            const Algorithm algo = parse_algorithm(tr_algo);
            const TrainConfig cfg = build_config(tr, tf);
            const Dataset data = read_dataset(tr_data);
            std::optional<Dataset> test;
            if (!tr_test.empty()) test = read_dataset(tr_test);
            EvalConfig evc;
            evc.attack_k = tr_eval_k;
            evc.interval = tr_eval_interval;
            evc.max_snapshots = tr_snapshots;
            evc.record_wall_time = tr_timing;
            evc.test = test ? &*test : nullptr;
            const auto inst = make_instance(data, tr_eps, parse_norm(tr_norm));
            KeyValues echo = config_values(cfg);
            echo["algo"] = to_string(algo);
            echo["eps"] = fmt(tr_eps);
            echo["norm"] = tr_norm;
            echo["eval_attack_k"] = std::to_string(tr_eval_k);
            echo["eval_interval"] = std::to_string(tr_eval_interval);
            echo["eval_max_snapshots"] = std::to_string(tr_snapshots);
            fs::create_directories(tr_out);
            write_key_values(fs::path(tr_out) / "run_config.txt", echo);
            const auto out = train(algo, cfg, inst, evc);
            write_trace(fs::path(tr_out) / "trace.csv", out.trace);
            write_mixture(fs::path(tr_out) / "mixture.csv", out.strategy);
            if (tr_save_history && out.history) write_history(fs::path(tr_out) / "history", *out.history);
            if (tr_save_history && out.attack) write_attack(fs::path(tr_out) / "attack.csv", *out.attack);
        } else if (*ev) {
            const auto mix = read_mixture(ev_mix);
            const auto data = read_dataset(ev_data);
            const auto m = robust_metrics(mix, data, ev_eps, parse_norm(ev_norm), ev_k, ev_seed, "eval");
            print_kv({{"robust_loss", fmt(m.robust_loss)},
                      {"robust_accuracy", fmt(m.robust_accuracy)},
                      {"natural_loss", fmt(m.natural_loss)},
                      {"natural_accuracy", fmt(m.natural_accuracy)}});
        } else if (*gp) {
            const auto data = read_dataset(gp_data);
            const auto inst = make_instance(data, gp_eps, parse_norm(gp_norm));
            const fs::path out_dir = gp_out.empty() ? fs::path() : fs::path(gp_out);
            if (!gp_grid_exact) {
                if (gp_mix.empty() || gp_attack.empty())
                    throw input_error("gap: atomic mode needs --mixture and --attack (or use --grid-exact)");
                const auto mix = read_mixture(gp_mix);
                const auto attack = read_attack(gp_attack);
                const auto rep = gap_unregularized(mix, attack, inst, default_theta_grid(inst.dim(), mix.particles), gp_res);
                print_kv(report_values(rep));
                if (!gp_out.empty()) append_gap_row(out_dir / "gaps.csv", "atomic", rep);
            } else {
                const TrainConfig cfg = build_config(gp, gf);
                GridExactOptions opt;
                opt.resolution = gp_res;
                opt.checkpoints = parse_counts(gp_checkpoints);
                opt.respond_to_current = !gp_lagged;
                opt.uniform_initial = gp_uniform_start;
                const auto run = frat_run_grid_exact(cfg, inst, opt);
                const auto avg = run.classifier_average();
                const auto tg = default_theta_grid(inst.dim(), avg.particles);
                const auto rep = gap_regularized(avg, run.attacker_average, inst, tg, cfg.beta, gp_res);
                print_kv(report_values(rep));
                const auto rows = lyapunov_trace(run.diagnostics, inst, tg);
                std::ostringstream ly;
                ly << "t,r_mu,r_nu,avg_payoff,gap_beta\n";
                for (const auto& r : rows)
                    ly << r.t << ',' << fmt(r.r_mu) << ',' << fmt(r.r_nu) << ',' << fmt(r.avg_payoff) << ','
                       << fmt(r.gap_beta) << '\n';
                std::cout << ly.str();
                if (!gp_out.empty()) {
                    fs::create_directories(out_dir);
                    append_gap_row(out_dir / "gaps.csv", "grid_exact_T" + std::to_string(cfg.iterations), rep);
                    std::ofstream(out_dir / "lyapunov.csv") << ly.str();
                }
                if (gp_bound) {
                    const auto b = check_regularization_bound(inst, avg, run.attacker_average, cfg.beta, tg, gp_res);
                    print_kv(report_values(b));
                    if (!gp_out.empty()) write_key_values(out_dir / "bound.txt", report_values(b));
                }
            }
        } else if (*sw) {
            SweepSpec spec;
            spec.eps = parse_eps_list(sw_eps);
            std::istringstream as(sw_algos);
            for (std::string a; std::getline(as, a, ',');) spec.algos.push_back(parse_algorithm(a));
            if (!sw_seed_list.empty()) {
                for (auto s : parse_counts(sw_seed_list)) spec.seeds.push_back(s);
            } else {
                for (std::size_t s = 0; s < sw_seeds; ++s) spec.seeds.push_back(s);
            }
            spec.norm = parse_norm(sw_norm);
            spec.n_train = sw_n_train;
            spec.n_test = sw_n_test;
            spec.base = build_config(sw, sf);
            for (const auto& s : sw_algo_sets) {
                const auto colon = s.find(':');
                const auto eq = s.find('=');
                if (colon == std::string::npos || eq == std::string::npos || eq < colon)
                    throw input_error("--algo-set expects algo:key=value, got '" + s + "'");
                spec.overrides[parse_algorithm(s.substr(0, colon))][s.substr(colon + 1, eq - colon - 1)] =
                    s.substr(eq + 1);
            }
            spec.eval.attack_k = sw_eval_k;
            spec.eval.max_snapshots = sw_snapshots;
            spec.threads = sw_threads;
            const auto failures = run_sweep(spec, sw_out);
            for (const auto& f : failures)
                std::cerr << "error: run " << to_string(f.cell.algo) << " eps=" << fmt(f.cell.eps)
                          << " seed=" << f.cell.seed << ": " << f.message << '\n';
            const auto agg = aggregate_sweep(sw_out);
            std::ofstream(fs::path(sw_out) / "aggregate.csv") << agg.csv;
            for (const auto& m : agg.missing) std::cerr << "error: missing run " << m << '\n';
            if (!failures.empty() || !agg.missing.empty()) return 2;
        } else if (*ag) {
            const auto agg = aggregate_sweep(ag_dir);
            std::ofstream(fs::path(ag_dir) / "aggregate.csv") << agg.csv;
            for (const auto& m : agg.missing) std::cerr << "error: missing run " << m << '\n';
            if (!agg.missing.empty()) return 2;
        } else if (*sc) {
            return run_selfcheck();
        }
    } catch (const input_error& e) {
        std::cerr << "error: usage: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: runtime: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
