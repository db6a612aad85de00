// cfl command line: scenario runs, connectivity sweeps, crypto benchmarks,
// and the dropout comparison table.
//
// Exit codes: 0 success, 2 configuration error, 3 protocol infeasibility.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cfl/cfl.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitInfeasible = 3;

void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw cfl::ConfigError("cannot write " + path.string());
    out << content;
}

std::string model_csv(const cfl::ModelVector& w) {
    std::ostringstream out;
    out.precision(17);
    out << "index,value\n";
    for (std::size_t i = 0; i < w.dim(); ++i) out << i << "," << w[i] << "\n";
    return out.str();
}

std::vector<std::uint64_t> parse_u64_list(const std::string& csv) {
    std::vector<std::uint64_t> out;
    std::istringstream in(csv);
    std::string tok;
    while (std::getline(in, tok, ',')) {
        if (!tok.empty()) out.push_back(std::stoull(tok));
    }
    return out;
}

std::vector<double> parse_double_list(const std::string& csv) {
    std::vector<double> out;
    std::istringstream in(csv);
    std::string tok;
    while (std::getline(in, tok, ',')) {
        if (!tok.empty()) out.push_back(std::stod(tok));
    }
    return out;
}

int cmd_run(const std::string& config_path, const std::string& protocol_override,
            double dropout_override, std::int64_t seed_override, const std::string& out_dir) {
    cfl::ExperimentConfig cfg;
    {
        std::ifstream in(config_path);
        if (!in) {
            std::cerr << "cannot open config " << config_path << "\n";
            return kExitConfig;
        }
        cfl::Json j = cfl::Json::parse(in, nullptr, true, true);
        cfg = cfl::config_from_json(j);
    }
    if (!protocol_override.empty()) {
        if (protocol_override != "cfl" && protocol_override != "ppt") {
            throw cfl::ConfigError("protocol must be cfl or ppt");
        }
        cfg.protocol = protocol_override == "cfl" ? cfl::Protocol::Cfl : cfl::Protocol::Ppt;
    }
    if (dropout_override >= 0.0) cfg.dropout_fraction = dropout_override / 100.0;
    if (seed_override >= 0) {
        cfg.seeds.sim = static_cast<std::uint64_t>(seed_override);
        cfg.seeds.dropout = cfl::mix_seed(cfg.seeds.sim, 0xD0u);
    }

    std::filesystem::create_directories(out_dir);
    cfl::BuiltScenario sc = cfl::build_scenario(cfg, cfg.protocol == cfl::Protocol::Ppt);
    cfl::Simulation sim = cfl::make_simulation(cfg, sc);
    cfl::ExperimentResult result = cfl::run_experiment(cfg, sc, sim);

    write_file(std::filesystem::path(out_dir) / "rounds.csv", result.rounds_csv());
    write_file(std::filesystem::path(out_dir) / "trace.jsonl", result.trace_jsonl());
    write_file(std::filesystem::path(out_dir) / "final_model.csv", model_csv(result.final_model));
    write_file(std::filesystem::path(out_dir) / "edges.csv", cfl::edges_csv(sc.topo));
    write_file(std::filesystem::path(out_dir) / "nodes.csv", cfl::nodes_csv(sc.topo, &sc.plan));
    write_file(std::filesystem::path(out_dir) / "config.json", cfl::to_json(cfg).dump(2) + "\n");

    std::ostringstream summary;
    summary << "protocol=" << cfl::to_string(cfg.protocol) << "\n"
            << "rounds_run=" << result.rounds_run << "\n"
            << "converged=" << (result.converged ? "yes" : "no") << "\n";
    if (!result.rounds.empty()) {
        const auto& last = result.rounds.back();
        summary << "last_round_messages=" << last.counters.aggregation_messages() << "\n"
                << "last_update_norm=" << last.update_norm << "\n";
    }
    write_file(std::filesystem::path(out_dir) / "summary.txt", summary.str());
    std::cout << summary.str();
    return kExitOk;
}

int cmd_connectivity(const std::string& n_list, const std::string& pc_list, std::size_t trials,
                     const std::string& out_file) {
    const auto ns = parse_u64_list(n_list);
    const auto pcs = parse_double_list(pc_list);
    std::string csv = cfl::connectivity_csv_header();
    for (auto n : ns) {
        for (auto pc : pcs) {
            csv += cfl::to_csv(cfl::connectivity_sweep_point(n, pc, trials, 0xC0117EC7ull));
        }
    }
    if (!out_file.empty()) {
        write_file(out_file, csv);
    }
    std::cout << csv;
    return kExitOk;
}

// Timing table in the shape of the computational-performance comparison:
// AEAD encrypt/decrypt plus the leader's noise operations, mean over many
// iterations on a fixed payload.
int cmd_bench(std::size_t dim, std::size_t iters, const std::string& out_file) {
    using clock = std::chrono::steady_clock;
    cfl::Rng rng(7);
    cfl::NonceRegistry registry;
    const cfl::Bytes key = cfl::ae_gen(128, rng);
    cfl::ModelVector x(dim);
    for (std::size_t i = 0; i < dim; ++i) x[i] = rng.uniform(-1.0, 1.0);
    cfl::AggVector acc = cfl::weighted_contribution(cfl::ArithmeticMode::Fixed, x, 1.0, 600);
    const cfl::Bytes payload = cfl::serialize(acc);
    const std::size_t payload_bytes = payload.size();

    auto time_op = [&](auto&& op) {
        op();  // warm up
        const auto start = clock::now();
        for (std::size_t i = 0; i < iters; ++i) op();
        const auto stop = clock::now();
        return std::chrono::duration<double, std::milli>(stop - start).count() /
               static_cast<double>(iters);
    };

    std::uint32_t counter = 0;
    cfl::Envelope env;
    const double t_enc = time_op([&] {
        env = cfl::ae_encrypt({payload, {0, 0, 0}}, key, cfl::make_nonce(0, 0, counter++),
                              registry);
    });
    const double t_dec = time_op([&] { (void)cfl::ae_decrypt(env, key); });
    cfl::AggVector s;
    const double t_gen = time_op([&] {
        s = cfl::sample_mask(cfl::ArithmeticMode::Fixed, dim, 1000.0, counter++);
    });
    cfl::AggVector masked = acc;
    const double t_add = time_op([&] { cfl::add_in_place(masked, s); });
    const double t_sub = time_op([&] { cfl::subtract_in_place(masked, s); });

    std::ostringstream csv;
    csv << "operation,mean_ms,payload_bytes,iterations\n";
    csv << "encrypt_aes_gcm_128," << t_enc << "," << payload_bytes << "," << iters << "\n";
    csv << "decrypt_aes_gcm_128," << t_dec << "," << payload_bytes << "," << iters << "\n";
    csv << "noise_generation," << t_gen << "," << dim * 8 << "," << iters << "\n";
    csv << "noise_addition," << t_add << "," << dim * 8 << "," << iters << "\n";
    csv << "noise_subtraction," << t_sub << "," << dim * 8 << "," << iters << "\n";
    if (!out_file.empty()) write_file(out_file, csv.str());
    std::cout << csv.str();
    return kExitOk;
}

// Dropout sweep over the anchor scenario, one row per dropout percentage,
// comparing CFL and the PPT baseline message counts.
int cmd_table1(const std::string& out_file, std::uint64_t seed) {
    const std::vector<double> percents{0, 1, 2, 5, 10, 15};
    std::ostringstream csv;
    csv << "dropout_pct,cfl_messages,ppt_messages\n";
    for (double pct : percents) {
        cfl::ExperimentConfig cfg = cfl::anchor_config();
        cfg.dropout_fraction = pct / 100.0;
        cfg.seeds.dropout = cfl::mix_seed(seed, static_cast<std::uint64_t>(pct));
        cfl::BuiltScenario sc = cfl::build_scenario(cfg, /*with_ppt=*/true);
        auto updates = cfl::synthetic_updates(sc, cfg.dim, cfg.seeds.data);
        std::uint64_t cfl_msgs = 0, ppt_msgs = 0;
        {
            cfl::Simulation sim = cfl::make_simulation(cfg, sc);
            cfl_msgs = sim.run_round(cfl::Protocol::Cfl, 0, updates).counters.aggregation_messages();
        }
        {
            cfl::Simulation sim = cfl::make_simulation(cfg, sc);
            ppt_msgs = sim.run_round(cfl::Protocol::Ppt, 0, updates).counters.aggregation_messages();
        }
        csv << pct << "," << cfl_msgs << "," << ppt_msgs << "\n";
    }
    if (!out_file.empty()) write_file(out_file, csv.str());
    std::cout << csv.str();
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"cfl: cluster federated learning protocol simulator"};
    app.require_subcommand(1);

    std::string config_path, protocol_override, out_dir = "out";
    double dropout_override = -1.0;
    std::int64_t seed_override = -1;
    auto* run = app.add_subcommand("run", "run an experiment from a config file");
    run->add_option("--config", config_path, "experiment config (json)")->required();
    run->add_option("--protocol", protocol_override, "override protocol: cfl|ppt");
    run->add_option("--dropout", dropout_override, "override dropout percentage");
    run->add_option("--seed", seed_override, "override simulation seed");
    run->add_option("--out", out_dir, "output directory");

    std::string n_list, pc_list, sweep_out;
    std::size_t trials = 1000;
    auto* conn = app.add_subcommand("connectivity", "key-ring connectivity sweep");
    conn->add_option("--n", n_list, "cluster sizes, comma separated")->required();
    conn->add_option("--pc", pc_list, "connectivity probabilities, comma separated")->required();
    conn->add_option("--trials", trials, "Monte Carlo trials per point");
    conn->add_option("--out", sweep_out, "output csv");

    std::size_t bench_dim = 64, bench_iters = 200;
    std::string bench_out;
    auto* bench = app.add_subcommand("bench", "crypto and noise operation timings");
    bench->add_option("--dim", bench_dim, "model dimension");
    bench->add_option("--iters", bench_iters, "iterations per operation");
    bench->add_option("--out", bench_out, "output csv");

    std::string table_out;
    std::uint64_t table_seed = 7;
    auto* table = app.add_subcommand("table1", "dropout sweep comparison table");
    table->add_option("--out", table_out, "output csv");
    table->add_option("--seed", table_seed, "dropout seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) {
            return cmd_run(config_path, protocol_override, dropout_override, seed_override,
                           out_dir);
        }
        if (conn->parsed()) return cmd_connectivity(n_list, pc_list, trials, sweep_out);
        if (bench->parsed()) return cmd_bench(bench_dim, bench_iters, bench_out);
        if (table->parsed()) return cmd_table1(table_out, table_seed);
    } catch (const cfl::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const cfl::UnsupportedKeyLength& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const cfl::RouteInfeasible& e) {
        std::cerr << "infeasible: " << e.what() << "\n";
        return kExitInfeasible;
    } catch (const cfl::ClusterInfeasible& e) {
        std::cerr << "infeasible: " << e.what() << "\n";
        return kExitInfeasible;
    } catch (const cfl::RingInfeasible& e) {
        std::cerr << "infeasible: " << e.what() << "\n";
        return kExitInfeasible;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return kExitOk;
}
