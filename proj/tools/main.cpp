#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "adcsl/errors.hpp"
#include "adcsl/harness.hpp"
#include "check.hpp"

namespace {

using namespace adcsl;

struct Overrides {
    std::string config_path;
    std::string codec;
    std::string xi;
    std::size_t clusters = 0;
    std::size_t tokens = 0;
    std::size_t topk = 0;
    std::size_t bottleneck = 0;
    std::size_t superposition = 0;
    std::string strategy;
    std::size_t split_point = 0;
    std::size_t batch_size = 0;
    double budget_epochs = -1.0;
    std::string seed;
    std::string transport;
    std::string addr;
    std::string out;
    std::string dataset;
    std::string wire_dtype;
    double lr = 0.0;
    std::size_t eval_every = 0;
    std::size_t samples_per_class = 0;
    std::string name;
};

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void add_run_flags(CLI::App* app, Overrides& o, bool lists) {
    app->add_option("--config", o.config_path, "JSON run config");
    app->add_option("--codec", o.codec, lists ? "codecs, comma separated" : "base|topk|randtopk|bottlenet|c3sl|adc");
    app->add_option("--xi", o.xi, lists ? "target ratios, comma separated" : "target overall compression ratio");
    app->add_option("--clusters", o.clusters, "ADC clusters T");
    app->add_option("--tokens", o.tokens, "ADC kept tokens k (CLS included)");
    app->add_option("--topk", o.topk, "Top-K kept scalars per sample");
    app->add_option("--bottleneck", o.bottleneck, "BottleNet++ width d'");
    app->add_option("--superposition", o.superposition, "C3-SL samples per slot R");
    app->add_option("--strategy", o.strategy, "ADC merge vector: cls_score|cls_token|avg_token");
    app->add_option("--split-point", o.split_point, "client blocks l");
    app->add_option("--batch-size", o.batch_size, "batch size B");
    app->add_option("--budget-epochs", o.budget_epochs, "budget in base epochs");
    app->add_option("--seed", o.seed, lists ? "seeds, comma separated" : "run seed");
    app->add_option("--transport", o.transport, "inprocess|tcp");
    app->add_option("--addr", o.addr, "host:port");
    app->add_option("--out", o.out, "output directory");
    app->add_option("--dataset", o.dataset, "dataset file (default: synthetic)");
    app->add_option("--wire-dtype", o.wire_dtype, "f32|f64");
    app->add_option("--lr", o.lr, "Adam learning rate");
    app->add_option("--eval-every", o.eval_every, "test accuracy every N iterations");
    app->add_option("--samples-per-class", o.samples_per_class, "synthetic samples per class");
    if (!lists) app->add_option("--name", o.name, "run name (file stem of the metrics)");
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    for (std::string item; std::getline(ss, item, ',');) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

double parse_double(const std::string& s, const char* flag) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used == s.size()) return v;
    } catch (const std::exception&) {
    }
    throw UsageError(std::string("invalid value for ") + flag + ": '" + s + "'");
}

std::uint64_t parse_u64(const std::string& s, const char* flag) {
    try {
        std::size_t used = 0;
        const auto v = std::stoull(s, &used);
        if (used == s.size()) return v;
    } catch (const std::exception&) {
    }
    throw UsageError(std::string("invalid value for ") + flag + ": '" + s + "'");
}

RunConfig build_config(const Overrides& o, const std::string& codec, const std::string& xi, const std::string& seed) {
    RunConfig c = o.config_path.empty() ? RunConfig{} : RunConfig::load(o.config_path);
    if (!codec.empty()) c.codec.kind = codec_kind_from_string(codec);
    if (!xi.empty()) c.xi = parse_double(xi, "--xi");
    const bool adc = c.codec.kind == CodecKind::adc;
    if ((o.clusters || o.tokens || !o.strategy.empty()) && !adc) {
        throw UsageError("--clusters/--tokens/--strategy only apply to --codec adc");
    }
    if (o.topk && c.codec.kind != CodecKind::topk && c.codec.kind != CodecKind::randtopk) {
        throw UsageError("--topk only applies to topk/randtopk");
    }
    if (o.bottleneck && c.codec.kind != CodecKind::bottlenet) throw UsageError("--bottleneck only applies to bottlenet");
    if (o.superposition && c.codec.kind != CodecKind::c3sl) throw UsageError("--superposition only applies to c3sl");
    if (o.clusters) c.codec.clusters = o.clusters;
    if (o.tokens) c.codec.tokens_kept = o.tokens;
    if (o.topk) c.codec.topk = o.topk;
    if (o.bottleneck) c.codec.bottleneck = o.bottleneck;
    if (o.superposition) c.codec.superposition = o.superposition;
    if (!o.strategy.empty()) c.codec.strategy = merge_vector_from_string(o.strategy);
    if (o.split_point) c.model.split_point = o.split_point;
    if (o.batch_size) c.batch_size = o.batch_size;
    if (o.budget_epochs >= 0.0) c.budget_epochs = o.budget_epochs;
    if (!seed.empty()) c.seed = parse_u64(seed, "--seed");
    if (!o.transport.empty()) c.transport = o.transport;
    if (!o.addr.empty()) c.addr = o.addr;
    if (!o.out.empty()) c.out_dir = o.out;
    if (!o.dataset.empty()) c.dataset_path = o.dataset;
    if (!o.wire_dtype.empty()) c.wire_dtype = dtype_from_string(o.wire_dtype);
    if (o.lr > 0.0) c.lr = o.lr;
    if (o.eval_every) c.eval_every = o.eval_every;
    if (o.samples_per_class) c.data.samples_per_class = o.samples_per_class;
    if (!o.name.empty()) c.run_name = o.name;
    if (c.codec.kind != CodecKind::base && !c.xi && c.codec.topk == 0 && c.codec.bottleneck == 0 &&
        c.codec.superposition == 0 && c.codec.clusters == 0) {
        throw UsageError("codec " + to_string(c.codec.kind) + " needs --xi or its own parameters");
    }
    return c;
}

void print_summary(const RunSummary& s) {
    std::printf("%s: iterations=%zu xi=%.6g test_acc=%.4f val_acc=%.4f -> %s\n", s.name.c_str(), s.iterations,
                s.ratios.overall(), s.test_accuracy, s.val_accuracy, s.jsonl_path.c_str());
}

int cmd_run(const Overrides& o) {
    const RunConfig c = build_config(o, o.codec, o.xi, o.seed);
    print_summary(run_experiment(c));
    return 0;
}

int cmd_sweep(const Overrides& o) {
    const auto codecs = o.codec.empty() ? std::vector<std::string>{"adc"} : split_list(o.codec);
    const auto xis = o.xi.empty() ? std::vector<std::string>{"0.25"} : split_list(o.xi);
    const auto seeds = o.seed.empty() ? std::vector<std::string>{"0"} : split_list(o.seed);
    std::vector<RunConfig> configs;
    for (const auto& codec : codecs) {
        // base has no ratio to vary
        const auto codec_xis = codec == "base" ? std::vector<std::string>{""} : xis;
        for (const auto& xi : codec_xis) {
            for (const auto& seed : seeds) configs.push_back(build_config(o, codec, xi, seed));
        }
    }
    const Dataset data = load_run_dataset(configs.front());
    const std::filesystem::path dir = configs.front().output_dir();
    std::filesystem::create_directories(dir);
    const auto path = (dir / "sweep.csv").string();
    std::ofstream csv(path);
    if (!csv) throw std::runtime_error("cannot write " + path);
    csv << RunSummary::csv_header() << '\n';
    for (const auto& c : configs) {
        const auto s = run_experiment(c, data);
        csv << s.csv_row() << '\n' << std::flush;
        print_summary(s);
    }
    std::printf("summary: %s\n", path.c_str());
    return 0;
}

int cmd_client(const Overrides& o) {
    if (o.addr.empty()) throw UsageError("client needs --addr host:port");
    RunConfig c = build_config(o, o.codec, o.xi, o.seed);
    const Dataset data = load_run_dataset(c);
    auto endpoint = tcp_connect(Address::parse(c.addr), 10000);
    print_summary(run_client(c, data, *endpoint));
    return 0;
}

int cmd_serve(const std::string& addr, std::size_t sessions) {
    TcpListener listener(Address::parse(addr));
    std::printf("listening on port %u\n", static_cast<unsigned>(listener.port()));
    std::fflush(stdout);
    for (std::size_t i = 0; sessions == 0 || i < sessions; ++i) {
        auto endpoint = listener.accept();
        serve(*endpoint);
    }
    return 0;
}

int cmd_gen_data(const std::string& out, const RunConfig& base) {
    RunConfig c = base;
    c.resolve();
    const Dataset data = generate_synthetic(c.data);
    save_dataset(data, out);
    std::printf("wrote %zu samples (%zu classes) to %s\n", data.size(), data.classes, out.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Split-learning simulator for ViTs with attention-based double compression"};
    app.require_subcommand(1);

    Overrides run_o, sweep_o, client_o;
    auto* run = app.add_subcommand("run", "single experiment");
    add_run_flags(run, run_o, false);
    auto* sweep = app.add_subcommand("sweep", "grid over codecs x xi x seeds");
    add_run_flags(sweep, sweep_o, true);
    auto* client = app.add_subcommand("client", "client role over TCP");
    add_run_flags(client, client_o, false);

    std::string serve_addr = "127.0.0.1:5555";
    std::size_t sessions = 1;
    auto* serve = app.add_subcommand("serve", "server role over TCP");
    serve->add_option("--addr", serve_addr, "host:port to listen on");
    serve->add_option("--sessions", sessions, "client sessions to serve (0: forever)");

    std::string data_out = "dataset.bin";
    std::size_t classes = 0, per_class = 0;
    std::string data_seed;
    auto* gen = app.add_subcommand("gen-data", "write a synthetic dataset file");
    gen->add_option("--out", data_out, "dataset path");
    gen->add_option("--classes", classes, "class count");
    gen->add_option("--samples-per-class", per_class, "samples per class");
    gen->add_option("--seed", data_seed, "data seed");

    bool quick = false;
    auto* check = app.add_subcommand("check", "invariant suite: gradients, ratios, lossless limits");
    check->add_flag("--quick", quick, "fewer seeds");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (*run) return cmd_run(run_o);
        if (*sweep) return cmd_sweep(sweep_o);
        if (*client) return cmd_client(client_o);
        if (*serve) return cmd_serve(serve_addr, sessions);
        if (*gen) {
            RunConfig c;
            if (classes) c.data.classes = classes;
            if (per_class) c.data.samples_per_class = per_class;
            if (!data_seed.empty()) c.data.seed = parse_u64(data_seed, "--seed");
            return cmd_gen_data(data_out, c);
        }
        if (*check) return run_checks(quick) ? 0 : 1;
    } catch (const UsageError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return 2;
    } catch (const ContractError& e) {
        std::fprintf(stderr, "invalid configuration: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
