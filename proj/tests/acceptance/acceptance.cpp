// Acceptance suite: one PASS/FAIL line per criterion on stdout, progress on stderr.
// Usage: adcsl_acceptance [criterion numbers...]   (default: all ten)

#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "adcsl/adc.hpp"
#include "adcsl/baselines.hpp"
#include "adcsl/harness.hpp"
#include "adcsl/kmeans.hpp"
#include "adcsl/ops.hpp"
#include "support/fixtures.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"
#include "support/session.hpp"

using namespace adcsl;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass;
    std::string detail;
};

std::string format(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof(buf), f, args...);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

fs::path scratch_root() {
    static const fs::path root = [] {
        fs::path p = fs::temp_directory_path() / ("adcsl_acceptance_" + std::to_string(::getpid()));
        fs::create_directories(p);
        return p;
    }();
    return root;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

// 1 ------------------------------------------------------------------------------------

Outcome gradient_correctness() {
    const auto t0 = std::chrono::steady_clock::now();
    using V = std::vector<Var>;
    struct Case {
        const char* name;
        std::vector<Shape> shapes;
        oracle::Builder f;
    };
    const std::vector<Case> cases{
        {"matmul", {{3, 4}, {4, 2}}, [](Tape&, const V& v) { return matmul(v[0], v[1]); }},
        {"matmul batched", {{2, 3, 4}, {2, 4, 3}}, [](Tape&, const V& v) { return matmul(v[0], v[1]); }},
        {"matmul shared", {{2, 3, 4}, {4, 5}}, [](Tape&, const V& v) { return matmul(v[0], v[1]); }},
        {"add", {{3, 4}, {3, 4}}, [](Tape&, const V& v) { return add(v[0], v[1]); }},
        {"sub", {{3, 4}, {3, 4}}, [](Tape&, const V& v) { return sub(v[0], v[1]); }},
        {"mul", {{3, 4}, {3, 4}}, [](Tape&, const V& v) { return mul(v[0], v[1]); }},
        {"scale", {{5}}, [](Tape&, const V& v) { return scale(v[0], -1.7); }},
        {"add_bias", {{2, 3, 4}, {4}}, [](Tape&, const V& v) { return add_bias(v[0], v[1]); }},
        {"embedding_add", {{2, 3, 4}, {3, 4}}, [](Tape&, const V& v) { return embedding_add(v[0], v[1]); }},
        {"transpose", {{2, 3, 4}}, [](Tape&, const V& v) { return transpose(v[0]); }},
        {"reshape", {{2, 3, 4}}, [](Tape&, const V& v) { return reshape(v[0], {6, 4}); }},
        {"concat", {{2, 3}, {2, 5}}, [](Tape&, const V& v) { return concat_last_dim({v[0], v[1]}); }},
        {"slice", {{2, 7}}, [](Tape&, const V& v) { return slice_last_dim(v[0], 2, 3); }},
        {"gather_rows", {{2, 5, 3}}, [](Tape&, const V& v) {
             return gather_rows(v[0], std::vector<std::vector<std::size_t>>{{0, 2, 2}, {4, 1, 0}});
         }},
        {"gather_rows shared", {{2, 5, 3}}, [](Tape&, const V& v) {
             return gather_rows(v[0], std::vector<std::size_t>{0, 3});
         }},
        {"mean_rows", {{2, 5, 3}}, [](Tape&, const V& v) { return mean_rows(v[0]); }},
        {"prepend_row", {{2, 4, 3}, {3}}, [](Tape&, const V& v) { return prepend_row(v[0], v[1]); }},
        {"segment_mean", {{5, 2, 3}}, [](Tape&, const V& v) { return segment_mean(v[0], {1, 0, 1, 2, 1}, 3); }},
        {"softmax", {{3, 6}}, [](Tape&, const V& v) { return softmax_rows(v[0]); }},
        {"log_softmax", {{2, 3, 6}}, [](Tape&, const V& v) { return log_softmax_rows(v[0]); }},
        {"layernorm", {{2, 8}, {8}, {8}}, [](Tape&, const V& v) { return layernorm(v[0], v[1], v[2]); }},
        {"gelu", {{4, 5}}, [](Tape&, const V& v) { return gelu(v[0]); }},
        {"sum", {{4, 5}}, [](Tape&, const V& v) { return sum(v[0]); }},
    };
    constexpr int kSeeds = 20;
    double worst_op = 0.0;
    std::string worst_name;
    for (const auto& c : cases) {
        for (int s = 0; s < kSeeds; ++s) {
            std::mt19937_64 rng(1000 + s);
            std::vector<Tensor> inputs;
            for (const auto& shape : c.shapes) inputs.push_back(oracle::uniform_tensor(shape, rng));
            const double e = oracle::gradcheck(inputs, c.f, 77 + s);
            if (e > worst_op) {
                worst_op = e;
                worst_name = c.name;
            }
        }
    }

    // whole split model: client grads via the server's activation gradient, server grads
    // from its own pass, every parameter entry against central differences of the loss
    const ViTConfig cfg = fixture::toy_model();
    double worst_e2e = 0.0;
    for (std::uint64_t seed = 1; seed <= kSeeds; ++seed) {
        SplitModel m = SplitModel::initialize(cfg, seed);
        std::mt19937_64 rng(seed + 500);
        const Tensor images = fixture::random_images(3, cfg, rng);
        const Tensor targets = one_hot({0, 2, 1}, cfg.classes);

        Tape tape;
        auto client = client_forward(tape, m.client, images, cfg);
        const auto server = server_forward_loss(m.server, client.activations.value(), targets, cfg);
        tape.backward(client.activations, server.grad_activations);
        std::vector<Tensor> analytic = gradients(m.client.parameters());
        analytic.insert(analytic.end(), server.grad_params.begin(), server.grad_params.end());

        auto loss = [&] {
            Tape t;
            return soft_cross_entropy(unsplit_forward(t, m, images), targets).value().item();
        };
        ParamRefs params = m.client.parameters();
        for (Param* p : m.server.parameters()) params.push_back(p);
        std::vector<double> fd, ad;
        constexpr double h = 1e-5;
        for (std::size_t p = 0; p < params.size(); ++p) {
            Tensor& w = params[p]->value;
            for (std::size_t j = 0; j < w.size(); ++j) {
                const double keep = w[j];
                w[j] = keep + h;
                const double up = loss();
                w[j] = keep - h;
                const double down = loss();
                w[j] = keep;
                fd.push_back((up - down) / (2 * h));
                ad.push_back(analytic[p][j]);
            }
        }
        worst_e2e = std::max(worst_e2e, relative_error(Tensor({fd.size()}, fd), Tensor({ad.size()}, ad)));
    }
    const double elapsed = seconds_since(t0);
    const bool ok = worst_op < 1e-4 && worst_e2e < 1e-3 && elapsed < 60.0;
    return {ok, format("%zu ops x %d seeds worst %.2e (%s); split model x %d seeds worst %.2e; %.1fs", cases.size(),
                       kSeeds, worst_op, worst_name.c_str(), kSeeds, worst_e2e, elapsed)};
}

// 2 ------------------------------------------------------------------------------------

Outcome sgd_equivalence() {
    RunConfig cfg = fixture::toy_run(6);
    cfg.wire_dtype = DType::f64;
    const Dataset data = load_run_dataset(cfg);
    constexpr std::size_t kSteps = 20;
    const auto split = fixture::train_session(cfg, data, kSteps);

    cfg.model.classes = data.classes;
    cfg.resolve();
    SplitModel m = SplitModel::initialize(cfg.model, cfg.seed);
    Adam adam(AdamOptions{cfg.lr});
    const std::size_t per_epoch = data.train.size() / cfg.batch_size;
    for (std::size_t s = 0; s < kSteps; ++s) {
        const std::size_t b = s % per_epoch;
        std::vector<std::size_t> idx(data.train.begin() + static_cast<std::ptrdiff_t>(b * cfg.batch_size),
                                     data.train.begin() + static_cast<std::ptrdiff_t>((b + 1) * cfg.batch_size));
        Tape tape;
        Var loss = soft_cross_entropy(unsplit_forward(tape, m, gather_images(data, idx)),
                                      one_hot(gather_labels(data, idx), cfg.model.classes));
        tape.backward(loss);
        adam.step(m.parameters(), gradients(m.parameters()));
    }
    fixture::Trained local;
    for (Param* p : m.client.parameters()) local.client.push_back(p->value);
    for (Param* p : m.server.parameters()) local.server.push_back(p->value);
    const double diff = fixture::max_param_diff(local, split);
    return {diff < 1e-9, format("%zu Adam steps, max parameter diff %.2e", kSteps, diff)};
}

// 3 ------------------------------------------------------------------------------------

// merge + select written out directly: out[c, j] = mean over members b of a[b, rows_c[j]]
Tensor encode_linear(const Tensor& a, const MergePlan& plan, std::size_t k) {
    const std::size_t n = plan.tokens, d = plan.dim, T = plan.clusters();
    Tensor out({T, k, d});
    for (std::size_t b = 0; b < plan.batch; ++b) {
        const std::size_t c = plan.assignments[b];
        for (std::size_t j = 0; j < k; ++j) {
            for (std::size_t i = 0; i < d; ++i) {
                out[(c * k + j) * d + i] +=
                    a[(b * n + plan.selected_tokens[c][j]) * d + i] / static_cast<double>(plan.cluster_sizes[c]);
            }
        }
    }
    return out;
}

Outcome adc_lossless() {
    RunConfig cfg = fixture::toy_run(6);
    cfg.wire_dtype = DType::f64;
    const Dataset data = load_run_dataset(cfg);
    const auto base = fixture::train_session(cfg, data, 5);
    cfg.codec.kind = CodecKind::adc;
    cfg.codec.clusters = cfg.batch_size;
    cfg.codec.tokens_kept = cfg.model.tokens();
    const auto adc = fixture::train_session(cfg, data, 5);
    const double diff = fixture::max_param_diff(base, adc);

    std::mt19937_64 rng(31);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t B = 2 + trial % 9, n = 2 + trial % 6, d = 1 + trial % 4;
        const std::size_t T = 1 + static_cast<std::size_t>(trial) % B, k = 1 + static_cast<std::size_t>(trial) % n;
        std::vector<std::size_t> assign(B);
        for (std::size_t b = 0; b < B; ++b) {
            assign[b] = b < T ? b : std::uniform_int_distribution<std::size_t>(0, T - 1)(rng);
        }
        std::shuffle(assign.begin(), assign.end(), rng);
        MergePlan plan;
        plan.assignments = assign;
        plan.batch = B;
        plan.tokens = n;
        plan.dim = d;
        plan.cluster_sizes.assign(T, 0);
        for (auto c : assign) ++plan.cluster_sizes[c];
        for (std::size_t c = 0; c < T; ++c) {
            const Tensor score = oracle::random_tensor({n}, rng);
            plan.selected_tokens.push_back(top_token_indices(score.data(), k));
        }
        const Tensor a = oracle::random_tensor({B, n, d}, rng), g = oracle::random_tensor({T, k, d}, rng);
        worst = std::max(worst, std::abs(dot(encode_linear(a, plan, k), g) - dot(a, unmerge_gradient(g, plan))));
    }
    return {diff < 1e-9 && worst < 1e-10,
            format("T=B,k=n vs Base over 5 steps: max diff %.2e; adjoint over 100 instances: %.2e", diff, worst)};
}

// 4 ------------------------------------------------------------------------------------

Outcome ratio_accounting() {
    const RunConfig base_cfg = fixture::toy_run(6);
    const Dataset data = load_run_dataset(base_cfg);
    std::size_t checked = 0, mismatched = 0;
    double worst = 0.0;
    std::map<std::string, std::size_t> per_codec;
    for (std::size_t batch : {6, 8, 12}) {
        RunConfig b = base_cfg;
        b.batch_size = batch;
        const auto base = fixture::train_session(b, data, 1).steps.front();
        for (auto kind : {CodecKind::topk, CodecKind::randtopk, CodecKind::bottlenet, CodecKind::c3sl, CodecKind::adc}) {
            for (double xi : {0.1, 0.25, 0.5}) {
                RunConfig c = b;
                c.codec.kind = kind;
                c.xi = xi;
                c.model.classes = data.classes;
                c.resolve();
                const auto step = fixture::train_session(c, data, 1).steps.front();
                const Ratios closed = compute_ratio(c.codec, c.dims());
                const double f = step.bits_forward / base.bits_forward, g = step.bits_backward / base.bits_backward;
                const double e = std::max(std::abs(f - closed.forward) / closed.forward,
                                          std::abs(g - closed.backward) / closed.backward);
                worst = std::max(worst, e);
                // exact up to the rounding of one floating-point division
                if (e > 1e-14) ++mismatched;
                ++checked;
                ++per_codec[to_string(kind)];
            }
        }
    }
    std::size_t fewest = checked;
    for (const auto& [_, n] : per_codec) fewest = std::min(fewest, n);
    return {mismatched == 0 && fewest >= 5,
            format("%zu measured configs (%zu per codec), %zu mismatches, worst rel diff %.1e", checked, fewest,
                   mismatched, worst)};
}

// 5 ------------------------------------------------------------------------------------

Outcome budget_law() {
    RunConfig cfg = fixture::toy_run(8);
    cfg.out_dir = (scratch_root() / "budget").string();
    constexpr double E = 2.0;
    cfg.budget_epochs = E;
    const Dataset data = load_run_dataset(cfg);
    const auto base = run_experiment(cfg, data);
    bool ok = base.iterations == static_cast<std::size_t>(E) * base.iterations_per_epoch;
    std::string detail = format("base %zu its (%zu/epoch)", base.iterations, base.iterations_per_epoch);

    struct Row {
        CodecKind kind;
        double xi;
    };
    for (const Row& row : std::vector<Row>{{CodecKind::adc, 0.25}, {CodecKind::adc, 0.1}, {CodecKind::c3sl, 0.5},
                                           {CodecKind::c3sl, 0.25}, {CodecKind::topk, 0.25},
                                           {CodecKind::bottlenet, 0.25}}) {
        RunConfig c = cfg;
        c.codec.kind = row.kind;
        c.xi = row.xi;
        c.run_name = to_string(row.kind) + format("_%g", row.xi);
        const auto r = run_experiment(c, data);
        // floor(E / xi) epoch-equivalents, counted in iterations
        const double xi = r.ratios.overall();
        const auto expected = static_cast<std::size_t>(
            std::floor(E * static_cast<double>(r.iterations_per_epoch) / xi * (1.0 + 1e-12)));
        ok &= r.iterations == expected;
        detail += format("; %s xi=%.4f %zu/%zu", to_string(row.kind).c_str(), xi, r.iterations, expected);
    }
    return {ok, detail};
}

// 6 ------------------------------------------------------------------------------------

Tensor clustered_points(std::size_t B, std::size_t T, std::size_t m, std::mt19937_64& rng, double spread) {
    std::uniform_real_distribution<double> u(-10.0, 10.0);
    std::normal_distribution<double> noise(0.0, spread);
    Tensor centres({T, m});
    for (auto& x : centres.data()) x = u(rng);
    Tensor p({B, m});
    for (std::size_t i = 0; i < B; ++i) {
        const std::size_t c = i < T ? i : std::uniform_int_distribution<std::size_t>(0, T - 1)(rng);
        for (std::size_t j = 0; j < m; ++j) p[i * m + j] = centres[c * m + j] + noise(rng);
    }
    return p;
}

Outcome kmeans_oracle() {
    std::mt19937_64 rng(2024);
    std::size_t instances = 0, separated = 0, below = 0, missed = 0;
    for (std::size_t T = 1; T <= 3; ++T) {
        for (std::size_t B = T; B <= 8; ++B) {
            for (std::size_t m = 1; m <= 3; ++m) {
                for (int trial = 0; trial < 6; ++trial) {
                    const Tensor p = trial % 2 == 0 ? clustered_points(B, T, m, rng, 0.2)
                                                    : oracle::random_tensor({B, m}, rng);
                    std::vector<std::size_t> best;
                    const double opt = oracle::brute_force_kmeans(p, T, &best);
                    const auto r = kmeans(p, T, 100, 500 + static_cast<std::uint64_t>(trial));
                    const double sse = within_cluster_sse(p, r.assignments, T);
                    ++instances;
                    if (sse < opt - 1e-12) ++below;
                    if (oracle::separation_ratio(p, best) > 4.0) {
                        ++separated;
                        if (std::abs(sse - opt) > 1e-12 * std::max(1.0, opt)) ++missed;
                    }
                }
            }
        }
    }
    // all distances tie: everything goes to cluster 0, the empty-cluster repair takes point 0
    const auto tie = kmeans(Tensor({5, 2}, 0.7), 2, 20, 4);
    const bool ties_ok = tie.assignments == std::vector<std::size_t>{1, 0, 0, 0, 0};
    return {below == 0 && missed == 0 && separated > 0 && ties_ok,
            format("%zu instances, %zu below optimum; %zu separated, %zu not at optimum; tie rule %s", instances,
                   below, separated, missed, ties_ok ? "ok" : "violated")};
}

// 7 ------------------------------------------------------------------------------------

Outcome c3sl_recovery() {
    std::mt19937_64 rng(7);
    double lossless = 0.0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        C3SLCodec codec(1, 256, seed);
        const Tensor z = oracle::random_tensor({8, 256}, rng);
        lossless = std::max(lossless, max_abs_diff(codec.decode(codec.encode(z), 8), z));
    }
    bool ok = lossless < 1e-8;
    std::string detail = format("R=1 max err %.1e", lossless);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t R : {2, 4}) {
        const std::size_t D = 256;
        C3SLCodec codec(R, D, 100 + R);
        Tensor z({R, D});
        double sq = 0.0, zsq = 0.0;
        for (int trial = 0; trial < 1000; ++trial) {
            for (auto& x : z.data()) x = normal(rng);
            const Tensor back = codec.decode(codec.encode(z), R);
            for (std::size_t i = 0; i < z.size(); ++i) {
                sq += (back[i] - z[i]) * (back[i] - z[i]);
                zsq += z[i] * z[i];
            }
        }
        const double count = 1000.0 * static_cast<double>(z.size());
        const double measured = std::sqrt(sq / count), std_z = std::sqrt(zsq / count);
        const double target = std::sqrt(static_cast<double>(R - 1) / static_cast<double>(D)) * std_z;
        ok &= std::abs(measured - target) <= 0.2 * target;
        detail += format("; R=%zu crosstalk std %.3f vs target %.4f (ratio %.1f, sqrt(R-1)*std(z)=%.3f)", R, measured,
                         target, measured / target, std::sqrt(static_cast<double>(R - 1)) * std_z);
    }
    return {ok, detail};
}

// 8, 9, 10 -----------------------------------------------------------------------------

RunConfig desk(std::uint64_t seed, const std::string& name) {
    RunConfig cfg;
    cfg.seed = seed;
    cfg.budget_epochs = 2.0;
    cfg.out_dir = (scratch_root() / "desk").string();
    cfg.run_name = name + format("_s%llu", static_cast<unsigned long long>(seed));
    return cfg;
}

const Dataset& desk_data() {
    static const Dataset data = load_run_dataset(RunConfig{});
    return data;
}

double desk_accuracy(RunConfig cfg) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto r = run_experiment(cfg, desk_data());
    std::fprintf(stderr, "  %-28s its %-4zu acc %.4f  %.0fs\n", r.name.c_str(), r.iterations, r.test_accuracy,
                 seconds_since(t0));
    return r.test_accuracy;
}

double mean_accuracy(const std::string& name, const std::function<void(RunConfig&)>& setup) {
    double total = 0.0;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        RunConfig cfg = desk(seed, name);
        setup(cfg);
        total += desk_accuracy(cfg);
    }
    return total / 3.0;
}

double codec_mean(CodecKind kind, double xi) {
    return mean_accuracy(to_string(kind) + format("_%g", xi), [&](RunConfig& c) {
        c.codec.kind = kind;
        if (kind != CodecKind::base) c.xi = xi;
    });
}

Outcome desk_trend() {
    const auto t0 = std::chrono::steady_clock::now();
    const double base = codec_mean(CodecKind::base, 1.0);
    bool ok = true;
    std::string detail = format("base %.3f", base);
    for (double xi : {0.1, 0.25}) {
        const double adc = codec_mean(CodecKind::adc, xi);
        const double topk = codec_mean(CodecKind::topk, xi);
        const double c3sl = codec_mean(CodecKind::c3sl, xi);
        ok &= adc >= topk && adc >= c3sl;
        if (xi == 0.25) ok &= base - adc <= 0.05;
        detail += format("; xi=%g adc %.3f topk %.3f c3sl %.3f", xi, adc, topk, c3sl);
    }
    const double elapsed = seconds_since(t0);
    ok &= elapsed < 1800.0;
    return {ok, detail + format("; %.0fs", elapsed)};
}

Outcome balanced_split() {
    const std::size_t B = 40, n = RunConfig{}.model.tokens();
    auto adc = [&](std::size_t T, std::size_t k) {
        return mean_accuracy(format("adc_T%zu_k%zu", T, k), [&](RunConfig& c) {
            c.codec.kind = CodecKind::adc;
            c.codec.clusters = T;
            c.codec.tokens_kept = k;
        });
    };
    const ADCConfig balanced = ADCConfig::balanced(0.25, B, n);
    const double mid = adc(balanced.clusters, balanced.tokens_kept);
    // batch-only: k = n, T = xi B; token-only: T = B, k = xi n
    const double batch_only = adc(static_cast<std::size_t>(std::lround(0.25 * B)), n);
    const double token_only = adc(B, static_cast<std::size_t>(std::lround(0.25 * static_cast<double>(n))));
    return {mid >= batch_only && mid >= token_only,
            format("balanced T=%zu k=%zu %.3f; T=%zu k=%zu %.3f; T=%zu k=%zu %.3f", balanced.clusters,
                   balanced.tokens_kept, mid, static_cast<std::size_t>(std::lround(0.25 * B)), n, batch_only, B,
                   static_cast<std::size_t>(std::lround(0.25 * static_cast<double>(n))), token_only)};
}

Outcome transport_equivalence() {
    RunConfig cfg = desk(0, "transport");
    cfg.codec.kind = CodecKind::adc;
    cfg.xi = 0.25;
    cfg.eval_every = 25;
    cfg.out_dir = (scratch_root() / "inprocess").string();
    const auto local = run_experiment(cfg, desk_data());
    cfg.transport = "tcp";
    cfg.addr = "127.0.0.1:0";
    cfg.out_dir = (scratch_root() / "tcp").string();
    const auto remote = run_experiment(cfg, desk_data());
    const std::string a = slurp(local.jsonl_path), b = slurp(remote.jsonl_path);
    const bool same = !a.empty() && a == b && slurp(local.csv_path) == slurp(remote.csv_path);
    return {same, format("ADC xi=0.25, %zu iterations; jsonl %zu bytes, %s", local.iterations, a.size(),
                         same ? "byte-identical" : "differ")};
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<std::pair<const char*, Outcome (*)()>> criteria{
        {"gradient correctness", gradient_correctness}, {"SGD equivalence", sgd_equivalence},
        {"ADC lossless limit", adc_lossless},           {"ratio accounting", ratio_accounting},
        {"budget law", budget_law},                     {"k-means oracle", kmeans_oracle},
        {"C3-SL recovery", c3sl_recovery},              {"desk-scale trend", desk_trend},
        {"balanced split", balanced_split},             {"transport equivalence", transport_equivalence},
    };
    std::set<std::size_t> wanted;
    for (int i = 1; i < argc; ++i) {
        const long v = std::strtol(argv[i], nullptr, 10);
        if (v < 1 || v > static_cast<long>(criteria.size())) {
            std::fprintf(stderr, "usage: %s [criterion 1-%zu ...]\n", argv[0], criteria.size());
            return 2;
        }
        wanted.insert(static_cast<std::size_t>(v));
    }
    bool all = true;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        if (!wanted.empty() && !wanted.count(i + 1)) continue;
        std::fprintf(stderr, "criterion %zu: %s\n", i + 1, criteria[i].first);
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        std::printf("%s %2zu %-22s %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail.c_str());
        std::fflush(stdout);
        all &= o.pass;
    }
    std::error_code ec;
    fs::remove_all(scratch_root(), ec);
    return all ? 0 : 1;
}
