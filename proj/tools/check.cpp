#include "check.hpp"

#include <cmath>
#include <cstdio>
#include <random>
#include <thread>

#include "adcsl/adc.hpp"
#include "adcsl/baselines.hpp"
#include "adcsl/harness.hpp"
#include "adcsl/protocol.hpp"

namespace {

using namespace adcsl;

bool report(const char* name, bool ok, const std::string& detail) {
    std::printf("[%s] %-34s %s\n", ok ? "PASS" : "FAIL", name, detail.c_str());
    return ok;
}

std::string fmt(const char* f, double v) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), f, v);
    return buf;
}

ViTConfig toy_model() {
    ViTConfig c;
    c.channels = 1;
    c.height = 8;
    c.width = 8;
    c.patch_size = 4;
    c.embed_dim = 8;
    c.heads = 2;
    c.head_dim_qk = 4;
    c.head_dim_v = 4;
    c.blocks = 3;
    c.split_point = 2;
    c.classes = 3;
    c.ffn_ratio = 2;
    return c;
}

double loss_of(SplitModel& m, const Tensor& images, const Tensor& targets) {
    Tape tape;
    return soft_cross_entropy(unsplit_forward(tape, m, images), targets).value().item();
}

// Central differences on a sample of parameter entries against the tape gradient.
double gradient_check(std::uint64_t seed) {
    const ViTConfig cfg = toy_model();
    SplitModel m = SplitModel::initialize(cfg, seed);
    std::mt19937_64 rng(seed + 100);
    std::normal_distribution<double> normal(0.0, 1.0);
    Tensor images({2, cfg.channels, cfg.height, cfg.width});
    for (std::size_t i = 0; i < images.size(); ++i) images[i] = normal(rng);
    const Tensor targets = one_hot({0, 2}, cfg.classes);

    Tape tape;
    Var loss = soft_cross_entropy(unsplit_forward(tape, m, images), targets);
    tape.backward(loss);
    const ParamRefs params = m.parameters();
    const auto grads = gradients(params);

    std::vector<double> fd, ad;
    constexpr double h = 1e-5;
    for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor& w = params[p]->value;
        const std::size_t j = std::uniform_int_distribution<std::size_t>(0, w.size() - 1)(rng);
        const double keep = w[j];
        w[j] = keep + h;
        const double up = loss_of(m, images, targets);
        w[j] = keep - h;
        const double down = loss_of(m, images, targets);
        w[j] = keep;
        fd.push_back((up - down) / (2 * h));
        ad.push_back(grads[p][j]);
    }
    return relative_error(Tensor({fd.size()}, fd), Tensor({ad.size()}, ad));
}

struct Trained {
    std::vector<Tensor> client, server;
};

Trained train_steps(RunConfig cfg, const Dataset& data, std::size_t steps) {
    cfg.model.classes = data.classes;
    cfg.resolve();
    auto [client_end, server_end] = inprocess_pair();
    ServerSession server(cfg);
    std::thread t([&, ep = server_end.get()] {
        try {
            serve_session(server, *ep);
        } catch (...) {
        }
    });
    Trained out;
    {
        ClientSession client(cfg, *client_end, 1e300);
        client.handshake();
        for (std::size_t s = 0; s < steps; ++s) {
            std::vector<std::size_t> idx(data.train.begin() + static_cast<std::ptrdiff_t>(s * cfg.batch_size),
                                         data.train.begin() + static_cast<std::ptrdiff_t>((s + 1) * cfg.batch_size));
            client.train_step(gather_images(data, idx), gather_labels(data, idx));
        }
        client.shutdown();
        for (Param* p : client.model().parameters()) out.client.push_back(p->value);
    }
    t.join();
    for (Param* p : server.model().parameters()) out.server.push_back(p->value);
    return out;
}

double max_param_diff(const Trained& a, const Trained& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.client.size(); ++i) worst = std::max(worst, max_abs_diff(a.client[i], b.client[i]));
    for (std::size_t i = 0; i < a.server.size(); ++i) worst = std::max(worst, max_abs_diff(a.server[i], b.server[i]));
    return worst;
}

}  // namespace

bool run_checks(bool quick) {
    bool ok = true;

    const std::size_t seeds = quick ? 3 : 20;
    double worst = 0.0;
    for (std::size_t s = 0; s < seeds; ++s) worst = std::max(worst, gradient_check(s + 1));
    ok &= report("gradient finite differences", worst < 1e-3, fmt("max rel err %.3g", worst));

    bool ratios_ok = true;
    for (std::size_t batch : {8, 16, 40}) {
        const ModelDims dims{batch, 17, 64, 10};
        const CostModel cost{dims, 32.0};
        for (auto kind : {CodecKind::base, CodecKind::topk, CodecKind::randtopk, CodecKind::bottlenet, CodecKind::c3sl,
                          CodecKind::adc}) {
            for (double xi : {0.125, 0.25, 0.5}) {
                const CodecConfig c = CodecConfig::for_ratio(kind, xi, dims);
                const Ratios r = compute_ratio(c, dims);
                const double f = cost.forward_bits(c) / cost.base_forward_bits();
                const double b = cost.backward_bits(c) / cost.base_backward_bits();
                ratios_ok &= std::abs(f - r.forward) <= 1e-12 * r.forward && std::abs(b - r.backward) <= 1e-12 * r.backward;
            }
        }
    }
    ok &= report("ratio accounting", ratios_ok, "charged bits / base bits == closed form");

    {
        C3SLCodec codec(1, 64, 7);
        std::mt19937_64 rng(3);
        std::normal_distribution<double> normal(0.0, 1.0);
        Tensor z({5, 64});
        for (std::size_t i = 0; i < z.size(); ++i) z[i] = normal(rng);
        const double err = max_abs_diff(codec.decode(codec.encode(z), 5), z);
        ok &= report("C3-SL R=1 lossless", err < 1e-8, fmt("max abs err %.3g", err));
    }

    {
        RunConfig cfg;
        cfg.model = toy_model();
        cfg.batch_size = 6;
        cfg.wire_dtype = DType::f64;
        cfg.data.classes = 3;
        cfg.data.samples_per_class = 10;
        cfg.data.marked_patches = 1;
        const Dataset data = load_run_dataset(cfg);
        const Trained base = train_steps(cfg, data, 3);
        cfg.codec.kind = CodecKind::adc;
        cfg.codec.clusters = cfg.batch_size;
        cfg.codec.tokens_kept = cfg.model.tokens();
        const Trained adc = train_steps(cfg, data, 3);
        const double diff = max_param_diff(base, adc);
        ok &= report("ADC lossless limit (T=B, k=n)", diff < 1e-9, fmt("max param diff %.3g", diff));
    }

    {
        // n even so that k/n = T/B = 1/2 exactly
        const ModelDims dims{40, 16, 64, 10};
        const CostModel cost{dims, 32.0};
        const CodecConfig adc = CodecConfig::for_ratio(CodecKind::adc, 0.25, dims);
        auto count = [](double budget, double per_iteration) {
            BudgetLedger ledger(budget);
            while (ledger.can_afford(per_iteration)) {
                ledger.charge_forward(per_iteration / 2);
                ledger.charge_backward(per_iteration / 2);
                ledger.complete_iteration();
            }
            return ledger.iterations_completed();
        };
        const double budget = 10 * cost.base_iteration_bits();
        const auto nb = count(budget, cost.iteration_bits(CodecConfig{}));
        const auto na = count(budget, cost.iteration_bits(adc));
        ok &= report("budget law", nb == 10 && na == 40,
                     "base " + std::to_string(nb) + " iterations, ADC(0.25) " + std::to_string(na));
    }
    return ok;
}
