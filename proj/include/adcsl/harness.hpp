#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "adcsl/baselines.hpp"
#include "adcsl/dataset.hpp"
#include "adcsl/optim.hpp"
#include "adcsl/protocol.hpp"
#include "adcsl/transport.hpp"
#include "adcsl/vit.hpp"

namespace adcsl {

/// Environment variable that, when set, replaces RunConfig::out_dir.
inline constexpr const char* kOutputDirEnv = "ADCSL_OUT_DIR";

struct RunConfig {
    ViTConfig model;
    CodecConfig codec;
    /// Target overall ratio; fills codec parameters that were left at zero.
    std::optional<double> xi;
    std::size_t batch_size = 40;
    double budget_epochs = 2.0;
    std::uint64_t seed = 0;
    double lr = 1e-3;
    /// Test accuracy every N iterations (0: only at the end).
    std::size_t eval_every = 0;
    /// Loss record every N iterations (0: once per epoch).
    std::size_t log_every = 0;
    SyntheticSpec data;
    /// Dataset file; empty means generate `data`.
    std::string dataset_path;
    std::string out_dir = "runs";
    std::string run_name;
    std::string transport = "inprocess";
    std::string addr = "127.0.0.1:0";
    DType wire_dtype = DType::f32;

    nlohmann::json to_json() const;
    /// Keys absent from `j` keep their defaults; unknown keys are rejected.
    static RunConfig from_json(const nlohmann::json& j);
    static RunConfig load(const std::string& path);

    /// Applies xi, fills defaults, checks every invariant. Idempotent.
    void resolve();
    ModelDims dims() const;
    std::string name() const;
    std::string output_dir() const;
};

struct StepReport {
    std::uint32_t iteration = 0;
    double loss = 0.0;
    double bits_forward = 0.0;
    double bits_backward = 0.0;
    double label_bits = 0.0;
};

/// 64-bit mix used to derive per-iteration seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt);

/// Client role: owns the client half, its optimiser, the codec's client state and the ledger.
class ClientSession {
public:
    ClientSession(RunConfig config, Endpoint& endpoint, double budget_bits);

    /// Sends the run configuration and waits for the server's ack.
    void handshake();
    /// One lockstep iteration. Throws BudgetExhausted (without side effects) when the
    /// ledger cannot admit it.
    StepReport train_step(const Tensor& images, const std::vector<std::uint16_t>& labels);
    /// Uncompressed test-time forward through both halves. Returns (accuracy, mean loss).
    std::pair<double, double> evaluate(const Dataset& data, std::span<const std::size_t> indices);
    void shutdown();

    const RunConfig& config() const { return config_; }
    const CostModel& cost() const { return cost_; }
    BudgetLedger& ledger() { return ledger_; }
    ClientModel& model() { return model_; }
    ParamRefs parameters();
    std::uint32_t iterations() const { return iteration_; }

private:
    Packet request(const Packet& packet, MessageKind expect);

    RunConfig config_;
    Endpoint& endpoint_;
    CostModel cost_;
    BudgetLedger ledger_;
    ClientModel model_;
    BottleNet bottlenet_;
    std::unique_ptr<C3SLCodec> c3sl_;
    std::mt19937_64 noise_rng_;
    Adam adam_;
    std::uint32_t iteration_ = 0;
};

/// Server role: pure message handler around the server half.
class ServerSession {
public:
    explicit ServerSession(RunConfig config);

    /// Handles one request and returns the reply.
    Packet handle(const Packet& packet);

    const RunConfig& config() const { return config_; }
    ServerModel& model() { return model_; }
    ParamRefs parameters();

private:
    Packet handle_activation(const Packet& packet);
    Packet handle_eval(const Packet& packet);

    RunConfig config_;
    CostModel cost_;
    ServerModel model_;
    BottleNet bottlenet_;
    std::unique_ptr<C3SLCodec> c3sl_;
    Adam adam_;
    std::uint32_t last_iteration_ = 0;
};

/// Serves one client until shutdown; the first message must be hello carrying the run
/// configuration. Failures are reported to the client as error packets before rethrowing.
void serve(Endpoint& endpoint);
/// Same, with a session the caller owns (its hello is acknowledged, not re-applied).
void serve_session(ServerSession& session, Endpoint& endpoint);

struct RunSummary {
    std::string name;
    CodecConfig codec;
    Ratios ratios;
    std::size_t iterations = 0;
    std::size_t iterations_per_epoch = 0;
    double budget_bits = 0.0;
    double bits_forward = 0.0;
    double bits_backward = 0.0;
    double label_bits = 0.0;
    double final_train_loss = 0.0;
    double test_accuracy = 0.0;
    double val_accuracy = 0.0;
    std::string jsonl_path;
    std::string csv_path;

    static std::string csv_header();
    std::string csv_row() const;
};

/// Dataset named by the config (loaded or generated).
Dataset load_run_dataset(const RunConfig& config);

/// Trains under the budget over `endpoint`, evaluates and writes metrics.
RunSummary run_client(const RunConfig& config, const Dataset& data, Endpoint& endpoint);

/// Full experiment with a server thread on the configured transport.
RunSummary run_experiment(RunConfig config);
RunSummary run_experiment(RunConfig config, const Dataset& data);

/// Uncompressed local evaluation of a whole model. Returns top-1 accuracy.
double evaluate(SplitModel& model, const Dataset& data, std::span<const std::size_t> indices);

/// Accuracy of logits [N x classes] against labels.
double accuracy(const Tensor& logits, const std::vector<std::uint16_t>& labels);

}  // namespace adcsl
