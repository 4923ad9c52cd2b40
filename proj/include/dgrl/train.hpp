#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dgrl/data.hpp"
#include "dgrl/distill.hpp"
#include "dgrl/network.hpp"
#include "dgrl/optim.hpp"

namespace dgrl {

enum class Phase { teacher, main, shortcut, finetune };
std::string to_string(Phase phase);
Phase phase_from_string(const std::string& name);

/// Whether a phase updates parameters of this role (locked params never move).
///   teacher:  teacher
///   main:     stem, main kernel/threshold/BN, head
///   shortcut: gamma*, omega, T, t_sc
///   finetune: gamma*, T, t_sc
bool phase_trains(Phase phase, ParamRole role);

struct TrainConfig {
    std::size_t batch_size = 128;
    LrSchedule schedule;  // base lr 0.01
    int epochs = 1;
    OptimizerConfig optimizer;
    DistillConfig distill;
    std::uint64_t seed = 0;
    Phase phase = Phase::main;
    bool augment = true;
    BinaryBackend backend = BinaryBackend::packed;
    /// Stop after this many steps in total for the phase; 0 for no limit.
    std::int64_t max_steps = 0;

    void validate() const;
};

struct EpochRecord {
    std::string phase;
    int epoch = 0;
    double lr = 0.0;
    double loss = 0.0;
    double ce_loss = 0.0;
    std::vector<double> distill;  // mean per block
    double val_accuracy = -1.0;   // -1 when not validated
};

/// Optimizer state and counters of the phase in progress. Training a
/// different phase than the stored one starts over at epoch 0 with a
/// fresh optimizer; the same phase resumes.
struct TrainState {
    Phase phase = Phase::teacher;
    int epoch = 0;
    std::int64_t step = 0;
    Optimizer optimizer;
    std::vector<EpochRecord> history;
};

/// Receives one key=value line per step and per validation.
using MetricsSink = std::function<void(const std::string&)>;

void train_teacher(TeacherNet& net, const Dataset& data, const TrainConfig& config, TrainState& state,
                   const MetricsSink& sink = {}, const Dataset* validation = nullptr);

/// config.phase must be main or shortcut. Main trains with shortcuts off;
/// shortcut freezes everything on the main path, BN included (BN runs on
/// its running statistics).
void train_student(StudentNet& net, TeacherNet& teacher, const Dataset& data, const TrainConfig& config,
                   TrainState& state, const MetricsSink& sink = {}, const Dataset* validation = nullptr);

/// Requires every branch selected or sparsified (UsageError otherwise).
void finetune_shortcuts(StudentNet& net, TeacherNet& teacher, const Dataset& data, const TrainConfig& config,
                        TrainState& state, const MetricsSink& sink = {}, const Dataset* validation = nullptr);

struct EvalResult {
    std::size_t count = 0;
    double top1 = 0.0;
    /// Mean distillation loss against the reference per block, and its two terms.
    std::vector<double> residual;
    std::vector<double> spatial;
    std::vector<double> channel;
};

EvalResult evaluate(StudentNet& net, TeacherNet* reference, const Dataset& data, std::size_t batch_size = 256,
                    BinaryBackend backend = BinaryBackend::packed);
EvalResult evaluate(TeacherNet& net, TeacherNet* reference, const Dataset& data, std::size_t batch_size = 256);

/// key=value line: count, top1, residual.i.
std::string format_eval(const EvalResult& r);
/// Tab-separated: block, residual, spatial, channel.
std::string residual_table(const EvalResult& r);

/// Layout equality ignoring names and shortcut counts.
bool same_layout(const NetworkSpec& a, const NetworkSpec& b);

/// CRC-32 over the values of every parameter the predicate selects, in visit order.
std::uint32_t parameter_fingerprint(StudentNet& net, const std::function<bool(const ParamRef&)>& select);

}  // namespace dgrl
