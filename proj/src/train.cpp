#include "dgrl/train.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include <zlib.h>

#include "dgrl/errors.hpp"

namespace dgrl {

namespace {

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

std::uint32_t crc_tensor(std::uint32_t crc, const Tensor& t) {
    return static_cast<std::uint32_t>(
        crc32(crc, reinterpret_cast<const Bytef*>(t.data()), static_cast<uInt>(t.numel() * sizeof(float))));
}

std::mt19937_64 epoch_rng(std::uint64_t seed, Phase phase, int epoch) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(phase), static_cast<std::uint32_t>(epoch)};
    return std::mt19937_64(seq);
}

void begin_phase(TrainState& state, const TrainConfig& config) {
    if (state.phase != config.phase) {
        state.phase = config.phase;
        state.epoch = 0;
        state.step = 0;
        state.optimizer = Optimizer(config.optimizer);
    } else if (state.optimizer.config().kind != config.optimizer.kind) {
        state.optimizer = Optimizer(config.optimizer);
    }
}

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// conv kernels and FC weights; thresholds, BN, omega and T are never decayed
bool is_weight_matrix(const std::string& name) {
    return ends_with(name, "kernel") || ends_with(name, "theta") || ends_with(name, ".weight") ||
           (ends_with(name, ".gamma") && name.find(".sc.") != std::string::npos);
}

template <class Net>
std::vector<TrainableParam> select_trainable(Net& net, Phase phase) {
    std::vector<TrainableParam> out;
    net.visit_parameters([&](const ParamRef& p) {
        const bool on = phase_trains(phase, p.role) && !p.locked;
        p.param.set_requires_grad(on);
        if (!on) return;
        out.push_back({p.name, p.param, is_shadow_weight(p.role), is_weight_matrix(p.name)});
    });
    return out;
}

template <class Net>
std::uint32_t frozen_fingerprint(Net& net, Phase phase, bool include_buffers) {
    std::uint32_t crc = crc32(0L, Z_NULL, 0);
    net.visit_parameters([&](const ParamRef& p) {
        if (!(phase_trains(phase, p.role) && !p.locked)) crc = crc_tensor(crc, p.param.value());
    });
    if (include_buffers) net.visit_buffers([&](const std::string&, Tensor& t) { crc = crc_tensor(crc, t); });
    return crc;
}

template <class Net>
void zero_grads(Net& net) {
    net.visit_parameters([](const ParamRef& p) { p.param.zero_grad(); });
}

struct StepLoss {
    double total = 0.0;
    double ce = 0.0;
    std::vector<double> distill;
};

/// Shared epoch loop. step_fn(tape-free) runs forward/backward for one batch
/// and returns its losses; validate_fn returns accuracy.
template <class Net, class StepFn, class ValidateFn>
void run_phase(Net& net, const Dataset& data, const TrainConfig& config, TrainState& state, const MetricsSink& sink,
               bool buffers_frozen, StepFn step_fn, ValidateFn validate_fn) {
    config.validate();
    if (config.epochs == 0) return;
    begin_phase(state, config);
    const std::vector<TrainableParam> params = select_trainable(net, config.phase);
    const std::uint32_t frozen = frozen_fingerprint(net, config.phase, buffers_frozen);
    const std::string phase = to_string(config.phase);
    double last_finite = NAN;
    std::int64_t last_finite_step = -1;

    while (state.epoch < config.epochs) {
        if (config.max_steps > 0 && state.step >= config.max_steps) break;
        const int epoch = state.epoch;
        const double lr = config.schedule.at(epoch);
        std::mt19937_64 rng = epoch_rng(config.seed, config.phase, epoch);
        EpochRecord rec;
        rec.phase = phase;
        rec.epoch = epoch;
        rec.lr = lr;
        std::size_t batches = 0;
        for (const auto& batch : epoch_batches(data.size(), config.batch_size, rng)) {
            if (config.max_steps > 0 && state.step >= config.max_steps) break;
            Tensor x = data.gather(batch);
            if (config.augment) augment_batch(x, rng);
            const std::vector<int> labels = data.gather_labels(batch);
            const StepLoss loss = step_fn(x, labels, state.step);
            if (!std::isfinite(loss.total)) {
                zero_grads(net);
                throw DivergenceError("non-finite loss at step " + std::to_string(state.step) + " (phase " + phase +
                                      ", epoch " + std::to_string(epoch) + "); last finite loss " + fmt(last_finite) +
                                      " at step " + std::to_string(last_finite_step));
            }
            last_finite = loss.total;
            last_finite_step = state.step;
            state.optimizer.step(params, lr);
            zero_grads(net);

            std::ostringstream line;
            line << "step=" << state.step << " phase=" << phase << " epoch=" << epoch << " lr=" << fmt(lr)
                 << " loss=" << fmt(loss.total) << " ce_loss=" << fmt(loss.ce);
            for (std::size_t i = 0; i < loss.distill.size(); ++i) line << " distill_loss." << i << '=' << fmt(loss.distill[i]);
            if (sink) sink(line.str());

            rec.loss += loss.total;
            rec.ce_loss += loss.ce;
            if (rec.distill.size() < loss.distill.size()) rec.distill.resize(loss.distill.size(), 0.0);
            for (std::size_t i = 0; i < loss.distill.size(); ++i) rec.distill[i] += loss.distill[i];
            ++batches;
            ++state.step;
        }
        if (batches > 0) {
            rec.loss /= static_cast<double>(batches);
            rec.ce_loss /= static_cast<double>(batches);
            for (double& d : rec.distill) d /= static_cast<double>(batches);
        }
        rec.val_accuracy = validate_fn();
        if (rec.val_accuracy >= 0.0 && sink) {
            sink("epoch=" + std::to_string(epoch) + " phase=" + phase + " val_accuracy=" + fmt(rec.val_accuracy));
        }
        state.history.push_back(rec);
        ++state.epoch;
        if (frozen_fingerprint(net, config.phase, buffers_frozen) != frozen) {
            throw std::logic_error("frozen parameters changed during phase " + phase);
        }
    }
}

std::vector<Tensor> values_of(const std::vector<Variable>& v) {
    std::vector<Tensor> out;
    out.reserve(v.size());
    for (const auto& x : v) out.push_back(x.value());
    return out;
}

std::size_t argmax_row(const Tensor& logits, int n) {
    const int k = logits.shape().c;
    std::size_t best = 0;
    for (int c = 1; c < k; ++c) {
        if (logits.at(n, c, 0, 0) > logits.at(n, static_cast<int>(best), 0, 0)) best = static_cast<std::size_t>(c);
    }
    return best;
}

template <class ForwardFn>
EvalResult evaluate_impl(ForwardFn forward, TeacherNet* reference, const Dataset& data, std::size_t batch_size) {
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    EvalResult r;
    std::size_t correct = 0;
    std::mt19937_64 unused(0);
    for (const auto& batch : epoch_batches(data.size(), batch_size, unused, false)) {
        const Tensor x = data.gather(batch);
        const std::vector<int> labels = data.gather_labels(batch);
        Tape tape = Tape::inference();
        const ForwardResult out = forward(tape, x);
        for (std::size_t i = 0; i < batch.size(); ++i) {
            if (static_cast<int>(argmax_row(out.logits.value(), static_cast<int>(i))) == labels[i]) ++correct;
        }
        if (reference) {
            ForwardOptions eval;
            eval.mode = ops::NormMode::eval;
            const ForwardResult ref = reference->forward(tape, x, eval);
            if (ref.features.size() != out.features.size()) {
                throw ConfigError("reference has " + std::to_string(ref.features.size()) + " blocks, model has " +
                                  std::to_string(out.features.size()));
            }
            r.residual.resize(out.features.size(), 0.0);
            r.spatial.resize(out.features.size(), 0.0);
            r.channel.resize(out.features.size(), 0.0);
            for (std::size_t b = 0; b < out.features.size(); ++b) {
                const DistillTerms t = distill_block_terms(tape, ref.features[b].value(), out.features[b]);
                for (std::size_t i = 0; i < batch.size(); ++i) {
                    r.spatial[b] += t.spatial.value()[i];
                    r.channel[b] += t.channel.value()[i];
                    r.residual[b] += static_cast<double>(t.spatial.value()[i]) + t.channel.value()[i];
                }
            }
        }
        r.count += batch.size();
    }
    if (r.count > 0) {
        r.top1 = static_cast<double>(correct) / static_cast<double>(r.count);
        for (auto* v : {&r.residual, &r.spatial, &r.channel})
            for (double& x : *v) x /= static_cast<double>(r.count);
    }
    return r;
}

void require_student_phase(const TrainConfig& config, std::initializer_list<Phase> allowed) {
    for (Phase p : allowed)
        if (config.phase == p) return;
    throw UsageError("phase " + to_string(config.phase) + " is not valid here");
}

void train_student_impl(StudentNet& net, TeacherNet& teacher, const Dataset& data, const TrainConfig& config,
                        TrainState& state, const MetricsSink& sink, const Dataset* validation) {
    if (!same_layout(net.spec(), teacher.spec())) throw ConfigError("teacher layout does not match the student spec");
    const bool main = config.phase == Phase::main;
    ForwardOptions opts;
    opts.mode = main ? ops::NormMode::train : ops::NormMode::eval;
    opts.update_running_stats = main;
    opts.use_shortcuts = !main;
    opts.backend = config.backend;
    ForwardOptions teacher_opts;
    teacher_opts.mode = ops::NormMode::eval;
    teacher.visit_parameters([](const ParamRef& p) { p.param.set_requires_grad(false); });

    auto step = [&](const Tensor& x, const std::vector<int>& labels, std::int64_t) {
        Tape inference = Tape::inference();
        const std::vector<Tensor> tfeat = values_of(teacher.forward(inference, x, teacher_opts).features);
        Tape tape;
        const ForwardResult sr = net.forward(tape, x, opts);
        const LossBreakdown loss = total_loss(tape, sr.logits, labels, tfeat, sr.features, config.distill);
        StepLoss out{loss.total.value().item(), loss.cross_entropy.value().item(), {}};
        for (const auto& b : loss.block) out.distill.push_back(b.value().item());
        if (std::isfinite(out.total)) tape.backward(loss.total);
        return out;
    };
    auto validate = [&]() -> double {
        if (!validation) return -1.0;
        return evaluate(net, nullptr, *validation, 256, config.backend).top1;
    };
    run_phase(net, data, config, state, sink, !main, step, validate);
}

}  // namespace

std::string to_string(Phase phase) {
    switch (phase) {
        case Phase::teacher: return "teacher";
        case Phase::main: return "main";
        case Phase::shortcut: return "shortcut";
        case Phase::finetune: return "finetune";
    }
    return "?";
}

Phase phase_from_string(const std::string& name) {
    for (Phase p : {Phase::teacher, Phase::main, Phase::shortcut, Phase::finetune})
        if (to_string(p) == name) return p;
    throw ConfigError("unknown phase '" + name + "'");
}

bool phase_trains(Phase phase, ParamRole role) {
    switch (phase) {
        case Phase::teacher: return role == ParamRole::teacher;
        case Phase::main:
            return role == ParamRole::stem || role == ParamRole::main_kernel || role == ParamRole::main_threshold ||
                   role == ParamRole::main_bn || role == ParamRole::head;
        case Phase::shortcut:
            return role == ParamRole::shortcut_kernel || role == ParamRole::shortcut_omega ||
                   role == ParamRole::shortcut_threshold || role == ParamRole::shortcut_mix;
        case Phase::finetune:
            return role == ParamRole::shortcut_kernel || role == ParamRole::shortcut_threshold ||
                   role == ParamRole::shortcut_mix;
    }
    return false;
}

void TrainConfig::validate() const {
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    if (distill.alpha < 0.0f) throw ConfigError("alpha must be >= 0");
    if (max_steps < 0) throw ConfigError("max_steps must be >= 0");
    schedule.validate(epochs);
}

void train_teacher(TeacherNet& net, const Dataset& data, const TrainConfig& config, TrainState& state,
                   const MetricsSink& sink, const Dataset* validation) {
    require_student_phase(config, {Phase::teacher});
    ForwardOptions opts;
    auto step = [&](const Tensor& x, const std::vector<int>& labels, std::int64_t) {
        Tape tape;
        const ForwardResult r = net.forward(tape, x, opts);
        const Variable ce = ops::cross_entropy(tape, r.logits, labels);
        StepLoss out{ce.value().item(), ce.value().item(), {}};
        if (std::isfinite(out.total)) tape.backward(ce);
        return out;
    };
    auto validate = [&]() -> double { return validation ? evaluate(net, nullptr, *validation).top1 : -1.0; };
    run_phase(net, data, config, state, sink, false, step, validate);
}

void train_student(StudentNet& net, TeacherNet& teacher, const Dataset& data, const TrainConfig& config,
                   TrainState& state, const MetricsSink& sink, const Dataset* validation) {
    require_student_phase(config, {Phase::main, Phase::shortcut});
    train_student_impl(net, teacher, data, config, state, sink, validation);
}

void finetune_shortcuts(StudentNet& net, TeacherNet& teacher, const Dataset& data, const TrainConfig& config,
                        TrainState& state, const MetricsSink& sink, const Dataset* validation) {
    require_student_phase(config, {Phase::finetune});
    const auto branches = net.branches();
    if (branches.empty()) throw UsageError("fine-tuning needs shortcut branches");
    for (const auto* br : branches) {
        if (br->state == ShortcutState::dense) throw UsageError("fine-tuning needs selected or sparsified shortcuts");
    }
    train_student_impl(net, teacher, data, config, state, sink, validation);
}

EvalResult evaluate(StudentNet& net, TeacherNet* reference, const Dataset& data, std::size_t batch_size,
                    BinaryBackend backend) {
    ForwardOptions opts;
    opts.mode = ops::NormMode::eval;
    opts.backend = backend;
    return evaluate_impl([&](Tape& tape, const Tensor& x) { return net.forward(tape, x, opts); }, reference, data,
                         batch_size);
}

EvalResult evaluate(TeacherNet& net, TeacherNet* reference, const Dataset& data, std::size_t batch_size) {
    ForwardOptions opts;
    opts.mode = ops::NormMode::eval;
    return evaluate_impl([&](Tape& tape, const Tensor& x) { return net.forward(tape, x, opts); }, reference, data,
                         batch_size);
}

std::string format_eval(const EvalResult& r) {
    std::ostringstream os;
    os << "count=" << r.count << " top1=" << fmt(r.top1);
    for (std::size_t i = 0; i < r.residual.size(); ++i) os << " residual." << i << '=' << fmt(r.residual[i]);
    return os.str();
}

std::string residual_table(const EvalResult& r) {
    std::ostringstream os;
    os << "block\tresidual\tspatial\tchannel\n";
    for (std::size_t i = 0; i < r.residual.size(); ++i) {
        os << i << '\t' << fmt(r.residual[i]) << '\t' << fmt(r.spatial[i]) << '\t' << fmt(r.channel[i]) << '\n';
    }
    return os.str();
}

bool same_layout(const NetworkSpec& a, const NetworkSpec& b) {
    NetworkSpec x = a.with_shortcuts(0), y = b.with_shortcuts(0);
    x.name = y.name;
    for (std::size_t i = 0; i < x.blocks.size() && i < y.blocks.size(); ++i) x.blocks[i].name = y.blocks[i].name;
    return x == y;
}

std::uint32_t parameter_fingerprint(StudentNet& net, const std::function<bool(const ParamRef&)>& select) {
    std::uint32_t crc = crc32(0L, Z_NULL, 0);
    net.visit_parameters([&](const ParamRef& p) {
        if (select(p)) crc = crc_tensor(crc, p.param.value());
    });
    return crc;
}

}  // namespace dgrl
