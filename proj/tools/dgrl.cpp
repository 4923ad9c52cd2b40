// Command-line driver. Exit codes: 0 ok, 2 bad config or usage, 3 missing
// or corrupt data/checkpoint, 4 numeric divergence.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <zlib.h>

#include "dgrl/checkpoint.hpp"
#include "dgrl/compress.hpp"
#include "dgrl/config.hpp"
#include "dgrl/cost_model.hpp"
#include "dgrl/errors.hpp"
#include "dgrl/train.hpp"

#ifndef DGRL_VERSION
#define DGRL_VERSION "unknown"
#endif

namespace fs = std::filesystem;
using namespace dgrl;

namespace {

struct Args {
    std::string command;
    std::string config;
    std::string checkpoint;
    std::string out;
    std::optional<std::uint64_t> seed;
};

std::uint32_t crc_of(const std::string& s) {
    return static_cast<std::uint32_t>(
        crc32(crc32(0L, Z_NULL, 0), reinterpret_cast<const Bytef*>(s.data()), static_cast<uInt>(s.size())));
}

std::string hex(std::uint32_t v) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%08x", v);
    return buf;
}

class Run {
public:
    explicit Run(Args args) : args_(std::move(args)) {
        if (!args_.config.empty()) config_ = load_run_config(args_.config);
        if (args_.seed) {
            config_.train.seed = *args_.seed;
            config_.compress.seed = *args_.seed;
        }
        spec_ = network_spec(config_);
    }

    const RunConfig& config() const { return config_; }
    const NetworkSpec& spec() const { return spec_; }

    Checkpoint input_checkpoint() {
        if (args_.checkpoint.empty()) throw UsageError(args_.command + " needs --checkpoint");
        if (!fs::exists(args_.checkpoint)) throw DataError("checkpoint " + args_.checkpoint + " does not exist");
        Checkpoint c = load_checkpoint(args_.checkpoint);
        input_crc_ = checkpoint_checksum(c);
        return c;
    }

    /// Claims out/name; an existing file is never overwritten.
    fs::path output(const std::string& name) {
        if (args_.out.empty()) throw UsageError(args_.command + " needs --out");
        fs::create_directories(args_.out);
        const fs::path p = fs::path(args_.out) / name;
        if (fs::exists(p)) throw UsageError("output " + p.string() + " already exists");
        written_.push_back(name);
        return p;
    }
    bool has_out() const { return !args_.out.empty(); }

    void write_text(const std::string& name, const std::string& text) {
        const fs::path p = output(name);
        fs::path tmp = p;
        tmp += ".tmp";
        {
            std::ofstream f(tmp);
            f << text;
            if (!f) throw DataError("cannot write " + p.string());
        }
        fs::rename(tmp, p);
    }

    void write_checkpoint(const Checkpoint& c) {
        output_crc_ = checkpoint_checksum(c);
        save_checkpoint(output("checkpoint.dgrl"), c);
    }

    MetricsSink metrics_sink() {
        metrics_path_ = output("metrics.log");
        metrics_ = std::make_unique<std::ofstream>(metrics_path_);
        return [this](const std::string& line) { *metrics_ << line << '\n'; };
    }

    void finish() {
        if (metrics_) metrics_->flush();
        if (!has_out()) return;
        const std::string cfg = dump_run_config(config_);
        nlohmann::json m = {{"command", args_.command},
                            {"code_version", DGRL_VERSION},
                            {"config_crc32", hex(crc_of(cfg))},
                            {"config", cfg},
                            {"seed", config_.train.seed},
                            {"outputs", written_}};
        if (!args_.config.empty()) m["config_path"] = args_.config;
        if (!args_.checkpoint.empty()) {
            m["checkpoint_in"] = args_.checkpoint;
            m["checkpoint_in_crc32"] = hex(input_crc_);
        }
        if (output_crc_) m["checkpoint_out_crc32"] = hex(*output_crc_);
        write_text("manifest.json", m.dump(2) + "\n");
    }

    Dataset train_data() const { return load_train_data(config_, spec_); }
    Dataset test_data() const { return load_test_data(config_, spec_); }

private:
    Args args_;
    RunConfig config_;
    NetworkSpec spec_;
    std::uint32_t input_crc_ = 0;
    std::optional<std::uint32_t> output_crc_;
    std::vector<std::string> written_;
    fs::path metrics_path_;
    std::unique_ptr<std::ofstream> metrics_;
};

void print_history_tail(const TrainState& state) {
    if (state.history.empty()) return;
    const EpochRecord& r = state.history.back();
    std::cout << "phase=" << r.phase << " epoch=" << r.epoch << " loss=" << r.loss << " ce_loss=" << r.ce_loss;
    for (std::size_t i = 0; i < r.distill.size(); ++i) std::cout << " distill_loss." << i << '=' << r.distill[i];
    std::cout << '\n';
}

StudentNet load_student(Run& run, const Checkpoint& c) { return restore_student(c, &run.spec()); }

int cmd_train_teacher(Run& run) {
    const NetworkSpec teacher_spec = run.spec().with_shortcuts(0);
    TeacherNet teacher(teacher_spec, run.config().train.seed);
    TrainState state;
    const Dataset train = run.train_data();
    const Dataset test = run.test_data();
    train_teacher(teacher, train, train_config(run.config(), Phase::teacher), state, run.metrics_sink(), &test);
    run.write_checkpoint(teacher_checkpoint(teacher, &state));
    print_history_tail(state);
    std::cout << format_eval(evaluate(teacher, nullptr, test)) << '\n';
    return 0;
}

int train_student_phase(Run& run, Phase phase) {
    Checkpoint in = run.input_checkpoint();
    TeacherNet teacher = restore_teacher(in);
    StudentNet student;
    TrainState state;
    if (phase == Phase::main && in.kind == "teacher") {
        student = StudentNet(run.spec(), run.config().train.seed);
    } else {
        student = load_student(run, in);
        state = restore_train_state(in);
    }
    const Dataset train = run.train_data();
    const Dataset test = run.test_data();
    const TrainConfig tc = train_config(run.config(), phase);
    const MetricsSink sink = run.metrics_sink();
    if (phase == Phase::finetune) finetune_shortcuts(student, teacher, train, tc, state, sink, &test);
    else train_student(student, teacher, train, tc, state, sink, &test);
    run.write_checkpoint(student_checkpoint(student, &teacher, &state));
    print_history_tail(state);
    std::cout << format_eval(evaluate(student, &teacher, test, 256, tc.backend)) << '\n';
    return 0;
}

int cmd_select(Run& run) {
    Checkpoint in = run.input_checkpoint();
    StudentNet student = load_student(run, in);
    const SelectionReport report = select_channels(student, selection_policy(run.config()));
    for (const auto& w : report.warnings) std::cerr << "warning: " << w << '\n';
    Checkpoint out = in;
    out.tensors.erase(std::remove_if(out.tensors.begin(), out.tensors.end(),
                                     [](const auto& t) { return t.first.rfind("student.", 0) == 0; }),
                      out.tensors.end());
    store_student(out, student);
    run.write_checkpoint(out);
    run.write_text("selection.json", nlohmann::json(report).dump(2) + "\n");
    run.write_text("selection.tsv", report.table());
    std::cout << "strategy=" << report.strategy << " epsilon=" << report.epsilon << " budget=" << report.budget
              << " kept=" << report.total_kept << " overhead=" << overhead_fraction(student) << '\n';
    return 0;
}

int cmd_sparsify(Run& run) {
    Checkpoint in = run.input_checkpoint();
    StudentNet student = load_student(run, in);
    std::optional<float> thr;
    if (run.config().compress.sparsify_threshold) thr = static_cast<float>(*run.config().compress.sparsify_threshold);
    const SparsifyResult r = sparsify_interaction(student, thr);
    for (const auto& w : r.warnings) std::cerr << "warning: " << w << '\n';
    Checkpoint out = in;
    out.tensors.erase(std::remove_if(out.tensors.begin(), out.tensors.end(),
                                     [](const auto& t) { return t.first.rfind("student.", 0) == 0; }),
                      out.tensors.end());
    store_student(out, student);
    run.write_checkpoint(out);
    std::size_t nnz = 0;
    for (const auto* br : student.branches()) nnz += br->mix_nonzeros();
    std::cout << "zeroed=" << r.zeroed << " mix_nonzeros=" << nnz << " overhead=" << overhead_fraction(student) << '\n';
    return 0;
}

int cmd_eval(Run& run, bool residuals_only) {
    Checkpoint in = run.input_checkpoint();
    const Dataset test = run.test_data();
    EvalResult r;
    if (in.kind == "teacher") {
        TeacherNet teacher = restore_teacher(in);
        TeacherNet reference = restore_teacher(in);
        r = evaluate(teacher, &reference, test);
    } else {
        StudentNet student = load_student(run, in);
        std::optional<TeacherNet> teacher;
        if (has_teacher(in)) teacher = restore_teacher(in);
        r = evaluate(student, teacher ? &*teacher : nullptr, test, 256, run.config().train.backend);
    }
    if (residuals_only) {
        const std::string table = residual_table(r);
        std::cout << table;
        if (run.has_out()) run.write_text("residuals.tsv", table);
    } else {
        std::cout << format_eval(r) << '\n';
        if (run.has_out()) run.write_text("eval.txt", format_eval(r) + "\n");
    }
    return 0;
}

int cmd_cost(Run& run, const std::string& checkpoint) {
    const NetworkSpec& spec = run.spec();
    const double eps = run.config().compress.epsilon;
    std::vector<CostRow> rows;
    rows.push_back({"full-precision", cost_of(spec, CompressionState::dense(spec.with_shortcuts(0)), Precision::full)});
    const NetworkSpec k0 = spec.with_shortcuts(0);
    rows.push_back({"binary K=0", cost_of(k0, CompressionState::dense(k0), Precision::binary)});
    int k = 0;
    for (const auto& b : spec.blocks) k = std::max(k, b.num_shortcuts);
    if (k > 0) {
        const std::string K = "binary K=" + std::to_string(k);
        rows.push_back({K + " dense", cost_of(spec, CompressionState::dense(spec), Precision::binary)});
        std::vector<int> kept;
        for (const auto& b : spec.blocks) kept.push_back(channel_budget(eps, b.c_out));
        char label[64];
        std::snprintf(label, sizeof label, " eps=%g blockwise", eps);
        rows.push_back({K + label, cost_of(spec, CompressionState::selected(spec, kept), Precision::binary)});
    }
    if (!checkpoint.empty()) {
        Checkpoint in = run.input_checkpoint();
        if (in.kind == "student") {
            StudentNet student = load_student(run, in);
            rows.push_back({"checkpoint", cost_of(student.spec(), CompressionState::of(student), Precision::binary)});
        }
    }
    const std::string table = cost_table(rows);
    std::cout << table;
    if (run.has_out()) run.write_text("cost.tsv", table);
    return 0;
}

int dispatch(const Args& args) {
    Run run(args);
    int code = 0;
    if (args.command == "train-teacher") code = cmd_train_teacher(run);
    else if (args.command == "train-main") code = train_student_phase(run, Phase::main);
    else if (args.command == "train-shortcut") code = train_student_phase(run, Phase::shortcut);
    else if (args.command == "finetune") code = train_student_phase(run, Phase::finetune);
    else if (args.command == "select") code = cmd_select(run);
    else if (args.command == "sparsify") code = cmd_sparsify(run);
    else if (args.command == "eval") code = cmd_eval(run, false);
    else if (args.command == "residuals") code = cmd_eval(run, true);
    else if (args.command == "cost") code = cmd_cost(run, args.checkpoint);
    run.finish();
    return code;
}

int fail(const char* category, int code, const std::string& message) {
    std::string flat = message;
    std::replace(flat.begin(), flat.end(), '\n', ' ');
    std::cerr << "error=" << category << " message=" << nlohmann::json(flat).dump() << '\n';
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"binary network distillation toolkit"};
    app.require_subcommand(1);
    Args args;
    const std::vector<std::pair<std::string, std::string>> commands = {
        {"train-teacher", "train the full-precision teacher"},
        {"train-main", "train the student main branch against a teacher checkpoint"},
        {"train-shortcut", "train shortcut branches with the main branch frozen"},
        {"select", "keep the most important squeeze channels"},
        {"sparsify", "zero small interaction entries"},
        {"finetune", "fine-tune surviving shortcut parameters"},
        {"eval", "top-1 accuracy and per-block residuals"},
        {"cost", "operation and size table"},
        {"residuals", "per-block residual table against the teacher"},
    };
    for (const auto& [name, help] : commands) {
        CLI::App* sub = app.add_subcommand(name, help);
        sub->add_option("--config", args.config, "run configuration (INI)")->check(CLI::ExistingFile);
        sub->add_option("--checkpoint", args.checkpoint, "input checkpoint");
        sub->add_option("--out", args.out, "output directory");
        sub->add_option("--seed", args.seed, "overrides train.seed and compress.seed");
        sub->callback([&args, n = name] { args.command = n; });
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail("usage", 2, e.what());
    }
    try {
        return dispatch(args);
    } catch (const ConfigError& e) {
        return fail("config", 2, e.what());
    } catch (const UsageError& e) {
        return fail("usage", 2, e.what());
    } catch (const DataError& e) {
        return fail("data", 3, e.what());
    } catch (const CorruptionError& e) {
        return fail("corruption", 3, e.what());
    } catch (const UnsupportedVersionError& e) {
        return fail("version", 3, e.what());
    } catch (const DivergenceError& e) {
        return fail("divergence", 4, e.what());
    } catch (const std::exception& e) {
        return fail("internal", 1, e.what());
    }
}
