#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "dgrl/bitconv.hpp"
#include "dgrl/network_spec.hpp"
#include "dgrl/ops.hpp"

namespace dgrl {

/// Which optimizer group a parameter belongs to. Training phases freeze
/// parameters by role.
enum class ParamRole {
    stem,              // first conv + its BN
    main_kernel,       // theta* of binarized blocks
    main_threshold,    // t of binarized blocks
    main_bn,           // BN of binarized blocks
    head,              // hidden FC layers (theta*, t, BN) and final FC
    shortcut_kernel,   // gamma*
    shortcut_omega,    // omega
    shortcut_threshold,
    shortcut_mix,      // T
    teacher,
};

std::string to_string(ParamRole role);

/// Shadow weights are clipped to [-1, 1] after each update.
bool is_shadow_weight(ParamRole role);

struct BatchNormParams {
    Variable gamma;
    Variable beta;
    Tensor running_mean;
    Tensor running_var;

    static BatchNormParams identity(int channels);
    Variable apply(Tape& tape, const Variable& x, ops::NormMode mode);
};

enum class ShortcutState { dense, selected, sparsified };
std::string to_string(ShortcutState state);
ShortcutState shortcut_state_from_string(const std::string& name);

/// Squeeze-and-interaction shortcut. The squeeze binarizes the block input
/// at t_sc, convolves it (3x3, padding 1, block stride) with sign(gamma*)
/// and scales each output channel by omega. Dense branches produce all C'
/// channels directly (T is the identity and not stored); selected branches
/// produce S channels that T (S x C') mixes back to C'.
struct ShortcutBranch {
    int c_in = 0;
    int c_out = 0;
    int stride = 1;
    ShortcutState state = ShortcutState::dense;
    /// Original channel index of each kept squeeze channel, ascending.
    std::vector<int> selected;
    Variable gamma_star;  // (S, C, 3, 3)
    Variable omega;       // (1, S, 1, 1)
    Variable t_sc;        // scalar
    Variable mix;         // (1, 1, S, C'); undefined in dense state

    int squeeze_channels() const { return static_cast<int>(selected.size()); }
    bool empty() const { return selected.empty(); }
    /// Number of stored nonzero T entries; 0 in dense state.
    std::size_t mix_nonzeros() const;

    /// omega is trained only while dense; T only while selected.
    bool locked(ParamRole role) const;

    /// Reallocates parameters for a state and kept set, zero-filled except
    /// the one-hot T pattern. Used when restoring checkpoints.
    void set_layout(ShortcutState new_state, std::vector<int> kept);
};

struct ForwardOptions {
    ops::NormMode mode = ops::NormMode::train;
    QuantizerMode quantizer = QuantizerMode::hard;
    BinaryBackend backend = BinaryBackend::emulated;
    bool use_shortcuts = true;
    bool update_running_stats = true;
};

struct ForwardResult {
    std::vector<Variable> features;  // one per block, after pooling
    std::vector<Variable> block_inputs;  // what each block's quantizers see; student only
    Variable logits;
};

/// Squeeze-and-interaction branch applied to a block input. Throws
/// ConfigError on an empty selection.
Variable shortcut_forward(Tape& tape, ShortcutBranch& branch, const Variable& input,
                          const ForwardOptions& options);

struct ParamRef {
    const std::string& name;
    Variable& param;
    ParamRole role;
    /// Frozen by its branch state regardless of the training phase.
    bool locked = false;
};

using ParamVisitor = std::function<void(const ParamRef&)>;
using BufferVisitor = std::function<void(const std::string& name, Tensor& buffer)>;

/// Full-precision network: every conv followed by BN and ReLU.
class TeacherNet {
public:
    TeacherNet() = default;
    TeacherNet(const NetworkSpec& spec, std::uint64_t seed);

    const NetworkSpec& spec() const { return spec_; }
    ForwardResult forward(Tape& tape, const Tensor& input, const ForwardOptions& options);

    void visit_parameters(const ParamVisitor& fn);
    void visit_buffers(const BufferVisitor& fn);

private:
    struct Layer {
        Variable kernel;  // conv (Cout, Cin, k, k) or linear (O, F, 1, 1)
        BatchNormParams bn;
    };

    NetworkSpec spec_;
    Layer stem_;
    std::vector<Layer> blocks_;
    std::vector<Layer> hidden_;
    Variable fc_weight_;
    Variable fc_bias_;
};

struct StudentBlock {
    BlockSpec spec;
    Variable theta_star;
    Variable threshold;
    BatchNormParams bn;
    std::vector<ShortcutBranch> shortcuts;
};

/// Binary network: float stem (conv + BN), binarized blocks
/// BN(sign(x, t) * sign(theta*)) plus shortcut outputs, binarized hidden
/// FC layers, float final FC.
class StudentNet {
public:
    StudentNet() = default;
    StudentNet(const NetworkSpec& spec, std::uint64_t seed);

    const NetworkSpec& spec() const { return spec_; }
    ForwardResult forward(Tape& tape, const Tensor& input, const ForwardOptions& options);

    std::vector<StudentBlock>& blocks() { return blocks_; }
    const std::vector<StudentBlock>& blocks() const { return blocks_; }

    /// Every shortcut branch, block-major.
    std::vector<ShortcutBranch*> branches();
    std::vector<const ShortcutBranch*> branches() const;

    void visit_parameters(const ParamVisitor& fn);
    void visit_buffers(const BufferVisitor& fn);

private:
    struct HiddenLayer {
        Variable theta_star;  // (O, F, 1, 1), binarized when the head is
        Variable threshold;
        BatchNormParams bn;
    };

    NetworkSpec spec_;
    Variable stem_kernel_;
    BatchNormParams stem_bn_;
    std::vector<StudentBlock> blocks_;
    std::vector<HiddenLayer> hidden_;
    Variable fc_weight_;
    Variable fc_bias_;
};

/// Rejects specs that are encodable for costing but not trainable here.
void require_trainable(const NetworkSpec& spec);

}  // namespace dgrl
