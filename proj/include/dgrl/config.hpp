#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dgrl/compress.hpp"
#include "dgrl/data.hpp"
#include "dgrl/train.hpp"

namespace dgrl {

// Sectioned INI document; ';' starts a comment. Every key is optional and
// unknown sections or keys are rejected.
//
// [data]      source = synthetic | cifar10     (synthetic)
//             dir = PATH                       (empty; needed for cifar10)
//             train_subset = N                 (0 = all)
//             test_subset = N                  (0 = all)
//             synthetic_train = N              (512)
//             synthetic_test = N               (256)
//             augment = true|false             (true)
// [network]   preset = toy | vgg-small | vgg-small-desk | resnet18   (toy)
//             shortcuts = K                    (1)
//             spec_file = PATH                 (empty; JSON spec overriding preset)
// [train]     batch_size (128) lr (0.01) schedule ("", e.g. 120:0.1,200:0.1)
//             epochs (1) finetune_epochs (1) optimizer (adam | sgd-momentum)
//             momentum (0.9) weight_decay (0) seed (0) backend (packed | emulated)
//             max_steps (0 = unlimited)
// [distill]   alpha (0.1) pairs ("", e.g. 0:0,1:1; empty pairs block i with i)
// [compress]  strategy (global | blockwise | random) epsilon (0.1) seed (0)
//             sparsify_threshold (auto = 0.01 * max|T| per branch, or a number)
struct RunConfig {
    struct Data {
        std::string source = "synthetic";
        std::string dir;
        std::size_t train_subset = 0;
        std::size_t test_subset = 0;
        std::size_t synthetic_train = 512;
        std::size_t synthetic_test = 256;
        bool augment = true;
    } data;
    struct Network {
        std::string preset = "toy";
        int shortcuts = 1;
        std::string spec_file;
    } network;
    struct Train {
        std::size_t batch_size = 128;
        double lr = 0.01;
        std::vector<std::pair<int, double>> schedule;
        int epochs = 1;
        int finetune_epochs = 1;
        OptimizerKind optimizer = OptimizerKind::adam;
        double momentum = 0.9;
        double weight_decay = 0.0;
        std::uint64_t seed = 0;
        BinaryBackend backend = BinaryBackend::packed;
        std::int64_t max_steps = 0;
    } train;
    struct Distill {
        double alpha = 0.1;
        std::vector<std::pair<int, int>> pairs;
    } distill;
    struct Compress {
        SelectionStrategy strategy = SelectionStrategy::global;
        double epsilon = 0.1;
        std::uint64_t seed = 0;
        std::optional<double> sparsify_threshold;
    } compress;
};

RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);
/// Every key, fixed order; parse(dump(c)) reproduces c.
std::string dump_run_config(const RunConfig& config);

NetworkSpec network_spec(const RunConfig& config);
/// Phase-specific training settings; finetune uses finetune_epochs and
/// drops schedule points at or beyond it.
TrainConfig train_config(const RunConfig& config, Phase phase);
SelectionPolicy selection_policy(const RunConfig& config);

/// Synthetic data is shaped to the network input and class count.
Dataset load_train_data(const RunConfig& config, const NetworkSpec& spec);
Dataset load_test_data(const RunConfig& config, const NetworkSpec& spec);

}  // namespace dgrl
