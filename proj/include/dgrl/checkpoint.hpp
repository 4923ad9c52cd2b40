#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "dgrl/network.hpp"
#include "dgrl/train.hpp"

namespace dgrl {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout, all integers little-endian:
//   "DGRL" | u32 version | u64 header length | header JSON
//   | u32 tensor count | per tensor: u32 name length, name, u8 dtype (0 = f32),
//     4 x i32 shape, u64 element count, elements
//   | u32 CRC-32 of every preceding byte
struct Checkpoint {
    std::string kind;  // "teacher" or "student"
    NetworkSpec spec;
    nlohmann::json meta = nlohmann::json::object();
    std::vector<std::pair<std::string, Tensor>> tensors;

    const Tensor* find(const std::string& name) const;
    void put(const std::string& name, const Tensor& t);
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
/// The CRC is checked before anything else is interpreted, then the version.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes, const std::string& source = "checkpoint");

/// Writes to a temporary file beside `path` and renames it into place.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
/// Missing file is DataError.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// The trailing CRC-32 the encoding would carry.
std::uint32_t checkpoint_checksum(const Checkpoint& ckpt);

// Capture and restore. Student checkpoints usually carry their teacher too.
void store_teacher(Checkpoint& ckpt, TeacherNet& teacher);
void store_student(Checkpoint& ckpt, StudentNet& student);
void store_train_state(Checkpoint& ckpt, const TrainState& state);

Checkpoint teacher_checkpoint(TeacherNet& teacher, const TrainState* state = nullptr);
Checkpoint student_checkpoint(StudentNet& student, TeacherNet* teacher, const TrainState* state = nullptr);

bool has_teacher(const Checkpoint& ckpt);
TeacherNet restore_teacher(const Checkpoint& ckpt);
/// With `expected`, a checkpoint whose spec differs is a ConfigError.
StudentNet restore_student(const Checkpoint& ckpt, const NetworkSpec* expected = nullptr);
/// Defaults when the checkpoint has no training state.
TrainState restore_train_state(const Checkpoint& ckpt);

}  // namespace dgrl
