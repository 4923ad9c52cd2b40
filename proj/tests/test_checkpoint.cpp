#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "dgrl/checkpoint.hpp"
#include "dgrl/compress.hpp"
#include "dgrl/errors.hpp"
#include "test_util.hpp"

using namespace dgrl;
using dgrl::testing::random_tensor;

namespace {

Checkpoint random_checkpoint(std::mt19937_64& rng) {
    std::uniform_int_distribution<int> k(0, 2), ch(2, 6);
    StudentNet s(presets::toy(k(rng), ch(rng)), rng());
    s.visit_parameters([&](const ParamRef& p) { p.param.value() = random_tensor(p.param.shape(), rng, -3, 3); });
    s.visit_buffers([&](const std::string&, Tensor& t) { t = random_tensor(t.shape(), rng, 0.5f, 2); });
    if (!s.branches().empty() && rng() % 2) select_channels(s, {SelectionStrategy::random, 0.5, rng()});
    TeacherNet t(s.spec().with_shortcuts(0), rng());
    TrainState state;
    state.phase = Phase::shortcut;
    state.epoch = static_cast<int>(rng() % 50);
    state.step = static_cast<std::int64_t>(rng() % 1000);
    state.optimizer.slots()["blocks.0.theta"] = {random_tensor({2, 2, 1, 1}, rng), random_tensor({2, 2, 1, 1}, rng), 4};
    state.history.push_back({"main", 0, 0.01, 1.25, 1.0, {0.5, 0.75}, 0.5});
    return student_checkpoint(s, &t, &state);
}

void expect_same(const Checkpoint& a, const Checkpoint& b) {
    EXPECT_EQ(a.kind, b.kind);
    EXPECT_TRUE(a.spec == b.spec);
    EXPECT_EQ(a.meta, b.meta);
    ASSERT_EQ(a.tensors.size(), b.tensors.size());
    for (std::size_t i = 0; i < a.tensors.size(); ++i) {
        EXPECT_EQ(a.tensors[i].first, b.tensors[i].first);
        EXPECT_TRUE(a.tensors[i].second.identical(b.tensors[i].second)) << a.tensors[i].first;
    }
}

}  // namespace

TEST(Checkpoint, RandomizedRoundTripIsBitExact) {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 100; ++trial) {
        const Checkpoint c = random_checkpoint(rng);
        const auto bytes = encode_checkpoint(c);
        const Checkpoint back = decode_checkpoint(bytes);
        expect_same(c, back);
        EXPECT_EQ(encode_checkpoint(back), bytes);
    }
}

TEST(Checkpoint, EverySingleByteFlipIsDetected) {
    std::mt19937_64 rng(2);
    const auto bytes = encode_checkpoint(random_checkpoint(rng));
    std::uniform_int_distribution<int> bit(0, 7);
    for (std::size_t i = 0; i < bytes.size(); i += 1 + i / 64) {
        auto bad = bytes;
        bad[i] ^= static_cast<std::uint8_t>(1u << bit(rng));
        EXPECT_THROW(decode_checkpoint(bad), CorruptionError) << "offset " << i;
    }
}

TEST(Checkpoint, TruncationIsCorruption) {
    std::mt19937_64 rng(3);
    const auto bytes = encode_checkpoint(random_checkpoint(rng));
    for (std::size_t n : {std::size_t{0}, std::size_t{3}, std::size_t{20}, bytes.size() / 2, bytes.size() - 1}) {
        EXPECT_THROW(decode_checkpoint(std::span(bytes).first(n)), CorruptionError) << n;
    }
}

TEST(Checkpoint, OtherVersionIsUnsupported) {
    std::mt19937_64 rng(4);
    auto bytes = encode_checkpoint(random_checkpoint(rng));
    bytes[4] = 2;
    // re-seal with a bitwise CRC-32 so only the version differs
    const std::uint32_t crc = [&] {
        std::uint32_t c = 0xFFFFFFFFu;
        for (std::size_t i = 0; i + 4 < bytes.size(); ++i) {
            c ^= bytes[i];
            for (int k = 0; k < 8; ++k) c = (c >> 1) ^ (0xEDB88320u & (0u - (c & 1u)));
        }
        return ~c;
    }();
    for (int i = 0; i < 4; ++i) bytes[bytes.size() - 4 + i] = static_cast<std::uint8_t>(crc >> (8 * i));
    EXPECT_THROW(decode_checkpoint(bytes), UnsupportedVersionError);
}

TEST(Checkpoint, LittleEndianHeader) {
    std::mt19937_64 rng(5);
    const auto bytes = encode_checkpoint(random_checkpoint(rng));
    EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "DGRL");
    EXPECT_EQ(bytes[4], 1);
    EXPECT_EQ(bytes[5] | bytes[6] | bytes[7], 0);
}

TEST(Checkpoint, RestoredStudentGivesIdenticalLogits) {
    std::mt19937_64 rng(6);
    StudentNet s(presets::toy(1), 1);
    s.visit_parameters([&](const ParamRef& p) { p.param.value() = random_tensor(p.param.shape(), rng); });
    s.visit_buffers([&](const std::string&, Tensor& t) { t = random_tensor(t.shape(), rng, 0.5f, 2); });
    select_channels(s, {SelectionStrategy::global, 0.5, 0});
    sparsify_interaction(s, 0.5f);
    TeacherNet t(presets::toy(0), 2);
    const Checkpoint c = decode_checkpoint(encode_checkpoint(student_checkpoint(s, &t)));
    StudentNet r = restore_student(c);
    TeacherNet rt = restore_teacher(c);
    const Tensor x = random_tensor(s.spec().input_shape(8), rng);
    ForwardOptions eval;
    eval.mode = ops::NormMode::eval;
    Tape tape = Tape::inference();
    EXPECT_TRUE(r.forward(tape, x, eval).logits.value().identical(s.forward(tape, x, eval).logits.value()));
    EXPECT_TRUE(rt.forward(tape, x, eval).logits.value().identical(t.forward(tape, x, eval).logits.value()));
    for (std::size_t b = 0; b < s.branches().size(); ++b) {
        EXPECT_EQ(r.branches()[b]->state, ShortcutState::sparsified);
        EXPECT_EQ(r.branches()[b]->selected, s.branches()[b]->selected);
    }
}

TEST(Checkpoint, SpecGuardRejectsOtherShortcutCount) {
    StudentNet s(presets::toy(1), 1);
    const Checkpoint c = student_checkpoint(s, nullptr);
    const NetworkSpec k0 = presets::toy(0);
    EXPECT_THROW(restore_student(c, &k0), ConfigError);
    const NetworkSpec k1 = presets::toy(1);
    EXPECT_NO_THROW(restore_student(c, &k1));
    EXPECT_THROW(restore_teacher(c), ConfigError);
}

TEST(Checkpoint, TrainStateRoundTrip) {
    std::mt19937_64 rng(7);
    const Checkpoint c = decode_checkpoint(encode_checkpoint(random_checkpoint(rng)));
    const TrainState s = restore_train_state(c);
    EXPECT_EQ(s.phase, Phase::shortcut);
    ASSERT_EQ(s.optimizer.slots().count("blocks.0.theta"), 1u);
    EXPECT_EQ(s.optimizer.slots().at("blocks.0.theta").steps, 4);
    ASSERT_EQ(s.history.size(), 1u);
    EXPECT_EQ(s.history[0].distill, (std::vector<double>{0.5, 0.75}));
    Checkpoint again = c;
    again.meta.erase("train");
    store_train_state(again, s);
    EXPECT_EQ(again.meta, c.meta);
}

TEST(Checkpoint, FileRoundTripAndMissingFile) {
    std::mt19937_64 rng(8);
    const Checkpoint c = random_checkpoint(rng);
    const auto path = std::filesystem::temp_directory_path() / "dgrl_ckpt_test.dgrl";
    std::filesystem::remove(path);
    save_checkpoint(path, c);
    expect_same(c, load_checkpoint(path));
    EXPECT_EQ(checkpoint_checksum(c), checkpoint_checksum(load_checkpoint(path)));
    std::filesystem::remove(path);
    EXPECT_THROW(load_checkpoint(path), DataError);
}

TEST(Checkpoint, ChecksumTracksContent) {
    std::mt19937_64 rng(9);
    Checkpoint c = random_checkpoint(rng);
    const std::uint32_t a = checkpoint_checksum(c);
    c.tensors[0].second[0] += 1.0f;
    EXPECT_NE(checkpoint_checksum(c), a);
}
