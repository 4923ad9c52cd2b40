#include "dgrl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <unistd.h>
#include <zlib.h>

#include "dgrl/errors.hpp"

namespace dgrl {

namespace {

constexpr char kMagic[4] = {'D', 'G', 'R', 'L'};

class Writer {
public:
    void bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        out_.insert(out_.end(), b, b + n);
    }
    template <class T>
    void le(T v) {
        using U = std::make_unsigned_t<T>;
        const U u = static_cast<U>(v);
        for (std::size_t i = 0; i < sizeof(T); ++i) out_.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
    }
    void f32(float v) { le(std::bit_cast<std::uint32_t>(v)); }
    std::vector<std::uint8_t>& out() { return out_; }

private:
    std::vector<std::uint8_t> out_;
};

class Reader {
public:
    Reader(std::span<const std::uint8_t> in, std::string source) : in_(in), source_(std::move(source)) {}

    void need(std::size_t n) const {
        if (in_.size() - pos_ < n) {
            throw CorruptionError(source_ + ": truncated at byte offset " + std::to_string(pos_));
        }
    }
    template <class T>
    T le() {
        need(sizeof(T));
        std::make_unsigned_t<T> u = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) u |= static_cast<std::make_unsigned_t<T>>(in_[pos_ + i]) << (8 * i);
        pos_ += sizeof(T);
        return static_cast<T>(u);
    }
    float f32() { return std::bit_cast<float>(le<std::uint32_t>()); }
    std::string str(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    std::size_t pos() const { return pos_; }
    std::size_t remaining() const { return in_.size() - pos_; }

private:
    std::span<const std::uint8_t> in_;
    std::string source_;
    std::size_t pos_ = 0;
};

std::uint32_t crc_of(std::span<const std::uint8_t> bytes) {
    return static_cast<std::uint32_t>(
        crc32(crc32(0L, Z_NULL, 0), reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

const Tensor& require_tensor(const Checkpoint& ckpt, const std::string& name, const Shape& shape) {
    const Tensor* t = ckpt.find(name);
    if (!t) throw CorruptionError("checkpoint lacks tensor " + name);
    if (t->shape() != shape) {
        throw ConfigError("checkpoint tensor " + name + " has shape " + t->shape().str() + ", expected " + shape.str());
    }
    return *t;
}

template <class Net>
void store_net(Checkpoint& ckpt, Net& net, const std::string& prefix) {
    net.visit_parameters([&](const ParamRef& p) { ckpt.put(prefix + p.name, p.param.value()); });
    net.visit_buffers([&](const std::string& name, Tensor& t) { ckpt.put(prefix + name, t); });
}

template <class Net>
void load_net(const Checkpoint& ckpt, Net& net, const std::string& prefix) {
    net.visit_parameters([&](const ParamRef& p) {
        p.param.value() = require_tensor(ckpt, prefix + p.name, p.param.shape());
    });
    net.visit_buffers([&](const std::string& name, Tensor& t) { t = require_tensor(ckpt, prefix + name, t.shape()); });
}

}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return &t;
    return nullptr;
}

void Checkpoint::put(const std::string& name, const Tensor& t) {
    for (auto& [n, existing] : tensors) {
        if (n == name) {
            existing = t;
            return;
        }
    }
    tensors.emplace_back(name, t);
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
    Writer w;
    w.bytes(kMagic, 4);
    w.le<std::uint32_t>(kCheckpointVersion);
    const std::string header = nlohmann::json{{"kind", ckpt.kind}, {"spec", ckpt.spec}, {"meta", ckpt.meta}}.dump();
    w.le<std::uint64_t>(header.size());
    w.bytes(header.data(), header.size());
    w.le<std::uint32_t>(static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& [name, t] : ckpt.tensors) {
        w.le<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
        w.bytes(name.data(), name.size());
        w.le<std::uint8_t>(0);
        const Shape& s = t.shape();
        for (int d : {s.n, s.c, s.h, s.w}) w.le<std::int32_t>(d);
        w.le<std::uint64_t>(t.numel());
        for (float v : t.span()) w.f32(v);
    }
    const std::uint32_t crc = crc_of(w.out());
    w.le<std::uint32_t>(crc);
    return std::move(w.out());
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes, const std::string& source) {
    if (bytes.size() < 4 + 4 + 8 + 4 + 4) throw CorruptionError(source + ": too short to be a checkpoint");
    if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw CorruptionError(source + ": bad magic, not a checkpoint");
    const auto body = bytes.first(bytes.size() - 4);
    Reader tail(bytes.last(4), source);
    const std::uint32_t stored = tail.le<std::uint32_t>();
    if (crc_of(body) != stored) throw CorruptionError(source + ": checksum mismatch");

    Reader r(body, source);
    r.str(4);
    const std::uint32_t version = r.le<std::uint32_t>();
    if (version != kCheckpointVersion) {
        throw UnsupportedVersionError(source + ": checkpoint format version " + std::to_string(version) +
                                      " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");
    }
    const std::uint64_t header_len = r.le<std::uint64_t>();
    if (header_len > r.remaining()) throw CorruptionError(source + ": header length exceeds file");
    Checkpoint ckpt;
    try {
        const auto header = nlohmann::json::parse(r.str(static_cast<std::size_t>(header_len)));
        ckpt.kind = header.at("kind").get<std::string>();
        ckpt.spec = header.at("spec").get<NetworkSpec>();
        ckpt.meta = header.at("meta");
    } catch (const nlohmann::json::exception& e) {
        throw CorruptionError(source + ": malformed header: " + e.what());
    } catch (const ConfigError& e) {
        throw CorruptionError(source + ": malformed header: " + e.what());
    }
    const std::uint32_t count = r.le<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = r.le<std::uint32_t>();
        std::string name = r.str(name_len);
        const std::uint8_t dtype = r.le<std::uint8_t>();
        if (dtype != 0) throw CorruptionError(source + ": tensor " + name + " has unknown dtype");
        Shape s;
        s.n = r.le<std::int32_t>();
        s.c = r.le<std::int32_t>();
        s.h = r.le<std::int32_t>();
        s.w = r.le<std::int32_t>();
        const std::uint64_t numel = r.le<std::uint64_t>();
        if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0 ||
            numel != static_cast<std::uint64_t>(s.n) * s.c * s.h * s.w || numel * 4 > r.remaining()) {
            throw CorruptionError(source + ": tensor " + name + " has inconsistent extents");
        }
        std::vector<float> data(static_cast<std::size_t>(numel));
        for (auto& v : data) v = r.f32();
        ckpt.tensors.emplace_back(std::move(name), numel == 0 ? Tensor(s) : Tensor(s, std::move(data)));
    }
    if (r.remaining() != 0) throw CorruptionError(source + ": trailing bytes after tensors");
    return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    const std::vector<std::uint8_t> bytes = encode_checkpoint(ckpt);
    auto tmp = path;
    tmp += ".tmp." + std::to_string(::getpid());
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot write " + tmp.string());
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw DataError("short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint " + path.string());
    const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes, path.string());
}

std::uint32_t checkpoint_checksum(const Checkpoint& ckpt) {
    const std::vector<std::uint8_t> bytes = encode_checkpoint(ckpt);
    return crc_of(std::span<const std::uint8_t>(bytes).first(bytes.size() - 4));
}

void store_teacher(Checkpoint& ckpt, TeacherNet& teacher) {
    ckpt.meta["teacher_spec"] = teacher.spec();
    store_net(ckpt, teacher, "teacher.");
}

void store_student(Checkpoint& ckpt, StudentNet& student) {
    nlohmann::json branches = nlohmann::json::array();
    for (const auto& blk : student.blocks()) {
        nlohmann::json row = nlohmann::json::array();
        for (const auto& br : blk.shortcuts) row.push_back({{"state", to_string(br.state)}, {"selected", br.selected}});
        branches.push_back(row);
    }
    ckpt.meta["branches"] = branches;
    store_net(ckpt, student, "student.");
}

void store_train_state(Checkpoint& ckpt, const TrainState& state) {
    nlohmann::json slots = nlohmann::json::object();
    for (const auto& [name, slot] : state.optimizer.slots()) {
        slots[name] = slot.steps;
        ckpt.put("opt." + name + ".m", slot.m);
        if (!slot.v.empty()) ckpt.put("opt." + name + ".v", slot.v);
    }
    const OptimizerConfig& oc = state.optimizer.config();
    nlohmann::json history = nlohmann::json::array();
    for (const auto& h : state.history) {
        history.push_back({{"phase", h.phase}, {"epoch", h.epoch}, {"lr", h.lr}, {"loss", h.loss},
                           {"ce_loss", h.ce_loss}, {"distill", h.distill}, {"val_accuracy", h.val_accuracy}});
    }
    ckpt.meta["train"] = {{"phase", to_string(state.phase)},
                          {"epoch", state.epoch},
                          {"step", state.step},
                          {"optimizer",
                           {{"kind", to_string(oc.kind)},
                            {"momentum", oc.momentum},
                            {"beta1", oc.beta1},
                            {"beta2", oc.beta2},
                            {"eps", oc.eps},
                            {"weight_decay", oc.weight_decay}}},
                          {"slots", slots}};
    ckpt.meta["history"] = history;
}

Checkpoint teacher_checkpoint(TeacherNet& teacher, const TrainState* state) {
    Checkpoint c;
    c.kind = "teacher";
    c.spec = teacher.spec();
    store_teacher(c, teacher);
    if (state) store_train_state(c, *state);
    return c;
}

Checkpoint student_checkpoint(StudentNet& student, TeacherNet* teacher, const TrainState* state) {
    Checkpoint c;
    c.kind = "student";
    c.spec = student.spec();
    store_student(c, student);
    if (teacher) store_teacher(c, *teacher);
    if (state) store_train_state(c, *state);
    return c;
}

bool has_teacher(const Checkpoint& ckpt) { return ckpt.meta.contains("teacher_spec"); }

TeacherNet restore_teacher(const Checkpoint& ckpt) {
    if (!has_teacher(ckpt)) throw ConfigError("checkpoint holds no teacher network");
    NetworkSpec spec;
    try {
        spec = ckpt.meta.at("teacher_spec").get<NetworkSpec>();
    } catch (const nlohmann::json::exception& e) {
        throw CorruptionError(std::string("malformed teacher spec: ") + e.what());
    }
    TeacherNet net(spec, 0);
    load_net(ckpt, net, "teacher.");
    return net;
}

StudentNet restore_student(const Checkpoint& ckpt, const NetworkSpec* expected) {
    if (ckpt.kind != "student") throw ConfigError("checkpoint holds a " + ckpt.kind + " network, not a student");
    if (expected && !(*expected == ckpt.spec)) {
        throw ConfigError("checkpoint network '" + ckpt.spec.name + "' does not match the configured spec");
    }
    StudentNet net(ckpt.spec, 0);
    const auto& layout = ckpt.meta.at("branches");
    auto& blocks = net.blocks();
    if (layout.size() != blocks.size()) throw CorruptionError("checkpoint branch layout does not match its spec");
    try {
        for (std::size_t b = 0; b < blocks.size(); ++b) {
            if (layout[b].size() != blocks[b].shortcuts.size()) {
                throw CorruptionError("checkpoint branch layout does not match its spec");
            }
            for (std::size_t k = 0; k < blocks[b].shortcuts.size(); ++k) {
                const auto& entry = layout[b][k];
                blocks[b].shortcuts[k].set_layout(shortcut_state_from_string(entry.at("state").get<std::string>()),
                                                  entry.at("selected").get<std::vector<int>>());
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw CorruptionError(std::string("malformed branch layout: ") + e.what());
    }
    load_net(ckpt, net, "student.");
    return net;
}

TrainState restore_train_state(const Checkpoint& ckpt) {
    TrainState state;
    if (!ckpt.meta.contains("train")) return state;
    try {
        const auto& t = ckpt.meta.at("train");
        const auto& o = t.at("optimizer");
        OptimizerConfig oc;
        oc.kind = optimizer_kind_from_string(o.at("kind").get<std::string>());
        oc.momentum = o.at("momentum").get<double>();
        oc.beta1 = o.at("beta1").get<double>();
        oc.beta2 = o.at("beta2").get<double>();
        oc.eps = o.at("eps").get<double>();
        oc.weight_decay = o.at("weight_decay").get<double>();
        state.optimizer = Optimizer(oc);
        state.phase = phase_from_string(t.at("phase").get<std::string>());
        state.epoch = t.at("epoch").get<int>();
        state.step = t.at("step").get<std::int64_t>();
        for (const auto& [name, steps] : t.at("slots").items()) {
            Optimizer::Slot slot;
            slot.steps = steps.get<std::int64_t>();
            const Tensor* m = ckpt.find("opt." + name + ".m");
            if (!m) throw CorruptionError("checkpoint lacks optimizer state for " + name);
            slot.m = *m;
            if (const Tensor* v = ckpt.find("opt." + name + ".v")) slot.v = *v;
            state.optimizer.slots()[name] = std::move(slot);
        }
        for (const auto& h : ckpt.meta.at("history")) {
            EpochRecord r;
            r.phase = h.at("phase").get<std::string>();
            r.epoch = h.at("epoch").get<int>();
            r.lr = h.at("lr").get<double>();
            r.loss = h.at("loss").get<double>();
            r.ce_loss = h.at("ce_loss").get<double>();
            r.distill = h.at("distill").get<std::vector<double>>();
            r.val_accuracy = h.at("val_accuracy").get<double>();
            state.history.push_back(std::move(r));
        }
    } catch (const nlohmann::json::exception& e) {
        throw CorruptionError(std::string("malformed training state: ") + e.what());
    }
    return state;
}

}  // namespace dgrl
