#include "dmsva/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <zlib.h>

#include "dmsva/errors.hpp"

namespace dmsva::train {

namespace {

constexpr char kMagic[4] = {'D', 'M', 'S', 'V'};

class Writer {
public:
    void bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        out_.insert(out_.end(), b, b + n);
    }
    void u32(std::uint32_t x) {
        for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(x >> (8 * i)));
    }
    void u64(std::uint64_t x) {
        for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(x >> (8 * i)));
    }
    void f64(double x) { u64(std::bit_cast<std::uint64_t>(x)); }
    void f64s(std::span<const double> xs) {
        for (double x : xs) f64(x);
    }
    std::vector<std::uint8_t>& data() { return out_; }

private:
    std::vector<std::uint8_t> out_;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

    void need(std::size_t n) const {
        if (in_.size() - pos_ < n) {
            throw CorruptFile("checkpoint truncated at byte " + std::to_string(pos_));
        }
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t x = 0;
        for (int i = 0; i < 4; ++i) x |= static_cast<std::uint32_t>(in_[pos_++]) << (8 * i);
        return x;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t x = 0;
        for (int i = 0; i < 8; ++i) x |= static_cast<std::uint64_t>(in_[pos_++]) << (8 * i);
        return x;
    }
    double f64() { return std::bit_cast<double>(u64()); }
    void f64s(std::span<double> xs) {
        need(8 * xs.size());
        for (double& x : xs) x = f64();
    }
    std::string text(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    std::size_t pos() const { return pos_; }

private:
    std::span<const std::uint8_t> in_;
    std::size_t pos_ = 0;
};

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
    uLong crc = crc32(0L, Z_NULL, 0);
    return static_cast<std::uint32_t>(
        crc32(crc, bytes.data(), static_cast<uInt>(bytes.size())));
}

void write_banks(Writer& w, const DmsvaModel& m) {
    for (const MemoryBank* b : {&m.pk, &m.ek, &m.tv, &m.sv}) w.f64s(b->slots.values());
}

void read_banks(Reader& r, DmsvaModel& m) {
    for (MemoryBank* b : {&m.pk, &m.ek, &m.tv, &m.sv}) r.f64s(b->slots.values());
}

} // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
    const DmsvaModel& m = ckpt.model;
    m.validate();
    const std::size_t n_params = 4 * m.slot_count() * m.dim();
    const OptimizerState& opt = ckpt.state.optimizer;
    Writer w;
    w.bytes(kMagic, 4);
    w.u32(ckpt.version);
    w.u32(static_cast<std::uint32_t>(m.slot_count()));
    w.u32(static_cast<std::uint32_t>(m.dim()));
    write_banks(w, m);
    // A fresh optimizer has no moments yet; store them as zeros.
    const std::vector<double> zeros(n_params, 0.0);
    w.f64s(opt.m.empty() ? zeros : opt.m);
    w.f64s(opt.v.empty() ? zeros : opt.v);
    w.u64(opt.step);
    write_banks(w, ckpt.state.ema);
    w.u64(ckpt.state.step);
    const std::string cfg = ckpt.config.dump();
    w.u32(static_cast<std::uint32_t>(cfg.size()));
    w.bytes(cfg.data(), cfg.size());
    w.u32(crc32_of(w.data()));
    return std::move(w.data());
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw CorruptFile("missing DMSV magic");
    }
    if (bytes.size() < 20) {
        throw CorruptFile("checkpoint truncated");
    }
    const auto body = bytes.first(bytes.size() - 4);
    Reader tail(bytes.last(4));
    if (tail.u32() != crc32_of(body)) {
        throw CorruptFile("CRC32 mismatch");
    }

    Reader r(body);
    r.u32();  // magic
    Checkpoint ckpt;
    ckpt.version = r.u32();
    if (ckpt.version != kCheckpointVersion) {
        throw VersionMismatch("checkpoint version " + std::to_string(ckpt.version) +
                              ", expected " + std::to_string(kCheckpointVersion));
    }
    const std::size_t n = r.u32();
    const std::size_t d = r.u32();
    if (n == 0 || d == 0) throw CorruptFile("zero bank dimensions");
    const std::size_t n_params = 4 * n * d;
    r.need(8 * n_params);

    ckpt.model = DmsvaModel(n, d);
    read_banks(r, ckpt.model);
    OptimizerState& opt = ckpt.state.optimizer;
    opt.m.resize(n_params);
    opt.v.resize(n_params);
    r.f64s(opt.m);
    r.f64s(opt.v);
    opt.step = r.u64();
    if (opt.step == 0) {
        opt.m.clear();
        opt.v.clear();
    }
    ckpt.state.ema = DmsvaModel(n, d);
    read_banks(r, ckpt.state.ema);
    ckpt.state.step = r.u64();
    const std::size_t len = r.u32();
    try {
        ckpt.config = nlohmann::json::parse(r.text(len));
    } catch (const nlohmann::json::parse_error& e) {
        throw CorruptFile(std::string("config snapshot: ") + e.what());
    }
    if (r.pos() != body.size()) {
        throw CorruptFile("trailing bytes after config snapshot");
    }
    return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    const auto bytes = encode_checkpoint(ckpt);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CorruptFile("cannot read " + path.string());
    const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                          std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

} // namespace dmsva::train
