#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "vlink/errors.hpp"
#include "vlink/extractor.hpp"
#include "vlink/tensor.hpp"

namespace vlink {

// Binary archive with a version tag and a trailing FNV-1a checksum. Numeric
// fields are written in native layout; the resumability contract is
// same-platform bit-identity, not cross-architecture portability.

inline constexpr char kCheckpointMagic[8] = {'V', 'L', 'N', 'K', 'C', 'K', 'P', 'T'};
inline constexpr uint32_t kCheckpointVersion = 1;

class ByteWriter {
public:
    void u32(uint32_t v) { raw(&v, sizeof(v)); }
    void u64(uint64_t v) { raw(&v, sizeof(v)); }
    void i64(int64_t v) { raw(&v, sizeof(v)); }
    void f64(double v) { raw(&v, sizeof(v)); }

    void str(const std::string& s) {
        u64(s.size());
        raw(s.data(), s.size());
    }

    void tensor(const Tensor& t) {
        u32(static_cast<uint32_t>(t.ndim()));
        for (int i = 0; i < t.ndim(); ++i) u32(static_cast<uint32_t>(t.dim(i)));
        raw(t.data(), static_cast<size_t>(t.numel()) * sizeof(double));
    }

    // Writes magic + version + payload + checksum(payload).
    void write_file(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw IoError("cannot write checkpoint " + path);
        out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
        uint32_t ver = kCheckpointVersion;
        out.write(reinterpret_cast<const char*>(&ver), sizeof(ver));
        out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
        uint64_t sum = fnv1a64(buf_.data(), buf_.size());
        out.write(reinterpret_cast<const char*>(&sum), sizeof(sum));
        if (!out) throw IoError("short write on checkpoint " + path);
    }

private:
    void raw(const void* p, size_t n) {
        const char* c = static_cast<const char*>(p);
        buf_.insert(buf_.end(), c, c + n);
    }
    std::vector<char> buf_;
};

class ByteReader {
public:
    // Loads and verifies magic, version and checksum before any field reads.
    explicit ByteReader(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("cannot open checkpoint " + path);
        std::vector<char> all((std::istreambuf_iterator<char>(in)),
                              std::istreambuf_iterator<char>());
        if (all.size() < sizeof(kCheckpointMagic) + sizeof(uint32_t) + sizeof(uint64_t))
            throw IntegrityError("checkpoint too short: " + path);
        if (std::memcmp(all.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0)
            throw IntegrityError("bad checkpoint magic: " + path);
        uint32_t ver;
        std::memcpy(&ver, all.data() + sizeof(kCheckpointMagic), sizeof(ver));
        if (ver != kCheckpointVersion)
            throw VersionError("checkpoint " + path + " has format version " +
                               std::to_string(ver) + ", expected " +
                               std::to_string(kCheckpointVersion));
        size_t payload_begin = sizeof(kCheckpointMagic) + sizeof(uint32_t);
        size_t payload_len = all.size() - payload_begin - sizeof(uint64_t);
        uint64_t stored;
        std::memcpy(&stored, all.data() + payload_begin + payload_len, sizeof(stored));
        uint64_t actual = fnv1a64(all.data() + payload_begin, payload_len);
        if (stored != actual) throw IntegrityError("checkpoint checksum mismatch: " + path);
        buf_.assign(all.begin() + static_cast<std::ptrdiff_t>(payload_begin),
                    all.begin() + static_cast<std::ptrdiff_t>(payload_begin + payload_len));
    }

    uint32_t u32() {
        uint32_t v;
        raw(&v, sizeof(v));
        return v;
    }
    uint64_t u64() {
        uint64_t v;
        raw(&v, sizeof(v));
        return v;
    }
    int64_t i64() {
        int64_t v;
        raw(&v, sizeof(v));
        return v;
    }
    double f64() {
        double v;
        raw(&v, sizeof(v));
        return v;
    }

    std::string str() {
        uint64_t n = u64();
        if (pos_ + n > buf_.size()) throw IntegrityError("truncated checkpoint field");
        std::string s(buf_.data() + pos_, n);
        pos_ += n;
        return s;
    }

    Tensor tensor() {
        uint32_t nd = u32();
        std::vector<int> shape(nd);
        for (auto& d : shape) d = static_cast<int>(u32());
        Tensor t(shape);
        raw(t.data(), static_cast<size_t>(t.numel()) * sizeof(double));
        return t;
    }

private:
    void raw(void* p, size_t n) {
        if (pos_ + n > buf_.size()) throw IntegrityError("truncated checkpoint field");
        std::memcpy(p, buf_.data() + pos_, n);
        pos_ += n;
    }
    std::vector<char> buf_;
    size_t pos_ = 0;
};

}  // namespace vlink
