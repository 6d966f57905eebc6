#include "iste/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <vector>

namespace iste::nn {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

std::uint64_t fnv1a64(std::span<const unsigned char> bytes, std::uint64_t seed) {
    std::uint64_t h = seed;
    for (unsigned char b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t fnv1a64(const std::string& text) {
    return fnv1a64(std::span(reinterpret_cast<const unsigned char*>(text.data()), text.size()));
}

std::string hash_hex(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

namespace {

class Writer {
   public:
    template <typename V>
    void put(V v) {
        const auto* p = reinterpret_cast<const unsigned char*>(&v);
        buf_.insert(buf_.end(), p, p + sizeof(V));
    }
    void put_bytes(const void* data, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        buf_.insert(buf_.end(), p, p + n);
    }
    void put_string(const std::string& s) {
        put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
        put_bytes(s.data(), s.size());
    }
    std::vector<unsigned char>& bytes() { return buf_; }

   private:
    std::vector<unsigned char> buf_;
};

class Reader {
   public:
    explicit Reader(std::span<const unsigned char> bytes) : bytes_(bytes) {}
    template <typename V>
    V get() {
        V v;
        std::memcpy(&v, take(sizeof(V)), sizeof(V));
        return v;
    }
    const unsigned char* take(std::size_t n) {
        if (pos_ + n > bytes_.size()) throw CheckpointError("checkpoint truncated");
        const unsigned char* p = bytes_.data() + pos_;
        pos_ += n;
        return p;
    }
    std::string get_string() {
        const auto n = get<std::uint32_t>();
        const auto* p = take(n);
        return std::string(reinterpret_cast<const char*>(p), n);
    }
    bool done() const { return pos_ == bytes_.size(); }

   private:
    std::span<const unsigned char> bytes_;
    std::size_t pos_ = 0;
};

std::vector<unsigned char> read_all(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

template <typename T>
void save_checkpoint(const ParamStore<T>& params, const std::filesystem::path& path, const std::string& config_json,
                     std::uint64_t config_hash) {
    Writer w;
    w.put_bytes("ISTE", 4);
    w.put<std::uint32_t>(kCheckpointVersion);
    w.put<std::uint64_t>(config_hash);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(sizeof(T)));
    w.put<std::uint64_t>(params.rng_seed());
    w.put_string(config_json);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
    for (const auto& [name, var] : params.entries()) {
        w.put_string(name);
        w.put<std::uint32_t>(static_cast<std::uint32_t>(var.shape().size()));
        for (std::size_t e : var.shape()) w.put<std::uint64_t>(e);
        w.put_bytes(var.value().data(), var.numel() * sizeof(T));
    }
    const std::uint64_t checksum = fnv1a64(w.bytes());
    w.put<std::uint64_t>(checksum);

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(w.bytes().data()), static_cast<std::streamsize>(w.bytes().size()));
    if (!out) throw IoError("short write to " + path.string());
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path, std::optional<std::uint64_t> expected_hash) {
    const std::vector<unsigned char> bytes = read_all(path);
    if (bytes.size() < 4 + 4 + 8 + 8) throw CheckpointError(path.string() + ": file too short to be a checkpoint");
    if (std::memcmp(bytes.data(), "ISTE", 4) != 0) throw CheckpointError(path.string() + ": bad magic");
    const std::span<const unsigned char> body(bytes.data(), bytes.size() - 8);
    std::uint64_t stored_sum;
    std::memcpy(&stored_sum, bytes.data() + body.size(), 8);
    if (fnv1a64(body) != stored_sum) throw CheckpointError(path.string() + ": checksum mismatch (corrupted file)");

    Reader r(body);
    r.take(4);
    const auto version = r.get<std::uint32_t>();
    if (version != kCheckpointVersion) {
        throw CheckpointError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
    }
    const auto config_hash = r.get<std::uint64_t>();
    if (expected_hash && *expected_hash != config_hash) {
        throw CheckpointError(path.string() + ": incompatible model config (checkpoint " + hash_hex(config_hash) +
                              ", expected " + hash_hex(*expected_hash) + ")");
    }
    const auto scalar_bytes = r.get<std::uint8_t>();
    if (scalar_bytes != sizeof(T)) {
        throw CheckpointError(path.string() + ": stored precision is " + std::to_string(scalar_bytes * 8) +
                              "-bit, requested " + std::to_string(sizeof(T) * 8) + "-bit");
    }
    const auto seed = r.get<std::uint64_t>();
    Checkpoint<T> ck{ParamStore<T>(seed), r.get_string(), config_hash};
    const auto count = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = r.get_string();
        const auto rank = r.get<std::uint32_t>();
        Shape shape(rank);
        for (auto& e : shape) e = static_cast<std::size_t>(r.get<std::uint64_t>());
        Tensor<T> value(shape);
        std::memcpy(value.data(), r.take(value.numel() * sizeof(T)), value.numel() * sizeof(T));
        ck.params.add(name, std::move(value));
    }
    if (!r.done()) throw CheckpointError(path.string() + ": trailing bytes after last entry");
    return ck;
}

std::uint64_t file_hash(const std::filesystem::path& path) {
    const auto bytes = read_all(path);
    return fnv1a64(bytes);
}

template void save_checkpoint<float>(const ParamStore<float>&, const std::filesystem::path&, const std::string&,
                                     std::uint64_t);
template void save_checkpoint<double>(const ParamStore<double>&, const std::filesystem::path&, const std::string&,
                                      std::uint64_t);
template Checkpoint<float> load_checkpoint<float>(const std::filesystem::path&, std::optional<std::uint64_t>);
template Checkpoint<double> load_checkpoint<double>(const std::filesystem::path&, std::optional<std::uint64_t>);

}  // namespace iste::nn
