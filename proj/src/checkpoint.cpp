#include "dla/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <type_traits>

#include <fmt/format.h>
#include <zlib.h>

#include "dla/model.hpp"

namespace dla {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'D', 'L', 'A', 'C', 'K', 'P', 'T', '\0'};

class Writer {
public:
    template <typename V>
    void put(V v) {
        static_assert(std::is_trivially_copyable_v<V>);
        const auto* p = reinterpret_cast<const unsigned char*>(&v);
        bytes.insert(bytes.end(), p, p + sizeof(V));
    }
    void put_bytes(const void* data, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        bytes.insert(bytes.end(), p, p + n);
    }
    std::vector<unsigned char> bytes;
};

class Reader {
public:
    explicit Reader(const std::vector<unsigned char>& b) : bytes_(b) {}

    template <typename V>
    V get(std::string_view what) {
        V v;
        std::memcpy(&v, need(sizeof(V), what), sizeof(V));
        return v;
    }
    const unsigned char* need(std::size_t n, std::string_view what) {
        if (n > bytes_.size() - pos_)
            throw CheckpointError(fmt::format("corrupt checkpoint: truncated while reading {} at byte offset {} "
                                              "(needs {} bytes, {} left)",
                                              what, pos_, n, bytes_.size() - pos_));
        const auto* p = bytes_.data() + pos_;
        pos_ += n;
        return p;
    }
    std::size_t pos() const { return pos_; }

private:
    const std::vector<unsigned char>& bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

template <typename T>
Checkpoint make_checkpoint(std::string config, const ParameterSet<T>& params, const Standardization& norm) {
    Checkpoint c;
    c.value_bytes = sizeof(T);
    c.config = std::move(config);
    c.normalization = norm;
    c.k_hat = params.contains(kGateParam) ? static_cast<double>(params.at(kGateParam).item()) : 0.0;
    for (const auto& [name, t] : params)
        c.blobs.push_back({name, t.shape(), std::vector<double>(t.data().begin(), t.data().end())});
    return c;
}

template <typename T>
ParameterSet<T> checkpoint_parameters(const Checkpoint& ckpt) {
    ParameterSet<T> p;
    for (const auto& b : ckpt.blobs) {
        std::vector<T> v(b.values.begin(), b.values.end());
        p.add(b.name, Tensor<T>(b.shape, std::move(v)));
    }
    return p;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
    if (c.value_bytes != 4 && c.value_bytes != 8)
        throw std::invalid_argument(fmt::format("checkpoint: unsupported value width {}", c.value_bytes));
    Writer w;
    w.put_bytes(kMagic, sizeof kMagic);
    w.put<std::uint32_t>(Checkpoint::kVersion);
    w.put<std::uint32_t>(c.value_bytes);
    w.put<std::uint64_t>(c.config.size());
    w.put_bytes(c.config.data(), c.config.size());
    w.put<double>(c.k_hat);
    w.put<double>(c.normalization.mean);
    w.put<double>(c.normalization.stddev);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(c.blobs.size()));
    for (const auto& b : c.blobs) {
        if (b.values.size() != numel(b.shape))
            throw std::invalid_argument(fmt::format("checkpoint: blob '{}' has {} values for shape {}", b.name,
                                                    b.values.size(), to_string(b.shape)));
        w.put<std::uint32_t>(static_cast<std::uint32_t>(b.name.size()));
        w.put_bytes(b.name.data(), b.name.size());
        w.put<std::uint32_t>(static_cast<std::uint32_t>(b.shape.size()));
        for (auto e : b.shape) w.put<std::uint64_t>(e);
        for (double v : b.values) {
            if (c.value_bytes == 4) w.put<float>(static_cast<float>(v));
            else w.put<double>(v);
        }
    }
    w.put<std::uint32_t>(static_cast<std::uint32_t>(crc32(0L, w.bytes.data(), static_cast<uInt>(w.bytes.size()))));

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(w.bytes.data()), static_cast<std::streamsize>(w.bytes.size()));
    if (!out) throw std::runtime_error(fmt::format("cannot write checkpoint {}", path.string()));
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError(fmt::format("cannot read checkpoint {}", path.string()));
    const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    Reader r(bytes);
    if (std::memcmp(r.need(sizeof kMagic, "magic"), kMagic, sizeof kMagic) != 0)
        throw CheckpointError("corrupt checkpoint: bad magic at byte offset 0");
    Checkpoint c;
    if (const auto version = r.get<std::uint32_t>("version"); version != Checkpoint::kVersion)
        throw CheckpointError(fmt::format("corrupt checkpoint: unsupported format version {}", version));
    c.value_bytes = r.get<std::uint32_t>("value width");
    if (c.value_bytes != 4 && c.value_bytes != 8)
        throw CheckpointError(fmt::format("corrupt checkpoint: value width {} at byte offset 12", c.value_bytes));
    const auto config_len = r.get<std::uint64_t>("config length");
    const auto* cfg = r.need(config_len, "config echo");
    c.config.assign(reinterpret_cast<const char*>(cfg), config_len);
    c.k_hat = r.get<double>("k_hat");
    c.normalization.mean = r.get<double>("standardization mean");
    c.normalization.stddev = r.get<double>("standardization stddev");
    const auto count = r.get<std::uint32_t>("blob count");
    for (std::uint32_t i = 0; i < count; ++i) {
        Checkpoint::Blob b;
        const auto name_len = r.get<std::uint32_t>("blob name length");
        const auto* name = r.need(name_len, "blob name");
        b.name.assign(reinterpret_cast<const char*>(name), name_len);
        const auto rank = r.get<std::uint32_t>("blob rank");
        if (rank > 8) throw CheckpointError(fmt::format("corrupt checkpoint: blob '{}' has rank {}", b.name, rank));
        std::size_t n = 1;
        for (std::uint32_t k = 0; k < rank; ++k) {
            b.shape.push_back(r.get<std::uint64_t>("blob extent"));
            n *= b.shape.back();
        }
        if (n > bytes.size())
            throw CheckpointError(fmt::format("corrupt checkpoint: blob '{}' claims {} values", b.name, n));
        b.values.resize(n);
        for (auto& v : b.values) v = c.value_bytes == 4 ? r.get<float>("blob values") : r.get<double>("blob values");
        c.blobs.push_back(std::move(b));
    }
    const std::size_t body = r.pos();
    const auto stored = r.get<std::uint32_t>("checksum");
    const auto actual = static_cast<std::uint32_t>(crc32(0L, bytes.data(), static_cast<uInt>(body)));
    if (stored != actual)
        throw CheckpointError(fmt::format("corrupt checkpoint: checksum mismatch (stored {:08x}, computed {:08x})",
                                          stored, actual));
    if (r.pos() != bytes.size())
        throw CheckpointError(fmt::format("corrupt checkpoint: {} trailing bytes", bytes.size() - r.pos()));
    return c;
}

template Checkpoint make_checkpoint(std::string, const ParameterSet<float>&, const Standardization&);
template Checkpoint make_checkpoint(std::string, const ParameterSet<double>&, const Standardization&);
template ParameterSet<float> checkpoint_parameters(const Checkpoint&);
template ParameterSet<double> checkpoint_parameters(const Checkpoint&);

}  // namespace dla
