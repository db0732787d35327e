#include "ilora/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace ilora {

namespace {

constexpr char kMagic[] = "ILORA-CKPT";
constexpr std::size_t kMagicLen = sizeof(kMagic) - 1;

void write_u64(std::ostream& os, std::uint64_t v) {
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(buf), 8);
}

std::uint64_t read_u64(std::istream& is) {
    unsigned char buf[8];
    is.read(reinterpret_cast<char*>(buf), 8);
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return v;
}

void write_f64(std::ostream& os, double d) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, 8);
    write_u64(os, bits);
}

double read_f64(std::istream& is) {
    const std::uint64_t bits = read_u64(is);
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
}

}  // namespace

void save_checkpoint(const std::string& path, const NamedTensors& tensors) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
    os.write(kMagic, static_cast<std::streamsize>(kMagicLen));
    write_u64(os, kCheckpointVersion);
    write_u64(os, tensors.size());
    for (const auto& [name, m] : tensors) {
        write_u64(os, name.size());
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u64(os, m.rows);
        write_u64(os, m.cols);
        for (double d : m.data) write_f64(os, d);
    }
    if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

NamedTensors load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[kMagicLen];
    is.read(magic, static_cast<std::streamsize>(kMagicLen));
    if (!is || std::memcmp(magic, kMagic, kMagicLen) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path);
    const std::uint64_t version = read_u64(is);
    if (version != kCheckpointVersion)
        throw std::runtime_error("checkpoint: unsupported version " +
                                 std::to_string(version));
    const std::uint64_t count = read_u64(is);
    NamedTensors out;
    out.reserve(count);
    for (std::uint64_t t = 0; t < count; ++t) {
        const std::uint64_t name_len = read_u64(is);
        std::string name(name_len, '\0');
        is.read(name.data(), static_cast<std::streamsize>(name_len));
        if (!is) throw std::runtime_error("checkpoint: truncated name");
        const std::uint64_t rows = read_u64(is);
        const std::uint64_t cols = read_u64(is);
        Matrix m(rows, cols);
        for (auto& d : m.data) d = read_f64(is);
        out.emplace_back(std::move(name), std::move(m));
    }
    return out;
}

const Matrix& checkpoint_get(const NamedTensors& t, const std::string& name) {
    for (const auto& [n, m] : t) {
        if (n == name) return m;
    }
    throw std::runtime_error("checkpoint: missing tensor '" + name + "'");
}

}  // namespace ilora
