#include "dpspg/serialize.hpp"

#include <cstring>
#include <sstream>

namespace dpspg::io {

namespace {
template <typename T>
void write_raw(std::ostream& os, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    // this build targets little-endian hosts; assert once at compile time
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    os.write(buf, sizeof(T));
}

template <typename T>
T read_raw(std::istream& is) {
    char buf[sizeof(T)];
    is.read(buf, sizeof(T));
    if (!is) throw InvalidInputError("checkpoint: truncated read");
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
}
}  // namespace

void write_magic(std::ostream& os, const char magic[4]) { os.write(magic, 4); }

void expect_magic(std::istream& is, const char magic[4], const std::string& path) {
    char buf[4];
    is.read(buf, 4);
    if (!is || std::memcmp(buf, magic, 4) != 0) {
        throw InvalidInputError("checkpoint: bad magic in " + path);
    }
}

void write_u32(std::ostream& os, std::uint32_t v) { write_raw(os, v); }
void write_i32(std::ostream& os, std::int32_t v) { write_raw(os, v); }
void write_u64(std::ostream& os, std::uint64_t v) { write_raw(os, v); }
void write_f64(std::ostream& os, double v) { write_raw(os, v); }
std::uint32_t read_u32(std::istream& is) { return read_raw<std::uint32_t>(is); }
std::int32_t read_i32(std::istream& is) { return read_raw<std::int32_t>(is); }
std::uint64_t read_u64(std::istream& is) { return read_raw<std::uint64_t>(is); }
double read_f64(std::istream& is) { return read_raw<double>(is); }

void write_matrix(std::ostream& os, const Matrix& m) {
    write_u32(os, static_cast<std::uint32_t>(m.rows()));
    write_u32(os, static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            write_f64(os, m(r, c));
        }
    }
}

Matrix read_matrix(std::istream& is) {
    const auto rows = static_cast<Eigen::Index>(read_u32(is));
    const auto cols = static_cast<Eigen::Index>(read_u32(is));
    Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) {
            m(r, c) = read_f64(is);
        }
    }
    return m;
}

void write_string(std::ostream& os, const std::string& s) {
    write_u32(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& is) {
    const std::uint32_t n = read_u32(is);
    std::string s(n, '\0');
    is.read(s.data(), n);
    if (!is) throw InvalidInputError("checkpoint: truncated string");
    return s;
}

void write_param_store(std::ostream& os, const ParamStore& store) {
    write_u32(os, static_cast<std::uint32_t>(store.size()));
    store.for_each([&](const std::string& name, const ParamStore::Entry& e) {
        write_string(os, name);
        write_u32(os, e.frozen ? 1u : 0u);
        write_matrix(os, e.value);
    });
}

ParamStore read_param_store(std::istream& is) {
    ParamStore store;
    const std::uint32_t n = read_u32(is);
    for (std::uint32_t i = 0; i < n; ++i) {
        std::string name = read_string(is);
        const bool frozen = read_u32(is) != 0;
        store.add(name, read_matrix(is), frozen);
    }
    return store;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw ValidationError("cannot open for writing: " + path);
    return os;
}

std::ifstream open_in(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw StageOrderError("missing artifact: " + path);
    return is;
}

std::uint64_t file_hash(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw InvalidInputError("file_hash: cannot open " + path);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[4096];
    while (is) {
        is.read(buf, sizeof(buf));
        h = fnv1a(buf, static_cast<std::size_t>(is.gcount()), h);
    }
    return h;
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw ValidationError("cannot open for writing: " + path);
    os << content;
}

std::string read_text_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw StageOrderError("missing artifact: " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

}  // namespace dpspg::io
