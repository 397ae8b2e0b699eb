#pragma once

// Dense 3-way tensor, matrix, mask, and label containers.
//
// Layout is fixed: Dense3 stores entry (i, j, k) at v[(i * d1 + j) * d2 + k],
// i.e. row-major with the last index fastest. In cohort use the modes are
// (patients, temporal features, timepoints). Dense2 stores (r, c) at
// v[r * cols + c]. Every file format below (CSV long form and the binary
// container) uses this layout, little-endian for the binary payload.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cmtf/errors.hpp"

namespace cmtf {

struct Dense3 {
    std::size_t d0 = 0, d1 = 0, d2 = 0;
    std::vector<double> v;

    Dense3() = default;
    Dense3(std::size_t a, std::size_t b, std::size_t c, double fill = 0.0)
        : d0(a), d1(b), d2(c), v(a * b * c, fill) {}

    std::size_t size() const { return v.size(); }
    std::size_t idx(std::size_t i, std::size_t j, std::size_t k) const {
        return (i * d1 + j) * d2 + k;
    }
    double& at(std::size_t i, std::size_t j, std::size_t k) { return v[idx(i, j, k)]; }
    double at(std::size_t i, std::size_t j, std::size_t k) const { return v[idx(i, j, k)]; }

    bool same_dims(const Dense3& o) const { return d0 == o.d0 && d1 == o.d1 && d2 == o.d2; }

    bool all_finite() const {
        for (double x : v)
            if (!std::isfinite(x)) return false;
        return true;
    }
};

struct Dense2 {
    std::size_t rows = 0, cols = 0;
    std::vector<double> v;

    Dense2() = default;
    Dense2(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), v(r * c, fill) {}

    std::size_t size() const { return v.size(); }
    std::size_t idx(std::size_t r, std::size_t c) const { return r * cols + c; }
    double& at(std::size_t r, std::size_t c) { return v[idx(r, c)]; }
    double at(std::size_t r, std::size_t c) const { return v[idx(r, c)]; }

    bool same_dims(const Dense2& o) const { return rows == o.rows && cols == o.cols; }

    bool all_finite() const {
        for (double x : v)
            if (!std::isfinite(x)) return false;
        return true;
    }
};

struct Mask3 {
    std::size_t d0 = 0, d1 = 0, d2 = 0;
    std::vector<std::uint8_t> v;

    Mask3() = default;
    Mask3(std::size_t a, std::size_t b, std::size_t c, std::uint8_t fill = 0)
        : d0(a), d1(b), d2(c), v(a * b * c, fill) {
        if (fill > 1) throw ParameterError("Mask3: fill must be 0 or 1");
    }

    std::size_t size() const { return v.size(); }
    std::size_t idx(std::size_t i, std::size_t j, std::size_t k) const {
        return (i * d1 + j) * d2 + k;
    }
    std::uint8_t& at(std::size_t i, std::size_t j, std::size_t k) { return v[idx(i, j, k)]; }
    std::uint8_t at(std::size_t i, std::size_t j, std::size_t k) const { return v[idx(i, j, k)]; }

    bool same_dims(const Dense3& o) const { return d0 == o.d0 && d1 == o.d1 && d2 == o.d2; }

    std::size_t count_observed() const {
        std::size_t n = 0;
        for (auto b : v) n += b;
        return n;
    }

    void validate() const {
        for (auto b : v)
            if (b > 1) throw ParameterError("Mask3: entries must be 0 or 1");
    }
};

// Binary outcome labels, one row per patient, one column per outcome.
struct LabelMatrix {
    std::size_t rows = 0, cols = 0;
    std::vector<std::uint8_t> v;

    LabelMatrix() = default;
    LabelMatrix(std::size_t r, std::size_t c, std::uint8_t fill = 0) : rows(r), cols(c), v(r * c, fill) {
        if (fill > 1) throw ParameterError("LabelMatrix: labels must be 0 or 1");
    }

    std::uint8_t& at(std::size_t r, std::size_t c) { return v[r * cols + c]; }
    std::uint8_t at(std::size_t r, std::size_t c) const { return v[r * cols + c]; }

    void validate() const {
        for (auto b : v)
            if (b > 1) throw ParameterError("LabelMatrix: labels must be 0 or 1");
    }
};

inline Dense2 take_rows(const Dense2& m, const std::vector<std::size_t>& rows) {
    Dense2 out(rows.size(), m.cols);
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t c = 0; c < m.cols; ++c) out.at(r, c) = m.at(rows[r], c);
    return out;
}

inline LabelMatrix take_rows(const LabelMatrix& m, const std::vector<std::size_t>& rows) {
    LabelMatrix out(rows.size(), m.cols);
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t c = 0; c < m.cols; ++c) out.at(r, c) = m.at(rows[r], c);
    return out;
}

// ---------------------------------------------------------------------------
// Masked and unmasked norms

inline double masked_sq_error(const Dense3& t, const Dense3& r, const Mask3& m) {
    if (!t.same_dims(r) || !m.same_dims(t))
        throw DimensionError("masked_sq_error: tensor/reconstruction/mask dims differ");
    double acc = 0.0;
    for (std::size_t n = 0; n < t.v.size(); ++n) {
        if (m.v[n]) {
            const double d = t.v[n] - r.v[n];
            acc += d * d;
        }
    }
    return acc;
}

inline double frobenius_sq(const Dense2& a, const Dense2& b) {
    if (!a.same_dims(b)) throw DimensionError("frobenius_sq: dims differ");
    double acc = 0.0;
    for (std::size_t n = 0; n < a.v.size(); ++n) {
        const double d = a.v[n] - b.v[n];
        acc += d * d;
    }
    return acc;
}

inline double frobenius_sq(const Dense3& a, const Dense3& b) {
    if (!a.same_dims(b)) throw DimensionError("frobenius_sq: dims differ");
    double acc = 0.0;
    for (std::size_t n = 0; n < a.v.size(); ++n) {
        const double d = a.v[n] - b.v[n];
        acc += d * d;
    }
    return acc;
}

// ---------------------------------------------------------------------------
// CSV long format: header line "i,j,k,value" (or "i,j,value"), one dense row
// per entry. Dims are recovered on read as max index + 1.

inline void write_csv(const Dense3& t, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw SchemaError("write_csv: cannot open " + path);
    f << "i,j,k,value\n";
    f.precision(17);
    for (std::size_t i = 0; i < t.d0; ++i)
        for (std::size_t j = 0; j < t.d1; ++j)
            for (std::size_t k = 0; k < t.d2; ++k)
                f << i << ',' << j << ',' << k << ',' << t.at(i, j, k) << '\n';
}

inline void write_csv(const Mask3& m, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw SchemaError("write_csv: cannot open " + path);
    f << "i,j,k,value\n";
    for (std::size_t i = 0; i < m.d0; ++i)
        for (std::size_t j = 0; j < m.d1; ++j)
            for (std::size_t k = 0; k < m.d2; ++k)
                f << i << ',' << j << ',' << k << ',' << int(m.at(i, j, k)) << '\n';
}

inline void write_csv(const Dense2& a, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw SchemaError("write_csv: cannot open " + path);
    f << "i,j,value\n";
    f.precision(17);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < a.cols; ++j)
            f << i << ',' << j << ',' << a.at(i, j) << '\n';
}

namespace detail {
inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    std::stringstream ss(line);
    while (std::getline(ss, cur, ',')) out.push_back(cur);
    if (!line.empty() && line.back() == ',') out.push_back("");
    return out;
}

struct LongEntry {
    std::vector<std::size_t> idx;
    double value;
};

inline std::vector<LongEntry> read_long_csv(const std::string& path, std::size_t n_indices) {
    std::ifstream f(path);
    if (!f) throw SchemaError("read_csv: cannot open " + path);
    std::string line;
    if (!std::getline(f, line)) throw SchemaError("read_csv: empty file " + path);
    std::vector<LongEntry> out;
    std::size_t lineno = 1;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto cells = split_csv_line(line);
        if (cells.size() != n_indices + 1)
            throw SchemaError("read_csv: bad field count at " + path + ":" + std::to_string(lineno));
        LongEntry e;
        try {
            for (std::size_t c = 0; c < n_indices; ++c) e.idx.push_back(std::stoull(cells[c]));
            e.value = std::stod(cells[n_indices]);
        } catch (const std::exception&) {
            throw SchemaError("read_csv: unparsable row at " + path + ":" + std::to_string(lineno));
        }
        out.push_back(std::move(e));
    }
    return out;
}
}  // namespace detail

inline Dense3 read_csv_dense3(const std::string& path) {
    auto rows = detail::read_long_csv(path, 3);
    std::size_t d0 = 0, d1 = 0, d2 = 0;
    for (const auto& e : rows) {
        d0 = std::max(d0, e.idx[0] + 1);
        d1 = std::max(d1, e.idx[1] + 1);
        d2 = std::max(d2, e.idx[2] + 1);
    }
    Dense3 t(d0, d1, d2);
    for (const auto& e : rows) t.at(e.idx[0], e.idx[1], e.idx[2]) = e.value;
    return t;
}

inline Mask3 read_csv_mask3(const std::string& path) {
    auto rows = detail::read_long_csv(path, 3);
    std::size_t d0 = 0, d1 = 0, d2 = 0;
    for (const auto& e : rows) {
        d0 = std::max(d0, e.idx[0] + 1);
        d1 = std::max(d1, e.idx[1] + 1);
        d2 = std::max(d2, e.idx[2] + 1);
    }
    Mask3 m(d0, d1, d2);
    for (const auto& e : rows) {
        if (e.value != 0.0 && e.value != 1.0)
            throw SchemaError("read_csv: mask entry not 0/1 in " + path);
        m.at(e.idx[0], e.idx[1], e.idx[2]) = static_cast<std::uint8_t>(e.value);
    }
    return m;
}

inline Dense2 read_csv_dense2(const std::string& path) {
    auto rows = detail::read_long_csv(path, 2);
    std::size_t r = 0, c = 0;
    for (const auto& e : rows) {
        r = std::max(r, e.idx[0] + 1);
        c = std::max(c, e.idx[1] + 1);
    }
    Dense2 a(r, c);
    for (const auto& e : rows) a.at(e.idx[0], e.idx[1]) = e.value;
    return a;
}

// ---------------------------------------------------------------------------
// Binary container: magic "CMTFBIN1", then u32 kind (1=Dense3, 2=Dense2,
// 3=Mask3), u32 ndims, u64 dims[ndims], payload in the documented layout.

namespace detail {
constexpr char kBinMagic[8] = {'C', 'M', 'T', 'F', 'B', 'I', 'N', '1'};

inline void write_bin_header(std::ofstream& f, std::uint32_t kind,
                             const std::vector<std::uint64_t>& dims) {
    f.write(kBinMagic, 8);
    const std::uint32_t nd = static_cast<std::uint32_t>(dims.size());
    f.write(reinterpret_cast<const char*>(&kind), 4);
    f.write(reinterpret_cast<const char*>(&nd), 4);
    for (std::uint64_t d : dims) f.write(reinterpret_cast<const char*>(&d), 8);
}

inline std::vector<std::uint64_t> read_bin_header(std::ifstream& f, std::uint32_t expect_kind,
                                                  const std::string& path) {
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, kBinMagic, 8) != 0)
        throw SchemaError("binary read: bad magic in " + path);
    std::uint32_t kind = 0, nd = 0;
    f.read(reinterpret_cast<char*>(&kind), 4);
    f.read(reinterpret_cast<char*>(&nd), 4);
    if (!f || kind != expect_kind) throw SchemaError("binary read: wrong container kind in " + path);
    std::vector<std::uint64_t> dims(nd);
    for (auto& d : dims) f.read(reinterpret_cast<char*>(&d), 8);
    if (!f) throw SchemaError("binary read: truncated header in " + path);
    return dims;
}
}  // namespace detail

inline void write_binary(const Dense3& t, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw SchemaError("write_binary: cannot open " + path);
    detail::write_bin_header(f, 1, {t.d0, t.d1, t.d2});
    f.write(reinterpret_cast<const char*>(t.v.data()), static_cast<std::streamsize>(t.v.size() * 8));
}

inline void write_binary(const Dense2& a, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw SchemaError("write_binary: cannot open " + path);
    detail::write_bin_header(f, 2, {a.rows, a.cols});
    f.write(reinterpret_cast<const char*>(a.v.data()), static_cast<std::streamsize>(a.v.size() * 8));
}

inline void write_binary(const Mask3& m, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw SchemaError("write_binary: cannot open " + path);
    detail::write_bin_header(f, 3, {m.d0, m.d1, m.d2});
    f.write(reinterpret_cast<const char*>(m.v.data()), static_cast<std::streamsize>(m.v.size()));
}

inline Dense3 read_binary_dense3(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw SchemaError("read_binary: cannot open " + path);
    auto dims = detail::read_bin_header(f, 1, path);
    if (dims.size() != 3) throw SchemaError("read_binary: Dense3 expects 3 dims in " + path);
    Dense3 t(dims[0], dims[1], dims[2]);
    f.read(reinterpret_cast<char*>(t.v.data()), static_cast<std::streamsize>(t.v.size() * 8));
    if (!f) throw SchemaError("read_binary: truncated payload in " + path);
    return t;
}

inline Dense2 read_binary_dense2(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw SchemaError("read_binary: cannot open " + path);
    auto dims = detail::read_bin_header(f, 2, path);
    if (dims.size() != 2) throw SchemaError("read_binary: Dense2 expects 2 dims in " + path);
    Dense2 a(dims[0], dims[1]);
    f.read(reinterpret_cast<char*>(a.v.data()), static_cast<std::streamsize>(a.v.size() * 8));
    if (!f) throw SchemaError("read_binary: truncated payload in " + path);
    return a;
}

inline Mask3 read_binary_mask3(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw SchemaError("read_binary: cannot open " + path);
    auto dims = detail::read_bin_header(f, 3, path);
    if (dims.size() != 3) throw SchemaError("read_binary: Mask3 expects 3 dims in " + path);
    Mask3 m(dims[0], dims[1], dims[2]);
    f.read(reinterpret_cast<char*>(m.v.data()), static_cast<std::streamsize>(m.v.size()));
    if (!f) throw SchemaError("read_binary: truncated payload in " + path);
    m.validate();
    return m;
}

}  // namespace cmtf
