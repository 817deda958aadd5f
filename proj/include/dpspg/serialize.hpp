#pragma once

#include "dpspg/common.hpp"
#include "dpspg/param_store.hpp"

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

namespace dpspg::io {

// Binary checkpoint building blocks. Scalars and doubles are little-endian;
// matrices are written row-major regardless of in-memory layout.

void write_magic(std::ostream& os, const char magic[4]);
void expect_magic(std::istream& is, const char magic[4], const std::string& path);

void write_u32(std::ostream& os, std::uint32_t v);
void write_i32(std::ostream& os, std::int32_t v);
void write_u64(std::ostream& os, std::uint64_t v);
void write_f64(std::ostream& os, double v);
std::uint32_t read_u32(std::istream& is);
std::int32_t read_i32(std::istream& is);
std::uint64_t read_u64(std::istream& is);
double read_f64(std::istream& is);

void write_matrix(std::ostream& os, const Matrix& m);
Matrix read_matrix(std::istream& is);

void write_string(std::ostream& os, const std::string& s);
std::string read_string(std::istream& is);

// Writes every entry (name-sorted) as [name][frozen u32][matrix].
void write_param_store(std::ostream& os, const ParamStore& store);
ParamStore read_param_store(std::istream& is);

std::ofstream open_out(const std::string& path);
std::ifstream open_in(const std::string& path);

// Entire-file content hash for determinism checks.
std::uint64_t file_hash(const std::string& path);

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

}  // namespace dpspg::io
