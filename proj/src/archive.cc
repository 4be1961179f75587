// src/archive.cc

// Copyright 2026 The CSP-Sep Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#include "csp/archive.h"

#include <cstring>
#include <fstream>
#include <sstream>

namespace csp {

namespace {
constexpr char kMagic[] = "CSPARCHIVE";
}  // namespace

const Mat& NamedArrays::Get(const std::string& name) const {
  for (const auto& [n, m] : arrays)
    if (n == name) return m;
  throw std::out_of_range("archive has no array named " + name);
}

bool NamedArrays::Has(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.first == name) return true;
  return false;
}

void WriteArchive(const std::filesystem::path& path, const NamedArrays& archive) {
  nlohmann::json header;
  header["kind"] = archive.kind;
  header["format_version"] = archive.format_version;
  header["meta"] = archive.meta;
  header["arrays"] = nlohmann::json::array();
  for (const auto& [name, m] : archive.arrays)
    header["arrays"].push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ArchiveError(ArchiveError::Code::kIo, "cannot write " + path.string());
  out << kMagic << "\n" << header.dump() << "\n";
  for (const auto& [name, m] : archive.arrays) {
    static_assert(sizeof(double) == 8);
    out.write(reinterpret_cast<const char*>(m.data()),
              static_cast<std::streamsize>(sizeof(double) * m.size()));
  }
  if (!out) throw ArchiveError(ArchiveError::Code::kIo, "write failed for " + path.string());
}

NamedArrays ReadArchive(const std::filesystem::path& path, const std::string& expected_kind,
                        int expected_version) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArchiveError(ArchiveError::Code::kIo, "cannot open " + path.string());
  const std::string where = " (" + path.string() + ")";
  std::string magic, header_line;
  if (!std::getline(in, magic) || magic != kMagic)
    throw ArchiveError(ArchiveError::Code::kCorrupt, "corrupt archive: bad magic" + where);
  if (!std::getline(in, header_line))
    throw ArchiveError(ArchiveError::Code::kCorrupt, "corrupt archive: missing header" + where);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_line);
  } catch (const std::exception& e) {
    throw ArchiveError(ArchiveError::Code::kCorrupt,
                       std::string("corrupt archive: unreadable header: ") + e.what() + where);
  }
  NamedArrays out;
  try {
    out.kind = header.at("kind").get<std::string>();
    out.format_version = header.at("format_version").get<int>();
    out.meta = header.value("meta", nlohmann::json::object());
  } catch (const std::exception& e) {
    throw ArchiveError(ArchiveError::Code::kCorrupt,
                       std::string("corrupt archive: ") + e.what() + where);
  }
  if (out.kind != expected_kind)
    throw ArchiveError(ArchiveError::Code::kKind, "archive kind '" + out.kind + "' where '" +
                                                      expected_kind + "' was expected" + where);
  if (out.format_version != expected_version)
    throw ArchiveError(ArchiveError::Code::kVersion,
                       expected_kind + " format_version " + std::to_string(out.format_version) +
                           " is not supported (expected " + std::to_string(expected_version) +
                           ")" + where);
  for (const auto& a : header.at("arrays")) {
    const auto rows = a.at("rows").get<Eigen::Index>();
    const auto cols = a.at("cols").get<Eigen::Index>();
    if (rows < 0 || cols < 0)
      throw ArchiveError(ArchiveError::Code::kCorrupt, "corrupt archive: negative shape" + where);
    Mat m(rows, cols);
    in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(sizeof(double) * m.size()));
    if (in.gcount() != static_cast<std::streamsize>(sizeof(double) * m.size()))
      throw ArchiveError(ArchiveError::Code::kCorrupt,
                         "corrupt archive: truncated data for array " +
                             a.at("name").get<std::string>() + where);
    out.arrays.emplace_back(a.at("name").get<std::string>(), std::move(m));
  }
  if (in.peek() != std::char_traits<char>::eof())
    throw ArchiveError(ArchiveError::Code::kCorrupt, "corrupt archive: trailing bytes" + where);
  return out;
}

}  // namespace csp
