// csp/archive.h

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

#ifndef CSP_ARCHIVE_H_
#define CSP_ARCHIVE_H_

#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "csp/autograd.h"
#include "json.hpp"

namespace csp {

/// Single-file container of named real arrays:
///   line 1: "CSPARCHIVE"
///   line 2: JSON header {kind, format_version, meta, arrays:[{name,rows,cols}]}
///   then each array as little-endian float64, row-major, in header order.
struct NamedArrays {
  std::string kind;
  int format_version = 1;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, Mat>> arrays;

  const Mat& Get(const std::string& name) const;
  bool Has(const std::string& name) const;
};

class ArchiveError : public std::runtime_error {
 public:
  enum class Code { kIo, kCorrupt, kVersion, kKind };
  ArchiveError(Code code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Code code() const { return code_; }

 private:
  Code code_;
};

void WriteArchive(const std::filesystem::path& path, const NamedArrays& archive);
/// Validates kind and version; truncated or malformed files raise kCorrupt.
NamedArrays ReadArchive(const std::filesystem::path& path, const std::string& expected_kind,
                        int expected_version);

}  // namespace csp

#endif  // CSP_ARCHIVE_H_
