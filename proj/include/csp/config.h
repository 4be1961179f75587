// csp/config.h

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

#ifndef CSP_CONFIG_H_
#define CSP_CONFIG_H_

#include <filesystem>
#include <memory>
#include <string>

#include "csp/model.h"
#include "csp/separation.h"
#include "csp/teacher.h"
#include "csp/trainer.h"
#include "json.hpp"

namespace csp {

/// Full default configuration tree. Every accepted key appears here.
nlohmann::json DefaultConfig();

/// Parses the TOML subset used for config files: [table] headers, dotted
/// bare keys, strings, booleans, numbers and single-line arrays.
nlohmann::json ParseConfigText(const std::string& text);
nlohmann::json LoadConfigFile(const std::filesystem::path& path);

/// Overlays `patch` onto `base`. Keys absent from `base` and type changes are
/// rejected with the dotted path of the offending key.
void MergeConfig(nlohmann::json* base, const nlohmann::json& patch,
                 const std::string& where = "");
/// Applies one "dotted.key=value" override.
void ApplyOverride(nlohmann::json* config, const std::string& assignment);

/// Sorted-key, 2-space-indented JSON text.
std::string CanonicalText(const nlohmann::json& config);

CspModelConfig ModelConfigFromJson(const nlohmann::json& root);
nlohmann::json ModelConfigToJson(const CspModelConfig& cfg);
PretrainConfig PretrainConfigFromJson(const nlohmann::json& root);
SeparatorConfig SeparatorConfigFromJson(const nlohmann::json& root);
nlohmann::json SeparatorConfigToJson(const SeparatorConfig& cfg);
SepTrainConfig SepTrainConfigFromJson(const nlohmann::json& root);

/// Teacher named by the "teacher" section ("logmel" or "file").
std::unique_ptr<Teacher> MakeTeacher(const nlohmann::json& root);

}  // namespace csp

#endif  // CSP_CONFIG_H_
