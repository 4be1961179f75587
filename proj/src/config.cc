// src/config.cc

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

#include "csp/config.h"

#include <cctype>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace csp {

using nlohmann::json;

json DefaultConfig() {
  const FrontendConfig f;
  const CspModelConfig m;
  const PretrainConfig p;
  const SeparatorConfig s;
  const SepTrainConfig st;
  json j;
  j["seed"] = 0;
  j["model"] = ModelConfigToJson(m);
  j["teacher"] = {{"kind", "logmel"}, {"path", ""}, {"clusters", p.teacher_clusters},
                  {"context", 2}, {"normalize", true}};
  j["loss"] = {{"alpha", p.loss.weights.alpha},
               {"beta", p.loss.weights.beta},
               {"gamma", p.loss.weights.gamma},
               {"temperature", p.loss.contrastive.temperature},
               {"num_negatives", p.loss.contrastive.num_negatives},
               {"exclude_identical", p.loss.contrastive.exclude_identical},
               {"masked_only", p.loss.contrastive.masked_only},
               {"ckd_negatives", "other_frames"}};
  j["pretrain"] = {{"lr", p.lr},
                   {"weight_decay", p.weight_decay},
                   {"warmup_steps", p.warmup_steps},
                   {"dropout", f.dropout},
                   {"layerdrop", f.layerdrop},
                   {"crop_s", p.crop_s},
                   {"patience", p.patience},
                   {"batch_size", p.batch_size},
                   {"max_steps", p.max_steps},
                   {"valid_every", p.valid_every},
                   {"grad_clip", p.grad_clip},
                   {"tau_start", p.tau_start},
                   {"tau_floor", p.tau_floor},
                   {"tau_decay", p.tau_decay}};
  j["separator"] = SeparatorConfigToJson(s);
  j["sep_train"] = {{"lr", st.lr},
                    {"weight_decay", st.weight_decay},
                    {"warmup_steps", st.warmup_steps},
                    {"crop_s", st.crop_s},
                    {"batch_size", st.batch_size},
                    {"max_steps", st.max_steps},
                    {"valid_every", st.valid_every},
                    {"patience", st.patience},
                    {"grad_clip", st.grad_clip}};
  j["simulate"] = {{"count", 8},        {"duration_s", 4.0},  {"sample_rate", 16000},
                   {"gain_lo_db", -2.5}, {"gain_hi_db", 2.5}};
  j["eval"] = {{"bin_width_db", 1.0}};
  j["profile"] = {{"chunk_ms", 20.0}, {"seconds", 2.0}};
  return j;
}

namespace {

class ValueParser {
 public:
  ValueParser(const std::string& s, int line) : s_(s), line_(line) {}

  json ParseAll() {
    json v = Value();
    Skip();
    if (i_ != s_.size()) Fail("trailing characters");
    return v;
  }

 private:
  [[noreturn]] void Fail(const std::string& why) const {
    throw std::invalid_argument("config line " + std::to_string(line_) + ": " + why);
  }
  void Skip() {
    while (i_ < s_.size() && (s_[i_] == ' ' || s_[i_] == '\t')) ++i_;
  }
  json Value() {
    Skip();
    if (i_ >= s_.size()) Fail("missing value");
    const char c = s_[i_];
    if (c == '"') return BasicString();
    if (c == '\'') {
      const size_t end = s_.find('\'', i_ + 1);
      if (end == std::string::npos) Fail("unterminated string");
      std::string out = s_.substr(i_ + 1, end - i_ - 1);
      i_ = end + 1;
      return out;
    }
    if (c == '[') return Array();
    if (s_.compare(i_, 4, "true") == 0) {
      i_ += 4;
      return true;
    }
    if (s_.compare(i_, 5, "false") == 0) {
      i_ += 5;
      return false;
    }
    return Number();
  }
  json BasicString() {
    std::string out;
    for (++i_; i_ < s_.size(); ++i_) {
      char c = s_[i_];
      if (c == '"') {
        ++i_;
        return out;
      }
      if (c == '\\' && i_ + 1 < s_.size()) {
        c = s_[++i_];
        switch (c) {
          case 'n': out += '\n'; break;
          case 't': out += '\t'; break;
          case '"': out += '"'; break;
          case '\\': out += '\\'; break;
          default: Fail(std::string("unsupported escape \\") + c);
        }
      } else {
        out += c;
      }
    }
    Fail("unterminated string");
  }
  json Array() {
    json arr = json::array();
    ++i_;
    Skip();
    if (i_ < s_.size() && s_[i_] == ']') {
      ++i_;
      return arr;
    }
    for (;;) {
      arr.push_back(Value());
      Skip();
      if (i_ >= s_.size()) Fail("unterminated array");
      if (s_[i_] == ',') {
        ++i_;
        Skip();
        if (i_ < s_.size() && s_[i_] == ']') {
          ++i_;
          return arr;
        }
        continue;
      }
      if (s_[i_] == ']') {
        ++i_;
        return arr;
      }
      Fail("expected ',' or ']' in array");
    }
  }
  json Number() {
    size_t j = i_;
    std::string digits;
    bool is_float = false;
    while (j < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[j])) || s_[j] == '+' ||
                             s_[j] == '-' || s_[j] == '.' || s_[j] == '_')) {
      if (s_[j] != '_') digits += s_[j];
      if (s_[j] == '.' || s_[j] == 'e' || s_[j] == 'E') is_float = true;
      ++j;
    }
    if (digits.empty()) Fail("cannot parse value");
    size_t used = 0;
    json v;
    try {
      if (is_float) v = std::stod(digits, &used);
      else v = static_cast<int64_t>(std::stoll(digits, &used));
    } catch (const std::exception&) {
      Fail("cannot parse value '" + digits + "'");
    }
    if (used != digits.size()) Fail("cannot parse value '" + digits + "'");
    i_ = j;
    return v;
  }

  const std::string& s_;
  int line_;
  size_t i_ = 0;
};

std::string StripComment(const std::string& line) {
  bool in_basic = false, in_literal = false;
  for (size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (c == '\\' && in_basic) {
      ++i;
    } else if (c == '"' && !in_literal) {
      in_basic = !in_basic;
    } else if (c == '\'' && !in_basic) {
      in_literal = !in_literal;
    } else if (c == '#' && !in_basic && !in_literal) {
      return line.substr(0, i);
    }
  }
  return line;
}

std::string Trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> SplitKey(const std::string& key, int line) {
  std::vector<std::string> parts;
  std::stringstream ss(key);
  std::string p;
  while (std::getline(ss, p, '.')) {
    p = Trim(p);
    if (p.empty()) throw std::invalid_argument("config line " + std::to_string(line) + ": empty key");
    for (char c : p)
      if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-'))
        throw std::invalid_argument("config line " + std::to_string(line) + ": bad key '" +
                                    key + "'");
    parts.push_back(p);
  }
  if (parts.empty()) throw std::invalid_argument("config line " + std::to_string(line) + ": empty key");
  return parts;
}

json* Descend(json* root, const std::vector<std::string>& path, size_t count, int line) {
  json* node = root;
  for (size_t i = 0; i < count; ++i) {
    json& next = (*node)[path[i]];
    if (next.is_null()) next = json::object();
    if (!next.is_object())
      throw std::invalid_argument("config line " + std::to_string(line) + ": '" + path[i] +
                                  "' is not a table");
    node = &next;
  }
  return node;
}

}  // namespace

json ParseConfigText(const std::string& text) {
  json root = json::object();
  std::vector<std::string> table;
  std::stringstream in(text);
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const std::string s = Trim(StripComment(raw));
    if (s.empty()) continue;
    if (s.front() == '[') {
      if (s.back() != ']' || s.size() < 3)
        throw std::invalid_argument("config line " + std::to_string(line) + ": bad table header");
      table = SplitKey(s.substr(1, s.size() - 2), line);
      Descend(&root, table, table.size(), line);
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(line) + ": expected key = value");
    auto key = table;
    for (auto& k : SplitKey(s.substr(0, eq), line)) key.push_back(k);
    json* parent = Descend(&root, key, key.size() - 1, line);
    if (parent->contains(key.back()))
      throw std::invalid_argument("config line " + std::to_string(line) + ": duplicate key '" +
                                  key.back() + "'");
    (*parent)[key.back()] = ValueParser(s.substr(eq + 1), line).ParseAll();
  }
  return root;
}

json LoadConfigFile(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ParseConfigText(ss.str());
}

void MergeConfig(json* base, const json& patch, const std::string& where) {
  if (!patch.is_object()) throw std::invalid_argument("config: expected a table at '" + where + "'");
  for (const auto& [key, value] : patch.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    if (!base->contains(key)) throw std::invalid_argument("unknown config key '" + path + "'");
    json& slot = (*base)[key];
    if (slot.is_object()) {
      MergeConfig(&slot, value, path);
    } else if (slot.is_boolean() != value.is_boolean() || slot.is_string() != value.is_string() ||
               slot.is_array() != value.is_array() || value.is_object()) {
      throw std::invalid_argument("config key '" + path + "' expects a value of type " +
                                  slot.type_name());
    } else if (slot.is_number_integer() && value.is_number_float()) {
      const double d = value.get<double>();
      if (d != static_cast<double>(static_cast<int64_t>(d)))
        throw std::invalid_argument("config key '" + path + "' expects an integer");
      slot = static_cast<int64_t>(d);
    } else if (slot.is_number_float() && value.is_number_integer()) {
      slot = value.get<double>();
    } else {
      slot = value;
    }
  }
}

void ApplyOverride(json* config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw std::invalid_argument("override '" + assignment + "' is not of the form key=value");
  const auto path = SplitKey(assignment.substr(0, eq), 0);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = ValueParser(text, 0).ParseAll();
  } catch (const std::invalid_argument&) {
    value = text;  // bare word
  }
  json patch = value;
  for (auto it = path.rbegin(); it != path.rend(); ++it) patch = json{{*it, patch}};
  MergeConfig(config, patch);
}

std::string CanonicalText(const json& config) { return config.dump(2) + "\n"; }

CspModelConfig ModelConfigFromJson(const json& root) {
  const json& m = root.at("model");
  CspModelConfig c;
  auto& f = c.frontend;
  f.conv_channels = m.at("conv_channels").get<int>();
  f.conv_strides = m.at("conv_strides").get<std::vector<int>>();
  f.conv_kernels = m.at("conv_kernels").get<std::vector<int>>();
  f.norm_groups = m.at("norm_groups").get<int>();
  f.model_dim = m.at("model_dim").get<int>();
  f.inner_dim = m.at("inner_dim").get<int>();
  f.heads = m.at("heads").get<int>();
  f.layers = m.at("layers").get<int>();
  f.pos_kernel = m.at("pos_kernel").get<int>();
  f.pos_groups = m.at("pos_groups").get<int>();
  f.mask_ratio = m.at("mask_ratio").get<double>();
  f.mask_span = m.at("mask_span").get<int>();
  c.quant_groups = m.at("quant_groups").get<int>();
  c.quant_entries = m.at("quant_entries").get<int>();
  c.codeword_dim = m.at("codeword_dim").get<int>();
  c.teacher_dim = m.at("teacher_dim").get<int>();
  if (root.contains("pretrain")) {
    f.dropout = root["pretrain"].value("dropout", f.dropout);
    f.layerdrop = root["pretrain"].value("layerdrop", f.layerdrop);
  }
  c.Validate();
  return c;
}

json ModelConfigToJson(const CspModelConfig& c) {
  const auto& f = c.frontend;
  return {{"conv_channels", f.conv_channels}, {"conv_strides", f.conv_strides},
          {"conv_kernels", f.conv_kernels},   {"norm_groups", f.norm_groups},
          {"model_dim", f.model_dim},         {"inner_dim", f.inner_dim},
          {"heads", f.heads},                 {"layers", f.layers},
          {"pos_kernel", f.pos_kernel},       {"pos_groups", f.pos_groups},
          {"mask_ratio", f.mask_ratio},       {"mask_span", f.mask_span},
          {"quant_groups", c.quant_groups},   {"quant_entries", c.quant_entries},
          {"codeword_dim", c.codeword_dim},   {"teacher_dim", c.teacher_dim}};
}

PretrainConfig PretrainConfigFromJson(const json& root) {
  PretrainConfig c;
  const json& p = root.at("pretrain");
  const json& l = root.at("loss");
  c.lr = p.at("lr").get<double>();
  c.weight_decay = p.at("weight_decay").get<double>();
  c.warmup_steps = p.at("warmup_steps").get<int64_t>();
  c.dropout = p.at("dropout").get<double>();
  c.layerdrop = p.at("layerdrop").get<double>();
  c.crop_s = p.at("crop_s").get<double>();
  c.patience = p.at("patience").get<int>();
  c.batch_size = p.at("batch_size").get<int>();
  c.max_steps = p.at("max_steps").get<int64_t>();
  c.valid_every = p.at("valid_every").get<int64_t>();
  c.grad_clip = p.at("grad_clip").get<double>();
  c.tau_start = p.at("tau_start").get<double>();
  c.tau_floor = p.at("tau_floor").get<double>();
  c.tau_decay = p.at("tau_decay").get<double>();
  c.seed = root.at("seed").get<uint64_t>();
  c.teacher_clusters = root.at("teacher").at("clusters").get<int>();
  c.loss.weights = {l.at("alpha").get<double>(), l.at("beta").get<double>(),
                    l.at("gamma").get<double>()};
  c.loss.contrastive.temperature = l.at("temperature").get<double>();
  c.loss.contrastive.num_negatives = l.at("num_negatives").get<int>();
  c.loss.contrastive.exclude_identical = l.at("exclude_identical").get<bool>();
  c.loss.contrastive.masked_only = l.at("masked_only").get<bool>();
  const auto mode = l.at("ckd_negatives").get<std::string>();
  if (mode == "other_frames") c.loss.ckd_negatives = CkdNegatives::kOtherFrames;
  else if (mode == "other_centroids") c.loss.ckd_negatives = CkdNegatives::kOtherCentroids;
  else
    throw std::invalid_argument("loss.ckd_negatives must be other_frames or other_centroids, got '" +
                                mode + "'");
  c.Validate();
  return c;
}

SeparatorConfig SeparatorConfigFromJson(const json& root) {
  const json& s = root.at("separator");
  SeparatorConfig c;
  c.enc_kernel = s.at("enc_kernel").get<int>();
  c.enc_stride = s.at("enc_stride").get<int>();
  c.enc_dim = s.at("enc_dim").get<int>();
  c.bottleneck = s.at("bottleneck").get<int>();
  c.hidden = s.at("hidden").get<int>();
  c.kernel = s.at("kernel").get<int>();
  c.blocks = s.at("blocks").get<int>();
  c.repeats = s.at("repeats").get<int>();
  c.speakers = s.at("speakers").get<int>();
  c.causal = s.at("causal").get<bool>();
  c.use_frontend = s.at("use_frontend").get<bool>();
  c.Validate();
  return c;
}

json SeparatorConfigToJson(const SeparatorConfig& c) {
  return {{"enc_kernel", c.enc_kernel}, {"enc_stride", c.enc_stride}, {"enc_dim", c.enc_dim},
          {"bottleneck", c.bottleneck}, {"hidden", c.hidden},         {"kernel", c.kernel},
          {"blocks", c.blocks},         {"repeats", c.repeats},       {"speakers", c.speakers},
          {"causal", c.causal},         {"use_frontend", c.use_frontend}};
}

SepTrainConfig SepTrainConfigFromJson(const json& root) {
  const json& s = root.at("sep_train");
  SepTrainConfig c;
  c.lr = s.at("lr").get<double>();
  c.weight_decay = s.at("weight_decay").get<double>();
  c.warmup_steps = s.at("warmup_steps").get<int64_t>();
  c.crop_s = s.at("crop_s").get<double>();
  c.batch_size = s.at("batch_size").get<int>();
  c.max_steps = s.at("max_steps").get<int64_t>();
  c.valid_every = s.at("valid_every").get<int64_t>();
  c.patience = s.at("patience").get<int>();
  c.grad_clip = s.at("grad_clip").get<double>();
  c.seed = root.at("seed").get<uint64_t>();
  c.Validate();
  return c;
}

std::unique_ptr<Teacher> MakeTeacher(const json& root) {
  const json& t = root.at("teacher");
  const auto kind = t.at("kind").get<std::string>();
  const CspModelConfig m = ModelConfigFromJson(root);
  const int hop = m.frontend.Hop();
  if (kind == "logmel") {
    LogMelOptions o;
    o.num_mels = m.teacher_dim;
    o.hop = hop;
    o.context = t.at("context").get<int>();
    o.normalize = t.at("normalize").get<bool>();
    return std::make_unique<LogMelTeacher>(o);
  }
  if (kind == "file") {
    const auto path = t.at("path").get<std::string>();
    if (path.empty()) throw std::invalid_argument("teacher.kind=file needs teacher.path");
    return std::make_unique<FileTeacher>(path, 16000.0 / hop);
  }
  throw std::invalid_argument("teacher.kind must be logmel or file, got '" + kind + "'");
}

}  // namespace csp
