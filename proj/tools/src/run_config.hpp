// Copyright Contributors to the splatprior project
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <splatprior/meshing.hpp>
#include <splatprior/pipeline.hpp>

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace splatprior::cli {

struct ConfigKey {
    std::string name;
    nlohmann::json fallback;
    std::string help;
    bool published = false; // the default is the published setting of the method
};

/// Flat key-value run configuration. Every key has a default; files and
/// overrides may only name documented keys with a value of the same type.
class RunConfig {
  public:
    RunConfig();

    static const std::vector<ConfigKey> &keys();
    /// One line per key with its default, for --help.
    static std::string describe();

    /// Merges a JSON object file. Throws MissingAsset or ParseError or ValidationError.
    void merge_file(const std::filesystem::path &path);
    /// Merges `key=value`, where value is JSON or a bare string.
    void merge_assignment(const std::string &assignment);
    void set(const std::string &key, const nlohmann::json &value);

    template <typename T> T get(const std::string &key) const { return values_.at(key).get<T>(); }
    const nlohmann::json &values() const { return values_; }

    /// Throws ValidationError on out-of-range values.
    void validate() const;

    ModelConfig model() const;
    LoopConfig loop() const;
    Stage1Config stage1() const;
    Stage2Config stage2() const;
    RefineConfig refine() const;
    EvalOptions eval() const;

  private:
    nlohmann::json values_;
};

} // namespace splatprior::cli
