#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace seqground {

/// Base for every error the toolkit raises. `module()` and `code()` give the
/// module-qualified category the CLI prints, e.g. "scenegraph/DanglingRelation".
class Error : public std::runtime_error {
 public:
  Error(std::string module, std::string code, const std::string& message)
      : std::runtime_error(message), module_(std::move(module)), code_(std::move(code)) {}

  const std::string& module() const noexcept { return module_; }
  const std::string& code() const noexcept { return code_; }
  std::string qualified_code() const { return module_ + "/" + code_; }

 private:
  std::string module_;
  std::string code_;
};

/// Error carrying a module-specific enum. Each module provides
/// `std::string_view to_string(Code)` and `constexpr std::string_view module_name(Code)`.
template <typename Code>
class ModuleError : public Error {
 public:
  ModuleError(Code kind, const std::string& message)
      : Error(std::string(module_name(kind)), std::string(to_string(kind)), message), kind_(kind) {}

  Code kind() const noexcept { return kind_; }

 private:
  Code kind_;
};

}  // namespace seqground
