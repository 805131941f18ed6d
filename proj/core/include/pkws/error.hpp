#pragma once

#include <stdexcept>
#include <string>

namespace pkws {

/// Base class for every error raised by the library. The category maps onto
/// the process exit codes used by the command-line tool.
class Error : public std::runtime_error {
 public:
  enum class Category { kValidation = 2, kNumeric = 3, kIo = 4 };

  Error(Category category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  Category category() const noexcept { return category_; }
  int exit_code() const noexcept { return static_cast<int>(category_); }

 private:
  Category category_;
};

/// Bad input: wrong shapes, out-of-range settings, malformed files.
class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what)
      : Error(Category::kValidation, what) {}
};

/// Non-finite activations or losses, failed numerical fits.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what)
      : Error(Category::kNumeric, what) {}
};

/// Unreadable or unwritable files.
class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(Category::kIo, what) {}
};

}  // namespace pkws
