#pragma once

#include <stdexcept>
#include <string>

namespace mua {

// Bad arguments, bad config, violated preconditions. CLI exit code 1.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

// Missing or unreadable artifacts (manifests, checkpoints, images). Exit code 2.
class ArtifactError : public std::runtime_error {
 public:
  explicit ArtifactError(const std::string& what) : std::runtime_error(what) {}
};

// Artifacts present but internally inconsistent. Exit code 2.
class CorruptDataError : public std::runtime_error {
 public:
  explicit CorruptDataError(const std::string& what) : std::runtime_error(what) {}
};

// Non-finite losses or diverged training. Exit code 2.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace mua
