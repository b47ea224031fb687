// Error type shared across the library. Every failure carries a kind so the
// C API can map it onto an exit/status code without string matching.
#pragma once

#include <stdexcept>
#include <string>

namespace fuselab {

enum class ErrorKind {
  config,     // inconsistent dimensions, bad hyperparameters
  input,      // bad runtime argument (label out of range, non-finite data)
  state,      // operation not valid for this object (e.g. EBR not attached)
  ingest,     // malformed external file
  integrity,  // checkpoint checksum/size mismatch
  version,    // checkpoint version mismatch
  usage,      // unknown experiment id, unknown config key
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

  static Error config(const std::string& m) { return {ErrorKind::config, m}; }
  static Error input(const std::string& m) { return {ErrorKind::input, m}; }
  static Error state(const std::string& m) { return {ErrorKind::state, m}; }
  static Error ingest(const std::string& m) { return {ErrorKind::ingest, m}; }
  static Error integrity(const std::string& m) { return {ErrorKind::integrity, m}; }
  static Error version(const std::string& m) { return {ErrorKind::version, m}; }
  static Error usage(const std::string& m) { return {ErrorKind::usage, m}; }

 private:
  ErrorKind kind_;
};

}  // namespace fuselab
