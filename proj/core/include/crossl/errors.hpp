#pragma once

#include <stdexcept>
#include <string>

namespace crossl {

// Tensor/operation shape violations. Nothing in the kernel broadcasts
// silently; every rank or dimension mismatch throws one of these.
class shape_error : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Invalid user-supplied configuration (CLI exit code 2).
class config_error : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Filesystem problems: missing files, unwritable paths (CLI exit code 3).
class io_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed on-disk artifacts: bad magic, version, truncation, checksum.
// Messages carry the byte offset of the failure (CLI exit code 3).
class format_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Non-finite loss during training, names the epoch/batch (CLI exit code 4).
class divergence_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace crossl
