#pragma once

// Error taxonomy. Every failure mode surfaces as a typed exception derived
// from hiergen::error so callers (and the CLI) can report one diagnostic line.

#include <stdexcept>
#include <string>

namespace hiergen {

struct error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// shape/rank mismatch between tensors
struct dim_error : error { using error::error; };

// invalid configuration value (bad schedule, width not divisible by heads, ...)
struct config_error : error { using error::error; };

// invalid data content (duplicate tensor names, value out of domain, ...)
struct data_error : error { using error::error; };

// malformed container bytes; message carries the byte offset
struct format_error : error { using error::error; };

// NaN/Inf where finite values are required
struct numeric_error : error { using error::error; };

// attention mask with a fully masked query row
struct mask_error : error { using error::error; };

// lookup of an unknown parameter name
struct key_error : error { using error::error; };

// file I/O failure (open, read, write)
struct io_error : error { using error::error; };

// a pipeline stage was invoked before the stage producing its input artifact
struct dependency_error : error { using error::error; };

} // namespace hiergen
