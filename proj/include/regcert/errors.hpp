#pragma once

#include <stdexcept>
#include <string>

namespace regcert {

// Precondition or configuration problems use std::invalid_argument.
// The two classes below separate numeric and I/O failures so the CLI can
// map them onto distinct exit codes.

class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised by estimate_uncertainty when a backend fails on one sample.
class SampleError : public std::runtime_error {
public:
    SampleError(int sample, const std::string &what)
        : std::runtime_error("sample " + std::to_string(sample) + ": " + what), sample_(sample) {}

    int sample() const noexcept { return sample_; }

private:
    int sample_;
};

} // namespace regcert
