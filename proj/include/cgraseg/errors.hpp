#pragma once

#include <stdexcept>
#include <string>

namespace cgraseg {

// Base class for all library errors. The CLI maps these onto exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Graph construction / shape inference problems (always name the node).
class ShapeError : public Error {
public:
    using Error::Error;
};

// Topological ordering found a cycle.
class CycleError : public Error {
public:
    using Error::Error;
};

// Invalid quantization parameters or unrepresentable rescale ratios.
class QuantError : public Error {
public:
    using Error::Error;
};

// A 32-bit accumulator would have left the signed range. Detected, never wrapped.
class AccumulatorOverflowError : public Error {
public:
    using Error::Error;
};

// Kernel-level argument problems that are not plain shape mismatches.
class KernelError : public Error {
public:
    using Error::Error;
};

// Model configuration that cannot be built.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Performance-model errors (zero cycles, missing efficiency, row mismatch).
class PerfError : public Error {
public:
    using Error::Error;
};

class MetricsError : public Error {
public:
    using Error::Error;
};

class ScheduleError : public Error {
public:
    using Error::Error;
};

// File-format and filesystem problems.
class IoError : public Error {
public:
    using Error::Error;
};

} // namespace cgraseg
