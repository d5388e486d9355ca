#pragma once

#include <stdexcept>
#include <string>

namespace cyclediff {

// Base type for every error this library throws on purpose.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-positive or non-finite depth handed to a geometric operation.
struct InvalidDepthError : Error {
    using Error::Error;
};

// Point with z <= 0 projected through a pinhole camera.
struct BehindCameraError : Error {
    using Error::Error;
};

// Mismatched image / tensor shapes.
struct DimensionError : Error {
    using Error::Error;
};

// Out-of-range or inconsistent configuration values.
struct ConfigError : Error {
    using Error::Error;
};

// Non-finite loss or latent during training / sampling.
struct DivergedError : Error {
    using Error::Error;
};

// File format violations and I/O failures.
struct IoError : Error {
    using Error::Error;
};

}  // namespace cyclediff
