#pragma once

#include <stdexcept>
#include <string>

namespace iste {

/// Tensor extents or channel counts do not line up.
class ShapeError : public std::invalid_argument {
   public:
    using std::invalid_argument::invalid_argument;
};

/// Invalid configuration value (scale range, learning rate, flags...).
class ConfigError : public std::invalid_argument {
   public:
    using std::invalid_argument::invalid_argument;
};

/// A coordinate or index falls outside its admissible domain.
class RangeError : public std::out_of_range {
   public:
    using std::out_of_range::out_of_range;
};

/// A primitive produced NaN or Inf.
class NonFiniteError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

/// Checkpoint version/config/checksum mismatch.
class CheckpointError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

}  // namespace iste
