#pragma once

#include <stdexcept>
#include <string>

namespace promptclinic {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// corpus
struct MalformedChat : Error { using Error::Error; };
struct MissingLabel : Error { using Error::Error; };
struct DuplicateId : Error { using Error::Error; };

// model
struct SequenceTooLong : Error { using Error::Error; };
struct ShapeMismatch : Error { using Error::Error; };
struct NonFiniteLoss : Error { using Error::Error; };

// prompting / classification
struct SlotMissing : Error { using Error::Error; };
struct MultipleMasks : Error { using Error::Error; };
struct LengthOverflow : Error { using Error::Error; };
struct LabelWordOOV : Error { using Error::Error; };

// adapters
struct UnknownTarget : Error { using Error::Error; };

// training / evaluation
struct EmptyGrid : Error { using Error::Error; };
struct ModePolicyMismatch : Error { using Error::Error; };
struct MisalignedPredictions : Error { using Error::Error; };
struct TooFewSamples : Error { using Error::Error; };
struct EmptyInput : Error { using Error::Error; };

// plumbing
struct ConfigError : Error { using Error::Error; };
struct CheckpointError : Error { using Error::Error; };

} // namespace promptclinic
