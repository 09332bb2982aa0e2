#pragma once

#include <stdexcept>
#include <string>

namespace nmt {

// Base class for all toolkit errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// corpus
struct IoError : Error { using Error::Error; };
struct LineCountMismatch : Error { using Error::Error; };
struct SampleTooLarge : Error { using Error::Error; };

// subword / vocab
struct EmptyCorpus : Error { using Error::Error; };
struct MalformedMergeFile : Error { using Error::Error; };
struct MalformedVocabFile : Error { using Error::Error; };

// tensor
struct ShapeMismatch : Error { using Error::Error; };
struct InvalidAxis : Error { using Error::Error; };
struct NonScalarLoss : Error { using Error::Error; };

// model
struct IndexOutOfVocab : Error { using Error::Error; };
struct DimensionMismatch : Error { using Error::Error; };
struct MapVocabMismatch : Error { using Error::Error; };
struct CorruptCheckpoint : Error { using Error::Error; };

// training
struct SentenceTooLong : Error { using Error::Error; };
struct DataVocabMismatch : Error { using Error::Error; };

// eval
struct LengthMismatch : Error { using Error::Error; };

// pipeline
struct MissingParent : Error { using Error::Error; };
struct MissingData : Error { using Error::Error; };
struct ConfigInvalid : Error { using Error::Error; };
struct EmptyExperiment : Error { using Error::Error; };

}  // namespace nmt
