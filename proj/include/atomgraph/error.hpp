#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace atomgraph {

enum class Errc {
  EmptyInput,
  OddLength,
  NonHexCharacter,
  DotParse,
  EmptyCorpus,
  VocabularyTooSmall,
  NonFiniteInput,
  LengthMismatch,
  InvalidConfig,
  DimensionMismatch,
  TrainingDiverged,
  CandidateFailed,
  MissingFile,
  MalformedRecord,
  DuplicateId,
  InvalidLabel,
  ClassTooSmall,
  PatternTooLarge,
  Checkpoint,
};

/// Coarse grouping used for CLI exit codes.
enum class ErrorCategory { Input = 2, Format = 3, Config = 4, Training = 5 };

inline ErrorCategory category_of(Errc code) {
  switch (code) {
    case Errc::EmptyInput:
    case Errc::OddLength:
    case Errc::NonHexCharacter:
    case Errc::MissingFile:
    case Errc::EmptyCorpus:
      return ErrorCategory::Input;
    case Errc::DotParse:
    case Errc::MalformedRecord:
    case Errc::DuplicateId:
    case Errc::InvalidLabel:
    case Errc::Checkpoint:
      return ErrorCategory::Format;
    case Errc::InvalidConfig:
    case Errc::ClassTooSmall:
    case Errc::PatternTooLarge:
    case Errc::VocabularyTooSmall:
    case Errc::LengthMismatch:
    case Errc::DimensionMismatch:
    case Errc::NonFiniteInput:
      return ErrorCategory::Config;
    case Errc::TrainingDiverged:
    case Errc::CandidateFailed:
      return ErrorCategory::Training;
  }
  return ErrorCategory::Input;
}

inline const char* errc_name(Errc code) {
  switch (code) {
    case Errc::EmptyInput: return "EmptyInput";
    case Errc::OddLength: return "OddLength";
    case Errc::NonHexCharacter: return "NonHexCharacter";
    case Errc::DotParse: return "DotParse";
    case Errc::EmptyCorpus: return "EmptyCorpus";
    case Errc::VocabularyTooSmall: return "VocabularyTooSmall";
    case Errc::NonFiniteInput: return "NonFiniteInput";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::InvalidConfig: return "InvalidConfig";
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::TrainingDiverged: return "TrainingDiverged";
    case Errc::CandidateFailed: return "CandidateFailed";
    case Errc::MissingFile: return "MissingFile";
    case Errc::MalformedRecord: return "MalformedRecord";
    case Errc::DuplicateId: return "DuplicateId";
    case Errc::InvalidLabel: return "InvalidLabel";
    case Errc::ClassTooSmall: return "ClassTooSmall";
    case Errc::PatternTooLarge: return "PatternTooLarge";
    case Errc::Checkpoint: return "Checkpoint";
  }
  return "Unknown";
}

/// Single exception type for the library. `position` carries a byte offset,
/// line number or epoch index depending on the code.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what, std::optional<std::size_t> position = std::nullopt)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code), position_(position) {}

  Errc code() const noexcept { return code_; }
  std::optional<std::size_t> position() const noexcept { return position_; }
  ErrorCategory category() const noexcept { return category_of(code_); }

 private:
  Errc code_;
  std::optional<std::size_t> position_;
};

}  // namespace atomgraph
