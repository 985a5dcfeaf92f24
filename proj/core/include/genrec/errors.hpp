#pragma once

#include <stdexcept>
#include <string>

namespace genrec {

// Every failure mode surfaced by the library derives from Error so the CLI
// can report one categorized line and exit nonzero.
class Error : public std::runtime_error {
 public:
  Error(std::string category, const std::string& message)
      : std::runtime_error(message), category_(std::move(category)) {}
  const std::string& category() const { return category_; }

 private:
  std::string category_;
};

#define GENREC_DEFINE_ERROR(Name, category)                         \
  class Name : public Error {                                       \
   public:                                                          \
    explicit Name(const std::string& message)                       \
        : Error(category, message) {}                               \
  }

// numerics
GENREC_DEFINE_ERROR(ShapeMismatch, "shape-mismatch");
GENREC_DEFINE_ERROR(EmptyAllowedSet, "empty-allowed-set");
GENREC_DEFINE_ERROR(IndexOutOfRange, "index-out-of-range");
GENREC_DEFINE_ERROR(NonScalarLoss, "non-scalar-loss");

// rq-codec
GENREC_DEFINE_ERROR(EmptyInput, "empty-input");
GENREC_DEFINE_ERROR(DimensionMismatch, "dimension-mismatch");
GENREC_DEFINE_ERROR(CodeOutOfRange, "code-out-of-range");
GENREC_DEFINE_ERROR(CollisionOverflow, "collision-overflow");

// semantic-id
GENREC_DEFINE_ERROR(HistoryTooLong, "history-too-long");
GENREC_DEFINE_ERROR(MissingTargetModality, "missing-target-modality");

// code-trie
GENREC_DEFINE_ERROR(DuplicateSequence, "duplicate-sequence");
GENREC_DEFINE_ERROR(UnknownPrefix, "unknown-prefix");
GENREC_DEFINE_ERROR(GoldNotPermissible, "gold-not-permissible");

// seq2seq
GENREC_DEFINE_ERROR(SequenceTooLong, "sequence-too-long");
GENREC_DEFINE_ERROR(PrefixTooLong, "prefix-too-long");
GENREC_DEFINE_ERROR(IncompatibleCheckpoint, "incompatible-checkpoint");

// ssl-quant
GENREC_DEFINE_ERROR(BatchTooSmall, "batch-too-small");

// evalkit
GENREC_DEFINE_ERROR(SequenceTooShort, "sequence-too-short");

// io / config
GENREC_DEFINE_ERROR(IoError, "io");
GENREC_DEFINE_ERROR(ConfigError, "config");

#undef GENREC_DEFINE_ERROR

}  // namespace genrec
