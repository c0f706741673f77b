#pragma once

#include <stdexcept>
#include <string>

namespace lissm {

enum class ErrorKind {
    Dimension,
    Domain,
    InsufficientData,
    RankDeficiency,
    DegenerateCurve,
    Evaluation,
    Schema,
    Data,
    Checkpoint,
    Config,
    Numerical,
};

const char* to_string(ErrorKind kind);

// Every library failure is an lissm::Error carrying a kind tag, so callers
// (the CLI in particular) can map failures to exit codes without RTTI games.
class Error : public std::runtime_error {
  public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

  private:
    ErrorKind kind_;
};

#define LISSM_DEFINE_ERROR(Name, Kind)                                                   \
    class Name : public Error {                                                          \
      public:                                                                            \
        explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {}         \
    };

LISSM_DEFINE_ERROR(DimensionError, Dimension)
LISSM_DEFINE_ERROR(DomainError, Domain)
LISSM_DEFINE_ERROR(InsufficientDataError, InsufficientData)
LISSM_DEFINE_ERROR(RankDeficiencyError, RankDeficiency)
LISSM_DEFINE_ERROR(DegenerateCurveError, DegenerateCurve)
LISSM_DEFINE_ERROR(EvaluationError, Evaluation)
LISSM_DEFINE_ERROR(SchemaError, Schema)
LISSM_DEFINE_ERROR(DataError, Data)
LISSM_DEFINE_ERROR(ConfigError, Config)
LISSM_DEFINE_ERROR(NumericalError, Numerical)

#undef LISSM_DEFINE_ERROR

// Checkpoint failures distinguish a damaged file from a file that is fine but
// describes a different architecture; the latter names the offending tensor.
class CheckpointError : public Error {
  public:
    CheckpointError(const std::string& what, std::string tensor = {})
        : Error(ErrorKind::Checkpoint, what), tensor_(std::move(tensor)) {}
    const std::string& tensor() const noexcept { return tensor_; }
    bool is_shape_mismatch() const noexcept { return !tensor_.empty(); }

  private:
    std::string tensor_;
};

} // namespace lissm
