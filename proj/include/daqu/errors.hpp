#pragma once

#include <stdexcept>
#include <string>

namespace daqu {

/// Broad failure class, used by the command-line front end to pick an exit code.
enum class ErrorClass { config, data, version };

class Error : public std::runtime_error {
 public:
  Error(ErrorClass cls, const std::string& what) : std::runtime_error(what), cls_(cls) {}
  ErrorClass error_class() const noexcept { return cls_; }

 private:
  ErrorClass cls_;
};

#define DAQU_DEFINE_ERROR(Name, Class)                                  \
  class Name : public Error {                                           \
   public:                                                              \
    explicit Name(const std::string& what) : Error(ErrorClass::Class, what) {} \
  };

// relstore
DAQU_DEFINE_ERROR(SchemaError, config)
DAQU_DEFINE_ERROR(DanglingKeyError, data)
DAQU_DEFINE_ERROR(DuplicateIdError, data)
DAQU_DEFINE_ERROR(UnknownLinkError, config)
DAQU_DEFINE_ERROR(UnknownRowError, data)
// metaview
DAQU_DEFINE_ERROR(SpecTypeError, config)
DAQU_DEFINE_ERROR(MissingTimestampError, data)
// encoder / setenc / trainer
DAQU_DEFINE_ERROR(DimensionError, data)
DAQU_DEFINE_ERROR(FormatError, data)
DAQU_DEFINE_ERROR(DimensionMismatchError, data)
DAQU_DEFINE_ERROR(UnknownIdError, data)
DAQU_DEFINE_ERROR(EmptyColumnError, data)
DAQU_DEFINE_ERROR(ModeError, config)
DAQU_DEFINE_ERROR(BatchTooSmallError, config)
// evalkit
DAQU_DEFINE_ERROR(MissingQueryError, data)
// synthgen / cli
DAQU_DEFINE_ERROR(ConfigError, config)
DAQU_DEFINE_ERROR(VersionMismatchError, version)

#undef DAQU_DEFINE_ERROR

}  // namespace daqu
