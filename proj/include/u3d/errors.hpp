#pragma once

#include <stdexcept>
#include <string>

namespace u3d {

/// Base of every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define U3D_DEFINE_ERROR(Name)          \
  class Name : public Error {           \
   public:                              \
    using Error::Error;                 \
  }

U3D_DEFINE_ERROR(IndexError);
U3D_DEFINE_ERROR(ShapeError);
U3D_DEFINE_ERROR(EmptyInputError);
U3D_DEFINE_ERROR(FormatError);
U3D_DEFINE_ERROR(UnsupportedDatatype);
U3D_DEFINE_ERROR(UnsupportedRank);
U3D_DEFINE_ERROR(TruncationError);
U3D_DEFINE_ERROR(IoError);
U3D_DEFINE_ERROR(DomainError);
U3D_DEFINE_ERROR(ConfigError);
U3D_DEFINE_ERROR(DegenerateBatchError);
U3D_DEFINE_ERROR(DegenerateLabelsError);
U3D_DEFINE_ERROR(GenerationError);

#undef U3D_DEFINE_ERROR

}  // namespace u3d
