#include "dkparc/error.hpp"

namespace dkparc {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Format: return "format error";
    case ErrorKind::Unsupported: return "unsupported";
    case ErrorKind::Truncation: return "truncation error";
    case ErrorKind::Io: return "I/O error";
    case ErrorKind::Transform: return "transform error";
    case ErrorKind::Config: return "configuration error";
    case ErrorKind::Schema: return "schema validation error";
    case ErrorKind::Data: return "data error";
    case ErrorKind::Contract: return "contract error";
    case ErrorKind::Backend: return "backend error";
    case ErrorKind::Argument: return "argument error";
  }
  return "error";
}

}  // namespace dkparc
