#pragma once

namespace nndp {

inline const char* library_version() { return "0.1.0"; }

}  // namespace nndp
