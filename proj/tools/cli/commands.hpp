#pragma once

#include <iosfwd>
#include <span>
#include <string>

namespace saddlekv::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

// Entry point shared by the executable and the tests. `args` excludes the
// program name. Returns 0 on success, 1 on runtime/I-O failure, 2 on usage errors.
int run(std::span<const std::string> args, std::ostream& out, std::ostream& err);

}  // namespace saddlekv::cli
