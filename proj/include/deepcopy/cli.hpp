// Single-binary command line: prepare, train, evaluate, generate, inspect.
#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

namespace deepcopy::cli {

enum ExitCode : int { kOk = 0, kUsageError = 1, kDataError = 2 };

/// args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

/// Git blob hash: sha1("blob <size>\0" + content), hex.
std::string git_blob_hash(const std::filesystem::path& path);

}  // namespace deepcopy::cli
