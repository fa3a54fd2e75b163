#pragma once

#include <string>
#include <vector>

namespace minvar::cli {

int run(const std::vector<std::string>& args);

}  // namespace minvar::cli
