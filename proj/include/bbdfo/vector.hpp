#pragma once

#include <vector>

namespace bbdfo {

using Vector = std::vector<double>;

}  // namespace bbdfo
