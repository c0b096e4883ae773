#pragma once

#include <random>

namespace arm {

using Rng = std::mt19937_64;

}  // namespace arm
