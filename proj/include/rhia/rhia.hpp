#pragma once

#include <string_view>

#include "rhia/checkpoint.hpp"
#include "rhia/config.hpp"
#include "rhia/corpus.hpp"
#include "rhia/eval.hpp"
#include "rhia/network.hpp"
#include "rhia/selfcheck.hpp"
#include "rhia/synthetic.hpp"
#include "rhia/trainer.hpp"

namespace rhia {

inline constexpr std::string_view kVersion = "1.0.0";

}  // namespace rhia
