// Umbrella header: the whole library except the CLI.

#ifndef CPR_CPR_HPP_
#define CPR_CPR_HPP_

#include "cpr/conformal.hpp"
#include "cpr/scenario.hpp"
#include "cpr/timeseries.hpp"

#endif  // CPR_CPR_HPP_
