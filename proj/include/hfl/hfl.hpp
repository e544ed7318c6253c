#ifndef HFL_HFL_HPP_
#define HFL_HFL_HPP_

#include "hfl/codec.hpp"
#include "hfl/config.hpp"
#include "hfl/data.hpp"
#include "hfl/energy.hpp"
#include "hfl/error.hpp"
#include "hfl/nn.hpp"
#include "hfl/recovery.hpp"
#include "hfl/rng.hpp"
#include "hfl/simulation.hpp"
#include "hfl/topology.hpp"

#endif  // HFL_HFL_HPP_
