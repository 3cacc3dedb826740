#ifndef SHAKEDROP_SHAKEDROP_HPP_
#define SHAKEDROP_SHAKEDROP_HPP_

// Umbrella header.

#include "shakedrop/autograd.hpp"
#include "shakedrop/config.hpp"
#include "shakedrop/data.hpp"
#include "shakedrop/experiment.hpp"
#include "shakedrop/gradcheck.hpp"
#include "shakedrop/metrics.hpp"
#include "shakedrop/network.hpp"
#include "shakedrop/nn.hpp"
#include "shakedrop/ops.hpp"
#include "shakedrop/optimizer.hpp"
#include "shakedrop/regularizers.hpp"
#include "shakedrop/rng.hpp"
#include "shakedrop/tensor.hpp"
#include "shakedrop/training.hpp"

#endif  // SHAKEDROP_SHAKEDROP_HPP_
