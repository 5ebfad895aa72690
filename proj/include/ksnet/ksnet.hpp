#pragma once

// Umbrella header for the kernel-sharing CNN training engine.

#include "ksnet/accounting.hpp"
#include "ksnet/checkpoint.hpp"
#include "ksnet/common.hpp"
#include "ksnet/config.hpp"
#include "ksnet/data.hpp"
#include "ksnet/graph.hpp"
#include "ksnet/harness.hpp"
#include "ksnet/layers.hpp"
#include "ksnet/models.hpp"
#include "ksnet/network.hpp"
#include "ksnet/optim.hpp"
#include "ksnet/rng.hpp"
#include "ksnet/sharing.hpp"
#include "ksnet/tensor.hpp"
