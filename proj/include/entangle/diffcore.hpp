#pragma once

#include "entangle/diffcore/gradcheck.hpp"
#include "entangle/diffcore/layers.hpp"
#include "entangle/diffcore/losses.hpp"
#include "entangle/diffcore/optim.hpp"
#include "entangle/diffcore/params.hpp"
