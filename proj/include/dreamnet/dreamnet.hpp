#pragma once

#include "dreamnet/checkpoint.hpp"
#include "dreamnet/data.hpp"
#include "dreamnet/errors.hpp"
#include "dreamnet/gradcheck.hpp"
#include "dreamnet/layers.hpp"
#include "dreamnet/network.hpp"
#include "dreamnet/optim.hpp"
#include "dreamnet/spd_core.hpp"
#include "dreamnet/sym_matrix.hpp"
#include "dreamnet/train.hpp"
