#pragma once

#include "bwdln/errors.hpp"
#include "bwdln/matcore.hpp"
#include "bwdln/bwloss.hpp"
#include "bwdln/network.hpp"
#include "bwdln/critical.hpp"
#include "bwdln/optimize.hpp"
#include "bwdln/hessian.hpp"
#include "bwdln/io.hpp"
#include "bwdln/experiments.hpp"
