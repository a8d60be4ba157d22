#pragma once

#include "bregsparse/checkpoint.hpp"
#include "bregsparse/config.hpp"
#include "bregsparse/controller.hpp"
#include "bregsparse/error.hpp"
#include "bregsparse/metrics.hpp"
#include "bregsparse/models.hpp"
#include "bregsparse/optim.hpp"
#include "bregsparse/param_store.hpp"
#include "bregsparse/prox.hpp"
#include "bregsparse/runner.hpp"
