#pragma once

// Everything except the CLI command layer (commands.hpp).

#include "gmmloc/adaptation.hpp"
#include "gmmloc/config.hpp"
#include "gmmloc/depth.hpp"
#include "gmmloc/errors.hpp"
#include "gmmloc/evaluation.hpp"
#include "gmmloc/filter.hpp"
#include "gmmloc/geometry.hpp"
#include "gmmloc/gmm.hpp"
#include "gmmloc/io.hpp"
#include "gmmloc/scene.hpp"
