#pragma once

#include "sketch3d/common.hpp"
#include "sketch3d/compose.hpp"
#include "sketch3d/contour.hpp"
#include "sketch3d/dataset.hpp"
#include "sketch3d/geometry.hpp"
#include "sketch3d/image.hpp"
#include "sketch3d/io.hpp"
#include "sketch3d/losses.hpp"
#include "sketch3d/optimize.hpp"
#include "sketch3d/raster2d.hpp"
#include "sketch3d/sidecar_client.hpp"
#include "sketch3d/sketch.hpp"
