#pragma once

#include "radinv/core.hpp"
#include "radinv/autodiff/ops.hpp"
#include "radinv/geometry.hpp"
#include "radinv/field.hpp"
#include "radinv/renderer.hpp"
#include "radinv/scene.hpp"
#include "radinv/optim.hpp"
#include "radinv/fitting.hpp"
#include "radinv/metrics.hpp"
#include "radinv/mesh.hpp"
#include "radinv/io.hpp"
#include "radinv/pose_estimation.hpp"
#include "radinv/inversion.hpp"
