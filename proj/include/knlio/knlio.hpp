#pragma once

#include "knlio/config.hpp"
#include "knlio/dataset_io.hpp"
#include "knlio/eskf.hpp"
#include "knlio/geometry.hpp"
#include "knlio/kdtree.hpp"
#include "knlio/log.hpp"
#include "knlio/marching_cubes.hpp"
#include "knlio/metrics.hpp"
#include "knlio/mlp.hpp"
#include "knlio/neural_map.hpp"
#include "knlio/pipeline.hpp"
#include "knlio/ply.hpp"
#include "knlio/preprocess.hpp"
#include "knlio/registration.hpp"
#include "knlio/simulator.hpp"
#include "knlio/trajectory.hpp"
#include "knlio/training.hpp"
