#pragma once

#include "tightfit/body_model.hpp"
#include "tightfit/bvh.hpp"
#include "tightfit/common.hpp"
#include "tightfit/equivtest.hpp"
#include "tightfit/fitting.hpp"
#include "tightfit/geodesic.hpp"
#include "tightfit/group.hpp"
#include "tightfit/kdtree.hpp"
#include "tightfit/mesh.hpp"
#include "tightfit/metrics.hpp"
#include "tightfit/model_io.hpp"
#include "tightfit/pipeline.hpp"
#include "tightfit/serialize.hpp"
#include "tightfit/stick_model.hpp"
#include "tightfit/svg.hpp"
#include "tightfit/synth.hpp"
#include "tightfit/tightness.hpp"
