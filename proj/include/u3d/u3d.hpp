#pragma once

#include "u3d/dataset.hpp"
#include "u3d/errors.hpp"
#include "u3d/evalkit.hpp"
#include "u3d/kv.hpp"
#include "u3d/nn/checkpoint.hpp"
#include "u3d/nn/layers.hpp"
#include "u3d/nn/model.hpp"
#include "u3d/nn/sgd.hpp"
#include "u3d/nn/train.hpp"
#include "u3d/parallel.hpp"
#include "u3d/pipeline.hpp"
#include "u3d/preprocess.hpp"
#include "u3d/random.hpp"
#include "u3d/spline.hpp"
#include "u3d/synthgen.hpp"
#include "u3d/tensor.hpp"
#include "u3d/uniformize.hpp"
#include "u3d/volume_io.hpp"
