#pragma once

#include "rtd/core/error.hpp"
#include "rtd/core/rng.hpp"
#include "rtd/core/tensor.hpp"
#include "rtd/data/hsi.hpp"
#include "rtd/data/labels.hpp"
#include "rtd/data/matfile.hpp"
#include "rtd/data/patch.hpp"
#include "rtd/data/raster.hpp"
#include "rtd/data/raster_io.hpp"
#include "rtd/data/synthetic.hpp"
#include "rtd/evaluation.hpp"
#include "rtd/inference.hpp"
#include "rtd/losses.hpp"
#include "rtd/models/detector.hpp"
#include "rtd/models/discriminator.hpp"
#include "rtd/models/generator.hpp"
#include "rtd/models/params.hpp"
#include "rtd/sampling.hpp"
#include "rtd/training/checkpoint.hpp"
#include "rtd/training/hsi_trainer.hpp"
#include "rtd/training/optimizer.hpp"
#include "rtd/training/trainer.hpp"
