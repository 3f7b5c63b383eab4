#pragma once

#include "glcal/calibrators.hpp"
#include "glcal/dataset.hpp"
#include "glcal/errors.hpp"
#include "glcal/metrics.hpp"
#include "glcal/network.hpp"
#include "glcal/oracle.hpp"
#include "glcal/random.hpp"
#include "glcal/training.hpp"
