#pragma once

// Umbrella header.

#include "certsmooth/attacks.hpp"
#include "certsmooth/bench.hpp"
#include "certsmooth/bytes.hpp"
#include "certsmooth/certify.hpp"
#include "certsmooth/chunking.hpp"
#include "certsmooth/classifier.hpp"
#include "certsmooth/dataset.hpp"
#include "certsmooth/errors.hpp"
#include "certsmooth/pe.hpp"
#include "certsmooth/smoothing.hpp"
