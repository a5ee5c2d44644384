#pragma once

#include "ndarchive/augment.hpp"
#include "ndarchive/codec.hpp"
#include "ndarchive/corpus.hpp"
#include "ndarchive/error.hpp"
#include "ndarchive/hashing.hpp"
#include "ndarchive/image.hpp"
#include "ndarchive/manifest.hpp"
#include "ndarchive/neural.hpp"
#include "ndarchive/pipeline.hpp"
#include "ndarchive/retrieval.hpp"
#include "ndarchive/rng.hpp"
#include "ndarchive/ssl.hpp"
