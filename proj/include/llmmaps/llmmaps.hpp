#pragma once

#include "errors.hpp"
#include "text.hpp"
#include "qa_core.hpp"
#include "random.hpp"
#include "parallel.hpp"
#include "ingest.hpp"
#include "prompt_templates.hpp"
#include "llm_gateway.hpp"
#include "hierarchy.hpp"
#include "metrics.hpp"
#include "geometry.hpp"
#include "bluenoise.hpp"
#include "layout.hpp"
#include "render.hpp"
#include "pipeline.hpp"
