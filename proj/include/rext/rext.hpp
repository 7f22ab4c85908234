#pragma once
// Everything: expressions, atlases, meshes, gluing, extension, collars, completeness, scenarios.

#include "error.hpp"
#include "expr.hpp"
#include "atlas.hpp"
#include "graph.hpp"
#include "spec_io.hpp"
#include "lengthspace.hpp"
#include "geodesic.hpp"
#include "glue.hpp"
#include "extend.hpp"
#include "curvature_collar.hpp"
#include "exhaustion.hpp"
#include "complete.hpp"
#include "scenarios.hpp"
