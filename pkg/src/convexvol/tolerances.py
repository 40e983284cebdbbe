"""Central numeric tolerances. Every module and test asserts against these."""

GEOM_SLACK = 1e-9       # facet/containment slack for polytope predicates
QUAD_TOL = 1e-12        # absolute tolerance for 1-D adaptive quadrature
MVEE_TOL = 1e-6         # relative volume tolerance of enclosing-ellipsoid iteration
UNIT_TOL = 1e-12        # how exactly a direction must be normalized
DET_FLOOR = 1e-12       # |det T| below this counts as singular
