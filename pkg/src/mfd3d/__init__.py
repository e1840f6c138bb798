"""mfd3d: meshless finite-difference solution of the 3D Poisson-Dirichlet problem.

Scattered interior/boundary nodes replace a mesh; each interior node gets a
small influence set chosen by a geometric selection algorithm (octant-based
with distance separation by default), the Laplacian is approximated on it by
polyharmonic RBF-FD weights with quadratic polynomial exactness, and the
resulting sparse system is solved directly or by preconditioned BiCGSTAB.
"""

from .geometry import (
    Ball,
    MeshDomain,
    NodeSet,
    SurfaceMesh,
    TetMesh,
    generate_grid_nodes,
    generate_halton_nodes,
    load_nodes,
    mesh_quality_stats,
    parse_stl,
    project_boundary_nodes,
    save_nodes,
    tet_gamma,
    write_stl_binary,
)
from .spatial import SpatialIndex
from .selection import (
    InfluenceSet,
    SelectionParams,
    classify_cone,
    select_grid_7star,
    select_knear,
    select_oct,
    select_oct_dist,
    select_pqr,
    select_tet,
)
from .weights import (
    PolyBasis,
    PolyharmonicRBF,
    WeightedStencil,
    WeightFailure,
    classical_7star_weights,
    compute_rbffd_weights,
)
from .linsys import (
    IterReport,
    LinearProblem,
    SingularMatrixError,
    SparseLU,
    assemble,
    bicgstab,
    ilu0,
    norm_inf,
    rcm_ordering,
    sparse_lu_solve,
)
from .diagnostics import SolveReport, convergence_order, density, evaluate_solution, rrms

__version__ = "0.1.0"
