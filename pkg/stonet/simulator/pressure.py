"""
Boussinesq pressure equation div(-(k / mu)(grad p - rho g)) = 0.

The unknown is split into a fresh-water hydrostatic part, rho0 g y plus the
left boundary constant at the top, and a perturbation p'. Only p' is solved
for, so a column of fresh water at rest gives a zero right-hand side and an
exactly zero velocity.
"""

from dataclasses import dataclass, field
import logging
from typing import Callable, List, Optional, Tuple

import numpy as np

from stonet.scenario import DeterministicParams, PermeabilityField
from stonet.simulator import fem
from stonet.simulator.grid import Grid
from stonet.simulator.linalg import solve_symmetric
from stonet.simulator.physics import density_of, gravity

logger = logging.getLogger(__name__)


@dataclass
class PressureSolution:
    p: np.ndarray
    v: np.ndarray
    rho: np.ndarray
    residual: float
    history: List[float] = field(default_factory=list)


def solve_pressure(c: np.ndarray, k_field: PermeabilityField,
                   bc: Tuple[Callable, Callable], grid: Grid,
                   det: DeterministicParams,
                   source: Optional[Callable] = None,
                   rtol: float = 1e-10) -> PressureSolution:
    """
    Solve for nodal pressure and quadrature-point Darcy velocity.

    :param c: nodal mass fraction
    :param bc: (left(y), right(y)) Dirichlet profiles; top and bottom are no-flow
    :param source: optional volumetric source f(x, y) (1/s), used by
        manufactured-solution checks
    :param rtol: relative residual the linear solve must reach
    """
    left, right = bc
    top_pressure = float(left(0.0))
    hydrostatic = top_pressure + det.hydrostatic_gradient * grid.nodes[:, 1]

    rho = density_of(grid.at_quad(c), det)
    mobility = k_field.tensor() / det.mu
    buoyancy = np.einsum('qij,j->qi', mobility, gravity(det)) * (rho - det.rho0)[:, None]

    local = fem.diffusion_matrices(grid, mobility)
    g = grid.shape_gradients
    load = np.einsum('qad,eqd->ea', g, fem.by_element(grid, buoyancy)) * grid.quad_weight
    if source is not None:
        xq, yq = grid.quad_points[:, 0], grid.quad_points[:, 1]
        f = fem.by_element(grid, np.asarray(source(xq, yq), dtype=float))
        load = load + np.einsum('qa,eq->ea', grid.shape_values, f) * grid.quad_weight

    matrix = fem.assemble_matrix(grid, local)
    rhs = fem.assemble_vector(grid, load)

    left_nodes = grid.boundary_nodes('left')
    right_nodes = grid.boundary_nodes('right')
    fixed = np.concatenate([left_nodes, right_nodes])
    values = np.concatenate([
        left(grid.nodes[left_nodes, 1]) - hydrostatic[left_nodes],
        right(grid.nodes[right_nodes, 1]) - hydrostatic[right_nodes],
    ])

    reduced, reduced_rhs, free = fem.reduce_dirichlet(matrix, rhs, fixed, values)
    # rows are scaled by mu / k_r so the system entries are O(1)
    scale = det.mu / det.k_r
    solution, residual, history = solve_symmetric(reduced * scale, reduced_rhs * scale, rtol)

    perturbation = np.zeros(grid.n_nodes)
    perturbation[fixed] = values
    perturbation[free] = solution

    drive = grid.gradient_at_quad(perturbation) - (rho - det.rho0)[:, None] * gravity(det)
    v = -np.einsum('qij,qj->qi', mobility, drive)
    return PressureSolution(p=hydrostatic + perturbation, v=v, rho=rho,
                            residual=residual, history=history)
