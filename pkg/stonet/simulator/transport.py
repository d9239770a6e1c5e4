"""
One backward-Euler step of solute transport,

    phi d(rho c)/dt + div(rho c v) - div(rho D grad c) = 0,

in conservative Galerkin form with optional SUPG stabilization. Dirichlet
values fix c on the injection boundary; every other boundary carries zero
dispersive flux and lets solute leave with the advective flux rho c (v.n)+.
Because the advective term is integrated by parts, summing all equations
gives an exact discrete balance between the change of solute mass and the
boundary fluxes.
"""

from dataclasses import dataclass
import logging
from typing import Optional, Tuple

import numpy as np
import scipy.sparse as sp

from stonet.scenario import DeterministicParams
from stonet.simulator import fem
from stonet.simulator.grid import Grid
from stonet.simulator.linalg import solve_general
from stonet.simulator.physics import dispersion_tensor

logger = logging.getLogger(__name__)

# nodes within this distance of a source band edge still belong to it (m)
BAND_TOL = 1e-9


@dataclass(frozen=True)
class TransportBoundary:
    nodes: np.ndarray
    values: np.ndarray


@dataclass(frozen=True)
class SoluteBalance:
    """ Per-step solute budget in kg per metre of out-of-plane depth. """
    mass_change: float
    influx: float
    outflux: float

    @property
    def relative_error(self) -> float:
        scale = max(abs(self.mass_change), abs(self.influx), abs(self.outflux), 1e-300)
        return abs(self.mass_change - (self.influx - self.outflux)) / scale


@dataclass
class TransportStep:
    c: np.ndarray
    residual: float
    balance: SoluteBalance


def source_boundary(grid: Grid, band: Tuple[float, float], value: float = 1.0) \
        -> TransportBoundary:
    """ c = value on the left boundary for y in `band`, c = 0 on the rest of it. """
    nodes = grid.boundary_nodes('left')
    y = grid.nodes[nodes, 1]
    inside = (y >= band[0] - BAND_TOL) & (y <= band[1] + BAND_TOL)
    return TransportBoundary(nodes=nodes, values=np.where(inside, value, 0.0))


def supg_tau(v: np.ndarray, dispersion: np.ndarray, grid: Grid) -> np.ndarray:
    """
    Streamline stabilization parameter tau = h / (2|v|) (coth(Pe) - 1/Pe)
    with the streamline element length h and the element Peclet number
    built from the dispersion along the flow direction.
    """
    speed = np.linalg.norm(v, axis=-1)
    moving = speed > 0
    safe = np.where(moving, speed, 1.0)
    h = (np.abs(v[:, 0]) * grid.dx + np.abs(v[:, 1]) * grid.dy) / safe
    along = np.einsum('qi,qij,qj->q', v, dispersion, v) / safe ** 2
    peclet = speed * h / (2.0 * along)
    small = peclet < 1e-3
    safe_pe = np.where(small, 1.0, peclet)
    xi = np.where(small, peclet / 3.0, 1.0 / np.tanh(safe_pe) - 1.0 / safe_pe)
    return np.where(moving, h / (2.0 * safe) * xi, 0.0)


def _outflow(grid: Grid, v: np.ndarray, rho: np.ndarray,
             skip: Tuple[str, ...]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    COO triplets of the outflow boundary matrix int N_a rho (v.n)+ N_b ds.

    The edge flux density is the mean of the two Gauss points of the
    adjacent element that lie on the edge's side.
    """
    side_gauss = {'left': (0, 3), 'right': (1, 2), 'top': (0, 1), 'bottom': (2, 3)}
    v_e = fem.by_element(grid, v)
    rho_e = fem.by_element(grid, rho)
    rows, cols, vals = [], [], []
    edge_mass = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
    for side, (pairs, normal, length) in grid.boundary_edges.items():
        if side in skip:
            continue
        elem = grid.edge_element(side)
        g = list(side_gauss[side])
        flux = np.mean(rho_e[elem][:, g, None] * v_e[elem][:, g, :], axis=1) @ normal
        local = np.maximum(flux, 0.0)[:, None, None] * length * edge_mass
        rows.append(np.repeat(pairs, 2, axis=1).ravel())
        cols.append(np.tile(pairs, (1, 2)).ravel())
        vals.append(local.ravel())
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)


def step_transport(c_old: np.ndarray, v: np.ndarray, rho: np.ndarray, grid: Grid,
                   det: DeterministicParams, dt: float,
                   boundary: Optional[TransportBoundary] = None,
                   rho_old: Optional[np.ndarray] = None,
                   supg: bool = True, rtol: float = 1e-13) -> TransportStep:
    """
    Advance the nodal mass fraction by one implicit step.

    :param v: (n_quad, 2) Darcy velocity
    :param rho: (n_quad,) density for the new time level
    :param boundary: Dirichlet nodes and values; None means no Dirichlet nodes
    :param rho_old: density of the old time level, defaults to `rho`
    :param supg: streamline-upwind Petrov-Galerkin stabilization on/off
    """
    if dt <= 0:
        raise ValueError(f'time step must be positive, got {dt}')

    rho_old = rho if rho_old is None else rho_old
    n_v = grid.shape_values
    g = grid.shape_gradients
    w = grid.quad_weight

    dispersion = dispersion_tensor(v, det)
    storage = fem.by_element(grid, det.phi * rho / dt) * w
    flux_q = fem.by_element(grid, rho[:, None] * v) * w

    local = np.einsum('qa,eq,qb->eab', n_v, storage, n_v)
    local -= np.einsum('qad,eqd,qb->eab', g, flux_q, n_v)
    local += fem.diffusion_matrices(grid, rho[:, None, None] * dispersion)

    c_old_q = fem.by_element(grid, grid.at_quad(c_old))
    old_storage = fem.by_element(grid, det.phi * rho_old / dt) * w * c_old_q
    load = np.einsum('qa,eq->ea', n_v, old_storage)

    if supg:
        tau = fem.by_element(grid, supg_tau(v, dispersion, grid))
        v_e = fem.by_element(grid, v)
        streamline = np.einsum('eqd,qad->eqa', v_e, g)
        local += np.einsum('eq,eqa,eq,qb->eab', tau, streamline, storage, n_v)
        local += np.einsum('eq,eqa,eq,eqb->eab', tau, streamline,
                           fem.by_element(grid, rho) * w, streamline)
        load += np.einsum('eq,eqa,eq->ea', tau, streamline, old_storage)

    matrix = fem.assemble_matrix(grid, local)
    skip = ('left',) if boundary is not None and len(boundary.nodes) else ()
    rows, cols, vals = _outflow(grid, v, rho, skip)
    outflow = sp.coo_matrix((vals, (rows, cols)), shape=matrix.shape).tocsr()
    matrix = (matrix + outflow).tocsr()
    rhs = fem.assemble_vector(grid, load)

    c_new = np.zeros(grid.n_nodes)
    if boundary is not None and len(boundary.nodes):
        reduced, reduced_rhs, free = fem.reduce_dirichlet(matrix, rhs, boundary.nodes,
                                                          boundary.values)
        c_new[boundary.nodes] = boundary.values
    else:
        reduced, reduced_rhs, free = matrix, rhs, np.arange(grid.n_nodes)
    solution, residual, _ = solve_general(reduced, reduced_rhs, rtol)
    c_new[free] = solution

    # the free rows vanish up to the solver tolerance; what is left on the
    # Dirichlet rows is the solute entering through them
    full_residual = matrix @ c_new - rhs
    influx = float(full_residual[boundary.nodes].sum()) if len(skip) else 0.0
    outflux = float(np.sum(outflow @ c_new))
    mass_change = float(np.sum(storage * fem.by_element(grid, grid.at_quad(c_new)))
                        - np.sum(old_storage))
    balance = SoluteBalance(mass_change=mass_change * dt, influx=influx * dt,
                            outflux=outflux * dt)
    return TransportStep(c=c_new, residual=residual, balance=balance)
