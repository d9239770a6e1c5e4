"""
Structured Q1 quadrilateral grid with 2x2 Gauss quadrature.

Nodes are numbered row-major, `node = j * (nx + 1) + i`, with `x = i * dx`
and `y = j * dy` measured downward from the top boundary. Elements are
numbered row-major as well; each carries four Gauss points ordered like its
nodes: (-,-), (+,-), (+,+), (-,+) in reference coordinates. Quadrature arrays
are flattened element-major, `quad = 4 * element + gauss`.
"""

from dataclasses import dataclass
from functools import cached_property
import math
import re
from typing import Dict, Tuple

import numpy as np
import scipy.sparse as sp

from stonet.errors import ConfigError

DOMAIN = (0.7, 0.5)

_GAUSS = 1.0 / math.sqrt(3.0)
# reference coordinates of the element nodes and of the Gauss points
_NODE_REF = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])
_GAUSS_REF = _NODE_REF * _GAUSS


def _shape(xi, eta):
    return 0.25 * (1 + _NODE_REF[:, 0] * xi) * (1 + _NODE_REF[:, 1] * eta)


def _shape_grad_ref(xi, eta):
    dxi = 0.25 * _NODE_REF[:, 0] * (1 + _NODE_REF[:, 1] * eta)
    deta = 0.25 * _NODE_REF[:, 1] * (1 + _NODE_REF[:, 0] * xi)
    return np.stack([dxi, deta], axis=-1)


@dataclass(frozen=True)
class Grid:
    nx: int
    ny: int
    lx: float = DOMAIN[0]
    ly: float = DOMAIN[1]

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ConfigError(f'grid needs at least one element per side, got {self.nx}x{self.ny}')

    @classmethod
    def from_spec(cls, spec: str, lx: float = DOMAIN[0], ly: float = DOMAIN[1]) -> 'Grid':
        """ Parse a `70x50` style element count. """
        match = re.fullmatch(r'\s*(\d+)\s*[xX]\s*(\d+)\s*', spec)
        if match is None:
            raise ConfigError(f'bad grid spec {spec!r}, expected NXxNY')
        return cls(int(match.group(1)), int(match.group(2)), lx, ly)

    @property
    def spec(self) -> str:
        return f'{self.nx}x{self.ny}'

    @property
    def dx(self) -> float:
        return self.lx / self.nx

    @property
    def dy(self) -> float:
        return self.ly / self.ny

    @property
    def n_elements(self) -> int:
        return self.nx * self.ny

    @property
    def n_nodes(self) -> int:
        return (self.nx + 1) * (self.ny + 1)

    @property
    def n_quad(self) -> int:
        return 4 * self.n_elements

    @property
    def area(self) -> float:
        return self.lx * self.ly

    def to_dict(self) -> Dict:
        return {
            'spec': self.spec, 'nx': self.nx, 'ny': self.ny,
            'lx': self.lx, 'ly': self.ly,
            'n_elements': self.n_elements, 'n_nodes': self.n_nodes,
            'n_quad': self.n_quad,
        }

    @cached_property
    def nodes(self) -> np.ndarray:
        """ (n_nodes, 2) node coordinates. """
        i, j = np.meshgrid(np.arange(self.nx + 1), np.arange(self.ny + 1))
        return np.stack([i.ravel() * self.dx, j.ravel() * self.dy], axis=-1)

    @cached_property
    def connectivity(self) -> np.ndarray:
        """ (n_elements, 4) node ids per element, counter-clockwise in reference space. """
        ex, ey = np.meshgrid(np.arange(self.nx), np.arange(self.ny))
        ex, ey = ex.ravel(), ey.ravel()
        base = ey * (self.nx + 1) + ex
        return np.stack([base, base + 1, base + self.nx + 2, base + self.nx + 1], axis=-1)

    @cached_property
    def shape_values(self) -> np.ndarray:
        """ (4 gauss, 4 nodes) shape function values. """
        return np.array([_shape(*g) for g in _GAUSS_REF])

    @cached_property
    def shape_gradients(self) -> np.ndarray:
        """ (4 gauss, 4 nodes, 2) physical shape gradients, identical for every element. """
        ref = np.array([_shape_grad_ref(*g) for g in _GAUSS_REF])
        return ref * np.array([2.0 / self.dx, 2.0 / self.dy])

    @property
    def quad_weight(self) -> float:
        """ Gauss weight times Jacobian determinant, the same for every point. """
        return 0.25 * self.dx * self.dy

    @cached_property
    def quad_weights(self) -> np.ndarray:
        return np.full(self.n_quad, self.quad_weight)

    @cached_property
    def quad_points(self) -> np.ndarray:
        """ (n_quad, 2) physical Gauss point coordinates. """
        corner = self.nodes[self.connectivity[:, 0]]
        offset = 0.5 * (1 + _GAUSS_REF) * np.array([self.dx, self.dy])
        return (corner[:, None, :] + offset[None, :, :]).reshape(-1, 2)

    @cached_property
    def quad_lattice(self) -> Tuple[np.ndarray, np.ndarray]:
        """
        (row, col) of every quadrature point in the (2*ny, 2*nx) lattice the
        Gauss points form; x and y coordinates are monotone along cols and rows.
        """
        ex, ey = np.meshgrid(np.arange(self.nx), np.arange(self.ny))
        ex, ey = ex.ravel(), ey.ravel()
        a = (_GAUSS_REF[:, 0] > 0).astype(int)
        b = (_GAUSS_REF[:, 1] > 0).astype(int)
        cols = (2 * ex[:, None] + a[None, :]).ravel()
        rows = (2 * ey[:, None] + b[None, :]).ravel()
        return rows, cols

    @cached_property
    def lattice_axes(self) -> Tuple[np.ndarray, np.ndarray]:
        """ Sorted Gauss x coordinates (2*nx,) and y coordinates (2*ny,). """
        rows, cols = self.quad_lattice
        xs = np.zeros(2 * self.nx)
        ys = np.zeros(2 * self.ny)
        xs[cols] = self.quad_points[:, 0]
        ys[rows] = self.quad_points[:, 1]
        return xs, ys

    def boundary_nodes(self, side: str) -> np.ndarray:
        i = np.arange(self.nx + 1)
        j = np.arange(self.ny + 1)
        if side == 'left':
            return j * (self.nx + 1)
        if side == 'right':
            return j * (self.nx + 1) + self.nx
        if side == 'top':
            return i
        if side == 'bottom':
            return self.ny * (self.nx + 1) + i
        raise ValueError(f'unknown side {side!r}')

    @cached_property
    def boundary_edges(self) -> Dict[str, Tuple[np.ndarray, np.ndarray, float]]:
        """
        Per side: (edge node pairs (n, 2), outward unit normal (2,), edge length).
        """
        edges = {}
        for side, normal, length in (('left', (-1.0, 0.0), self.dy),
                                     ('right', (1.0, 0.0), self.dy),
                                     ('top', (0.0, -1.0), self.dx),
                                     ('bottom', (0.0, 1.0), self.dx)):
            nodes = self.boundary_nodes(side)
            edges[side] = (np.stack([nodes[:-1], nodes[1:]], axis=-1),
                           np.array(normal), length)
        return edges

    def edge_element(self, side: str) -> np.ndarray:
        """ Element index adjacent to every boundary edge of `side`. """
        if side == 'left':
            return np.arange(self.ny) * self.nx
        if side == 'right':
            return np.arange(self.ny) * self.nx + self.nx - 1
        if side == 'top':
            return np.arange(self.nx)
        if side == 'bottom':
            return (self.ny - 1) * self.nx + np.arange(self.nx)
        raise ValueError(f'unknown side {side!r}')

    def at_quad(self, nodal: np.ndarray) -> np.ndarray:
        """ Interpolate a nodal field to the quadrature points, (n_quad,). """
        return (nodal[self.connectivity] @ self.shape_values.T).ravel()

    def gradient_at_quad(self, nodal: np.ndarray) -> np.ndarray:
        """ Gradient of a nodal field at the quadrature points, (n_quad, 2). """
        local = nodal[self.connectivity]
        return np.einsum('qad,ea->eqd', self.shape_gradients, local).reshape(-1, 2)

    @cached_property
    def quad_to_node(self):
        """
        Sparse (n_nodes, n_quad) operator averaging the quadrature values of
        the elements around a node, weighted by quadrature area.
        """
        rows = np.repeat(self.connectivity, 4, axis=1).ravel()
        cols = np.tile(np.arange(self.n_quad).reshape(-1, 4), (1, 4)).ravel()
        weights = np.full(rows.shape, self.quad_weight)
        op = sp.coo_matrix((weights, (rows, cols)),
                           shape=(self.n_nodes, self.n_quad)).tocsr()
        totals = np.asarray(op.sum(axis=1)).ravel()
        return sp.diags(1.0 / totals) @ op

    def integrate(self, values_at_quad: np.ndarray) -> float:
        return float(np.sum(values_at_quad * self.quad_weight))

    def l2_norm(self, nodal: np.ndarray) -> float:
        return math.sqrt(self.integrate(self.at_quad(nodal) ** 2))

    def l2_error(self, nodal: np.ndarray, exact) -> float:
        """
        L2 norm of `nodal - exact` with `exact(x, y)` evaluated at the Gauss
        points.
        """
        xq, yq = self.quad_points[:, 0], self.quad_points[:, 1]
        diff = self.at_quad(nodal) - exact(xq, yq)
        return math.sqrt(self.integrate(diff ** 2))
