""" Element-batch assembly of Q1 matrices and load vectors. """

import numpy as np
import scipy.sparse as sp

from stonet.simulator.grid import Grid


def assemble_matrix(grid: Grid, local: np.ndarray) -> sp.csr_matrix:
    """
    :param local: (n_elements, 4, 4) element matrices in connectivity order
    """
    conn = grid.connectivity
    rows = np.repeat(conn, 4, axis=1).ravel()
    cols = np.tile(conn, (1, 4)).ravel()
    return sp.coo_matrix((local.ravel(), (rows, cols)),
                         shape=(grid.n_nodes, grid.n_nodes)).tocsr()


def assemble_vector(grid: Grid, local: np.ndarray) -> np.ndarray:
    """
    :param local: (n_elements, 4) element vectors in connectivity order
    """
    return np.bincount(grid.connectivity.ravel(), weights=local.ravel(),
                       minlength=grid.n_nodes)


def by_element(grid: Grid, values: np.ndarray) -> np.ndarray:
    """ Reshape a flattened quadrature array to (n_elements, 4, ...). """
    return values.reshape((grid.n_elements, 4) + values.shape[1:])


def diffusion_matrices(grid: Grid, coefficient: np.ndarray) -> np.ndarray:
    """
    Element matrices of int grad(N_a) . K grad(N_b).

    :param coefficient: (n_quad, 2, 2) tensor at the quadrature points
    """
    k = by_element(grid, coefficient) * grid.quad_weight
    g = grid.shape_gradients
    return np.einsum('qad,eqdf,qbf->eab', g, k, g)


def free_and_fixed(n: int, fixed: np.ndarray):
    mask = np.ones(n, dtype=bool)
    mask[fixed] = False
    return np.flatnonzero(mask), np.asarray(fixed)


def reduce_dirichlet(matrix: sp.csr_matrix, rhs: np.ndarray,
                     fixed: np.ndarray, values: np.ndarray):
    """
    Eliminate Dirichlet rows and columns.

    :return: (reduced matrix, reduced rhs, free dof indices)
    """
    free, fixed = free_and_fixed(matrix.shape[0], fixed)
    reduced = matrix[free][:, free].tocsr()
    load = rhs[free] - matrix[free][:, fixed] @ values
    return reduced, load, free
