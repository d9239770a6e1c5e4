""" Pointwise constitutive laws, vectorized over leading axes. """

import numpy as np

from stonet.scenario import DeterministicParams


def density_of(c, det: DeterministicParams):
    """ Linear state equation rho0 + (rho_s - rho0) c, with c clamped to [0, 1]. """
    c = np.clip(np.asarray(c, dtype=float), 0.0, 1.0)
    return det.rho0 + (det.rho_s - det.rho0) * c


def gravity(det: DeterministicParams) -> np.ndarray:
    # y points down
    return np.array([0.0, det.g])


def darcy_velocity(grad_p, rho, k, det: DeterministicParams) -> np.ndarray:
    """
    v = -(k / mu) (grad p - rho g).

    :param grad_p: (..., 2) pressure gradient (Pa/m)
    :param rho: (...) density (kg/m^3)
    :param k: (..., 2, 2) permeability (m^2)
    """
    drive = np.asarray(grad_p, dtype=float) - np.asarray(rho, dtype=float)[..., None] * gravity(det)
    return -np.einsum('...ij,...j->...i', np.asarray(k, dtype=float), drive) / det.mu


def dispersion_tensor(v, det: DeterministicParams) -> np.ndarray:
    """
    D = phi tau D_mol I + (alpha_L - alpha_T) v v^T / |v| + alpha_T |v| I.

    :param v: (..., 2) velocity (m/s)
    :return: (..., 2, 2) (m^2/s)
    """
    v = np.asarray(v, dtype=float)
    speed = np.linalg.norm(v, axis=-1)
    eye = np.eye(2)
    outer = np.einsum('...i,...j->...ij', v, v)
    safe = np.where(speed > 0, speed, 1.0)
    mechanical = np.where((speed > 0)[..., None, None],
                          (det.alpha_L - det.alpha_T) * outer / safe[..., None, None], 0.0)
    isotropic = det.phi * det.tau * det.D_mol + det.alpha_T * speed
    return mechanical + isotropic[..., None, None] * eye
