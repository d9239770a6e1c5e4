"""
Auto-regressive concentration rollout.

Starting from c(t_0), each snapshot interval is advanced with one forward
Euler step,

    c(t_{k+1}) = c(t_k) + rate_k * (t_{k+1} - t_k)

where rate_k is evaluated with the trunk time at t_{k+1}, the same alignment
as the backward-difference training targets. Nothing is clipped; values that
leave [0, 1] are counted and reported.
"""

from dataclasses import dataclass, field
import logging
from typing import Callable, List, Optional, Sequence

import numpy as np
import torch

from stonet.autodiff import DTYPE
from stonet.dataset import nodal_permeability
from stonet.operator.networks import OperatorNetwork
from stonet.scenario import PermeabilityField
from stonet.simulator.grid import Grid

logger = logging.getLogger(__name__)

TIME_TOL = 1e-9

RateFn = Callable[[object, int], object]


@dataclass
class RolloutResult:
    times_h: np.ndarray
    c: np.ndarray
    out_of_range: List[float] = field(default_factory=list)

    @property
    def max_out_of_range(self) -> float:
        return max(self.out_of_range, default=0.0)


def check_uniform(times_h: Sequence[float]) -> float:
    times_h = np.asarray(times_h, dtype=float)
    if times_h.ndim != 1 or len(times_h) < 1:
        raise ValueError('rollout needs at least one time')
    if len(times_h) == 1:
        return 0.0
    steps = np.diff(times_h)
    if np.any(np.abs(steps - steps[0]) > TIME_TOL * max(1.0, abs(steps[0]))) or steps[0] <= 0:
        raise ValueError(f'rollout times must be uniformly spaced, got {times_h.tolist()}')
    return float(steps[0])


def unroll(rate_fn: RateFn, c0, times_h: Sequence[float]):
    """
    Apply the Euler update over `times_h`. Works on numpy arrays and on
    torch tensors, so a model rollout can be differentiated.

    :param rate_fn: `rate_fn(c, k)` gives the rate used to reach `times_h[k]`
        from the state `c` at `times_h[k - 1]`
    :return: the list of states, one per time
    """
    dt = check_uniform(times_h)
    states = [c0]
    c = c0
    for k in range(1, len(times_h)):
        c = c + rate_fn(c, k) * dt
        states.append(c)
    return states


def out_of_range_fraction(c: np.ndarray) -> float:
    return float(np.mean((c < 0.0) | (c > 1.0)))


def _branch_features(k_nodes: np.ndarray, delta_p: float) -> np.ndarray:
    return np.column_stack([k_nodes, np.full(len(k_nodes), float(delta_p))])


def model_rate_fn(model: OperatorNetwork, k_nodes: np.ndarray, delta_p: float, grid: Grid,
                  times_h: Sequence[float], velocity: Optional[np.ndarray] = None) -> RateFn:
    """
    Rate function querying `model` at every node.

    :param k_nodes: nodal permeability components, shape (n_nodes, 3)
    :param velocity: nodal FEM velocity per snapshot, shape (K, n_nodes, 2),
        required by models with velocity features
    """
    u_static = _branch_features(k_nodes, delta_p)
    xy = grid.nodes
    if model.config.with_velocity and velocity is None:
        raise ValueError('this model needs the simulated velocity for rollout')

    def rate(c, k):
        u = u_static
        if model.config.with_velocity:
            u = np.column_stack([u_static, velocity[k - 1]])
        x = np.column_stack([xy, np.full(len(xy), float(times_h[k]))])
        c_now = c if model.config.with_concentration else None
        if torch.is_tensor(c):
            return model.predict_tensor(torch.as_tensor(u, dtype=DTYPE), torch.as_tensor(x, dtype=DTYPE),
                                        c_now)
        return model.predict(u, x, c_now)

    return rate


def rollout(model: OperatorNetwork, c0: np.ndarray, k_field, delta_p: float, grid: Grid,
            times_h: Sequence[float], velocity: Optional[np.ndarray] = None) -> RolloutResult:
    """
    Predict the nodal concentration at every time in `times_h` from `c0`.

    :param k_field: a `PermeabilityField` on the quadrature points or nodal
        components of shape (n_nodes, 3)
    """
    if isinstance(k_field, PermeabilityField):
        k_nodes = nodal_permeability(k_field, grid)
    else:
        k_nodes = np.asarray(k_field, dtype=float)
    rate = model_rate_fn(model, k_nodes, delta_p, grid, times_h, velocity)
    states = unroll(rate, np.asarray(c0, dtype=float), times_h)
    result = RolloutResult(np.asarray(times_h, dtype=float), np.stack(states))
    for t, c in zip(times_h, states):
        fraction = out_of_range_fraction(c)
        result.out_of_range.append(fraction)
        if fraction > 0:
            logger.warning('rollout at t=%g h: %.2f%% of nodes outside [0, 1]', t, 100 * fraction)
    return result
