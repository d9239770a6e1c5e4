"""
Stochastic micro-fracture scenarios and their equivalent permeability.

A scenario is a pair of global draws (mean orientation, Poisson density,
right-boundary pressure) plus one local fracture sample per quadrature
point. The local fractures are upscaled into a symmetric 2x2 permeability
tensor by averaging over a representative elementary volume (REV) window
centred on every quadrature point.

All randomness comes from Philox streams keyed by (base seed, scenario
index, variable tag), so a scenario is reproducible bit for bit no matter
which worker draws it or in which order.
"""

from dataclasses import dataclass, field
import logging
import math
from typing import Callable, Dict, Tuple

import numpy as np

from stonet.errors import StonetError
from stonet.simulator.grid import Grid
from stonet.utils.config import Config, require
from stonet.utils.rng import derive_seed, stream

logger = logging.getLogger(__name__)

# inclusion tolerance for points sitting exactly on a REV window edge (m)
WINDOW_TOL = 1e-9


@dataclass
class DeterministicParams(Config):
    g: float = 9.81
    rho0: float = 998.2
    rho_s: float = 1002.0
    mu: float = 1.002e-3
    phi: float = 0.38
    D_mol: float = 1.61e-9
    k_r: float = 5.7e-11
    alpha_L: float = 1e-3
    alpha_T: float = 2e-4
    tau: float = 1.0

    def validate(self):
        for name, value in self.to_dict().items():
            require(value > 0, f'{name} must be strictly positive, got {value}')
        require(self.alpha_L >= self.alpha_T,
                f'alpha_L ({self.alpha_L}) must not be smaller than alpha_T ({self.alpha_T})')

    @property
    def hydrostatic_gradient(self) -> float:
        """ rho0 * g, the vertical pressure gradient of fresh water (Pa/m). """
        return self.rho0 * self.g


@dataclass
class ScenarioConfig(Config):
    mu_theta_range: Tuple[float, float] = (-60.0, 60.0)
    lambda_range: Tuple[float, float] = (30.0, 70.0)
    p_right_range: Tuple[float, float] = (4976.0, 4996.0)
    p_left_offset: float = 4996.0
    sigma_theta: float = 15.0
    length_mean: float = 0.05
    length_std: float = 0.0575
    aperture_mean: float = 1.14e-4
    aperture_std: float = 1.725e-4
    rev_window: Tuple[float, float] = (0.10, 0.10)

    def validate(self):
        for name in ('mu_theta_range', 'lambda_range', 'p_right_range'):
            lo, hi = getattr(self, name)
            require(lo <= hi, f'{name} must be ordered, got {(lo, hi)}')
        require(self.sigma_theta > 0, 'sigma_theta must be positive')
        for name in ('length_mean', 'length_std', 'aperture_mean', 'aperture_std'):
            require(getattr(self, name) > 0, f'{name} must be positive')
        require(all(w > 0 for w in self.rev_window), 'rev_window must be positive')


@dataclass(frozen=True)
class ScenarioParams:
    base_seed: int
    index: int
    seed: int
    mu_theta: float
    lam: float
    p_right_offset: float
    p_left_offset: float = 4996.0

    @property
    def delta_p(self) -> float:
        """ Left minus right boundary pressure constant (Pa). """
        return self.p_left_offset - self.p_right_offset

    def to_manifest(self) -> Dict:
        return {
            'base_seed': self.base_seed,
            'index': self.index,
            'seed': self.seed,
            'mu_theta_deg': self.mu_theta,
            'lambda': self.lam,
            'p_right_offset_pa': self.p_right_offset,
            'p_left_offset_pa': self.p_left_offset,
        }

    @classmethod
    def from_manifest(cls, manifest: Dict) -> 'ScenarioParams':
        return cls(base_seed=manifest['base_seed'], index=manifest['index'],
                   seed=manifest['seed'], mu_theta=manifest['mu_theta_deg'],
                   lam=manifest['lambda'], p_right_offset=manifest['p_right_offset_pa'],
                   p_left_offset=manifest['p_left_offset_pa'])


@dataclass(frozen=True)
class FractureField:
    theta: np.ndarray
    count: np.ndarray
    length: np.ndarray
    aperture: np.ndarray

    def __post_init__(self):
        n = len(self.theta)
        for name in ('count', 'length', 'aperture'):
            if len(getattr(self, name)) != n:
                raise StonetError(f'fracture field {name} has {len(getattr(self, name))} entries, expected {n}')

    def __len__(self):
        return len(self.theta)


@dataclass(frozen=True)
class REVSpec:
    window: Tuple[float, float] = (0.10, 0.10)
    volume: float = None

    def __post_init__(self):
        if any(w <= 0 for w in self.window):
            raise StonetError(f'REV window must be positive, got {self.window}')
        if self.volume is None:
            object.__setattr__(self, 'volume', self.window[0] * self.window[1])


@dataclass(frozen=True)
class PermeabilityField:
    kxx: np.ndarray
    kyy: np.ndarray
    kxy: np.ndarray

    def tensor(self) -> np.ndarray:
        """ (n, 2, 2) symmetric tensors. """
        return np.stack([np.stack([self.kxx, self.kxy], -1),
                         np.stack([self.kxy, self.kyy], -1)], -2)

    def as_array(self) -> np.ndarray:
        """ (n, 3) rows of (kxx, kyy, kxy), the `kfield.bin` layout. """
        return np.stack([self.kxx, self.kyy, self.kxy], axis=-1)

    @classmethod
    def from_array(cls, array: np.ndarray) -> 'PermeabilityField':
        return cls(array[:, 0].copy(), array[:, 1].copy(), array[:, 2].copy())

    def min_eigenvalue(self) -> np.ndarray:
        half_trace = 0.5 * (self.kxx + self.kyy)
        radius = np.hypot(0.5 * (self.kxx - self.kyy), self.kxy)
        return half_trace - radius

    def __len__(self):
        return len(self.kxx)


@dataclass(frozen=True)
class Scenario:
    params: ScenarioParams
    fractures: FractureField
    permeability: PermeabilityField
    rev: REVSpec = field(default_factory=REVSpec)


def sample_scenario(base_seed: int, index: int,
                    config: ScenarioConfig = None) -> ScenarioParams:
    """
    Draw the global parameters of one scenario.

    :param base_seed: seed shared by a whole batch of scenarios
    :param index: scenario index inside the batch, >= 0
    """
    if index < 0:
        raise ValueError(f'scenario index must be non-negative, got {index}')
    config = config or ScenarioConfig()
    rng = stream(base_seed, index, 'global')
    mu_theta = rng.uniform(*config.mu_theta_range)
    lam = rng.uniform(*config.lambda_range)
    p_right = rng.uniform(*config.p_right_range)
    return ScenarioParams(base_seed=base_seed, index=index,
                          seed=derive_seed(base_seed, index),
                          mu_theta=float(mu_theta), lam=float(lam),
                          p_right_offset=float(p_right),
                          p_left_offset=config.p_left_offset)


def lognormal_parameters(mean: float, std: float) -> Tuple[float, float]:
    """ (mu, sigma) of the underlying normal for a log-normal with the given moments. """
    sigma2 = math.log1p((std / mean) ** 2)
    return math.log(mean) - 0.5 * sigma2, math.sqrt(sigma2)


def sample_fractures(params: ScenarioParams, grid: Grid,
                     config: ScenarioConfig = None) -> FractureField:
    config = config or ScenarioConfig()
    n = grid.n_quad
    theta = stream(params.seed, 'theta').normal(params.mu_theta, config.sigma_theta, n)
    count = stream(params.seed, 'count').poisson(params.lam, n)
    mu_l, sigma_l = lognormal_parameters(config.length_mean, config.length_std)
    length = stream(params.seed, 'length').lognormal(mu_l, sigma_l, n)
    mu_a, sigma_a = lognormal_parameters(config.aperture_mean, config.aperture_std)
    aperture = stream(params.seed, 'aperture').lognormal(mu_a, sigma_a, n)
    return FractureField(theta=theta, count=count.astype(np.int64),
                         length=length, aperture=aperture)


def conversion_matrix(theta) -> np.ndarray:
    """
    I - n n^T for fractures at `theta` degrees from +x, with unit normal
    n = (-sin, cos). Scalar input gives (2, 2), array input (..., 2, 2).
    """
    t = np.radians(np.asarray(theta, dtype=float))
    c, s = np.cos(t), np.sin(t)
    return np.stack([np.stack([c * c, s * c], -1),
                     np.stack([s * c, s * s], -1)], -2)


def _window_bounds(axis: np.ndarray, half: float) -> Tuple[np.ndarray, np.ndarray]:
    lo = np.searchsorted(axis, axis - half - WINDOW_TOL, side='left')
    hi = np.searchsorted(axis, axis + half + WINDOW_TOL, side='right')
    return lo, hi


def equivalent_permeability(fractures: FractureField, grid: Grid, rev: REVSpec,
                            det: DeterministicParams) -> PermeabilityField:
    """
    Upscale the point fractures into k_m = k_r I + sum_j(count a^3 l M) / (12 |Omega| V).

    Window sums over the quadrature lattice come from summed-area tables.
    A window cut by the domain boundary averages the points it still
    contains; it holds V_i / V of a full REV's fractures in a clipped measure
    V_i, so the clipped measure cancels and the full REV measure remains.
    """
    if len(fractures) != grid.n_quad:
        raise StonetError(f'fracture field has {len(fractures)} points, grid has {grid.n_quad}')

    weight = fractures.count * fractures.aperture ** 3 * fractures.length
    m = conversion_matrix(fractures.theta)
    rows, cols = grid.quad_lattice
    shape = (2 * grid.ny, 2 * grid.nx)

    xs, ys = grid.lattice_axes
    lo_c, hi_c = _window_bounds(xs, 0.5 * rev.window[0])
    lo_r, hi_r = _window_bounds(ys, 0.5 * rev.window[1])
    lo_c, hi_c = lo_c[cols], hi_c[cols]
    lo_r, hi_r = lo_r[rows], hi_r[rows]
    members = (hi_r - lo_r) * (hi_c - lo_c)
    if np.any(members <= 0):
        raise StonetError('empty REV window')

    def window_sum(values):
        lattice = np.zeros(shape)
        lattice[rows, cols] = values
        table = np.zeros((shape[0] + 1, shape[1] + 1))
        table[1:, 1:] = lattice.cumsum(axis=0).cumsum(axis=1)
        return (table[hi_r, hi_c] - table[lo_r, hi_c]
                - table[hi_r, lo_c] + table[lo_r, lo_c])

    scale = 1.0 / (12.0 * rev.volume * members)
    kxx = det.k_r + scale * window_sum(weight * m[:, 0, 0])
    kyy = det.k_r + scale * window_sum(weight * m[:, 1, 1])
    kxy = scale * window_sum(weight * m[:, 0, 1])
    return PermeabilityField(kxx=kxx, kyy=kyy, kxy=kxy)


def boundary_pressure_profiles(params: ScenarioParams, det: DeterministicParams) \
        -> Tuple[Callable, Callable]:
    """
    Hydrostatic Dirichlet profiles p(y) = offset + rho0 g y on the left and
    right boundaries, y measured downward from the top.
    """
    gradient = det.hydrostatic_gradient

    def left(y):
        return params.p_left_offset + gradient * np.asarray(y)

    def right(y):
        return params.p_right_offset + gradient * np.asarray(y)

    return left, right


def generate_scenario(base_seed: int, index: int, grid: Grid,
                      config: ScenarioConfig = None,
                      det: DeterministicParams = None) -> Scenario:
    config = config or ScenarioConfig()
    det = det or DeterministicParams()
    params = sample_scenario(base_seed, index, config)
    fractures = sample_fractures(params, grid, config)
    rev = REVSpec(window=tuple(config.rev_window))
    permeability = equivalent_permeability(fractures, grid, rev, det)
    logger.info('scenario %d: mu_theta=%.2f deg, lambda=%.2f, dp=%.2f Pa',
                index, params.mu_theta, params.lam, params.delta_p)
    return Scenario(params=params, fractures=fractures,
                    permeability=permeability, rev=rev)


def scenario_manifest(scenario: Scenario, grid: Grid) -> Dict:
    manifest = scenario.params.to_manifest()
    manifest['rev_window_m'] = list(scenario.rev.window)
    manifest['grid'] = grid.to_dict()
    return manifest
