"""
Acceptance checks for a desk-scale reproduction.

Each check returns a `CheckResult` with the measured value, the threshold it
was held to and the time it took. The physics and differentiation oracles
run on their own; the rest read the artifacts of a pipeline run.
"""

from dataclasses import dataclass, replace
import logging
import math
import time
from typing import Callable, Dict, Optional, Sequence

import numpy as np
import scipy.special
import torch

from stonet.autodiff import DTYPE, gradient_check, ops_forward
from stonet.dataset import concentration_rate
from stonet.operator.networks import OperatorConfig, build_operator
from stonet.operator.rollout import unroll
from stonet.scenario import (
    DeterministicParams,
    PermeabilityField,
    REVSpec,
    ScenarioConfig,
    WINDOW_TOL,
    boundary_pressure_profiles,
    conversion_matrix,
    equivalent_permeability,
    generate_scenario,
    sample_fractures,
    sample_scenario
)
from stonet.simulator.grid import Grid
from stonet.simulator.pressure import solve_pressure
from stonet.simulator.run import SECONDS_PER_HOUR, SolverConfig
from stonet.simulator.store import SnapshotDirectory
from stonet.simulator.transport import TransportBoundary, step_transport
from stonet.utils.rng import stream

logger = logging.getLogger(__name__)


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    threshold: float
    detail: str = ''
    seconds: float = 0.0
    skipped: bool = False

    @property
    def status(self) -> str:
        if self.skipped:
            return 'skipped'
        return 'pass' if self.passed else 'FAIL'

    def to_dict(self) -> Dict:
        value = self.value if math.isfinite(self.value) else None
        return {'name': self.name, 'passed': bool(self.passed), 'value': value,
                'threshold': self.threshold, 'detail': self.detail,
                'seconds': round(self.seconds, 3), 'status': self.status}


def run_check(name: str, fn: Callable[[], CheckResult]) -> CheckResult:
    """ Time `fn`; an exception becomes a failed check. """
    started = time.perf_counter()
    try:
        result = fn()
    except Exception as e:
        logger.exception('check %s raised', name)
        result = CheckResult(name, False, float('nan'), float('nan'), f'{type(e).__name__}: {e}')
    result.name = name
    result.seconds = time.perf_counter() - started
    logger.info('check %s: %s (%s)', name, result.status, result.detail)
    return result


def brute_force_permeability(fractures, grid: Grid, rev: REVSpec,
                             det: DeterministicParams) -> np.ndarray:
    """ Window averages by a double loop over quadrature points, (n_quad, 3). """
    points = grid.quad_points
    m = conversion_matrix(fractures.theta)
    weight = fractures.count * fractures.aperture ** 3 * fractures.length
    hx, hy = 0.5 * rev.window[0] + WINDOW_TOL, 0.5 * rev.window[1] + WINDOW_TOL
    out = np.empty((len(points), 3))
    for i, (xi, yi) in enumerate(points):
        total = np.zeros((2, 2))
        members = 0
        for j, (xj, yj) in enumerate(points):
            if abs(xj - xi) <= hx and abs(yj - yi) <= hy:
                total += weight[j] * m[j]
                members += 1
        k = det.k_r * np.eye(2) + total / (12.0 * rev.volume * members)
        out[i] = k[0, 0], k[1, 1], k[0, 1]
    return out


def check_permeability_oracle(seeds: Sequence[int] = range(5), grid: Grid = Grid(10, 10),
                              tol: float = 1e-18) -> CheckResult:
    det = DeterministicParams()
    config = ScenarioConfig()
    worst = 0.0
    for seed in seeds:
        params = sample_scenario(seed, 0, config)
        fractures = sample_fractures(params, grid, config)
        rev = REVSpec(window=tuple(config.rev_window))
        fast = equivalent_permeability(fractures, grid, rev, det).as_array()
        slow = brute_force_permeability(fractures, grid, rev, det)
        worst = max(worst, float(np.max(np.abs(fast - slow))))
    return CheckResult('permeability_oracle', worst <= tol, worst, tol,
                       f'max |k_fast - k_loop| over {len(seeds)} seeds = {worst:.3e} m^2')


def check_hydrostatic(seeds: Sequence[int] = range(5), grid: Grid = Grid(35, 25),
                      tol: float = 1e-12) -> CheckResult:
    det = DeterministicParams()
    worst = 0.0
    for seed in seeds:
        scenario = generate_scenario(seed, 0, grid, det=det)
        params = replace(scenario.params, p_right_offset=scenario.params.p_left_offset)
        solution = solve_pressure(np.zeros(grid.n_nodes), scenario.permeability,
                                  boundary_pressure_profiles(params, det), grid, det)
        worst = max(worst, float(np.max(np.abs(solution.v))))
    return CheckResult('hydrostatic_no_flow', worst < tol, worst, tol,
                       f'max |v| = {worst:.3e} m/s')


def manufactured_pressure_error(grid: Grid, det: DeterministicParams = None,
                                amplitude: float = 10.0, kxx: float = 2e-11,
                                kyy: float = 5e-12) -> float:
    """
    L2 error of the pressure solve against

        p' = A cos(pi y / Ly) (sin(pi x / Lx) + x / Lx)

    with a constant diagonal permeability and the matching source. The
    profile has zero normal derivative on the no-flow boundaries.
    """
    det = det or DeterministicParams()
    lx, ly = grid.lx, grid.ly
    ax, ay = math.pi / lx, math.pi / ly

    def exact(x, y):
        return amplitude * np.cos(ay * y) * (np.sin(ax * x) + x / lx)

    def source(x, y):
        return amplitude * np.cos(ay * y) / det.mu * (
            kxx * ax ** 2 * np.sin(ax * x) + kyy * ay ** 2 * (np.sin(ax * x) + x / lx))

    n = grid.n_quad
    k_field = PermeabilityField(kxx=np.full(n, kxx), kyy=np.full(n, kyy), kxy=np.zeros(n))
    gradient = det.hydrostatic_gradient
    bc = (lambda y: gradient * np.asarray(y) + exact(0.0, np.asarray(y)),
          lambda y: gradient * np.asarray(y) + exact(lx, np.asarray(y)))
    solution = solve_pressure(np.zeros(grid.n_nodes), k_field, bc, grid, det,
                              source=source, rtol=1e-12)
    perturbation = solution.p - gradient * grid.nodes[:, 1]
    return grid.l2_error(perturbation, exact)


def check_pressure_convergence(grids: Sequence[Grid] = (Grid(35, 25), Grid(70, 50), Grid(140, 100)),
                               expected: float = 2.0, tol: float = 0.3) -> CheckResult:
    errors = [manufactured_pressure_error(g) for g in grids]
    orders = [math.log2(errors[i] / errors[i + 1]) for i in range(len(errors) - 1)]
    worst = max(abs(o - expected) for o in orders)
    return CheckResult('pressure_convergence', worst <= tol, float(np.mean(orders)), expected,
                       'L2 errors ' + ', '.join(f'{e:.3e}' for e in errors)
                       + '; orders ' + ', '.join(f'{o:.2f}' for o in orders))


def diffusion_profile_error(grid: Grid = Grid(70, 50), t0_h: float = 12.0, span_h: float = 4.0,
                            dt: float = 1200.0, det: DeterministicParams = None) -> float:
    """
    Pure diffusion from a left boundary held at c = 1, started from the
    analytic profile erfc(x / (2 sqrt(D t))) at `t0_h` and advanced by
    `span_h`. Returns the relative discrete L2 error of the nodal profile.
    """
    det = det or DeterministicParams()
    diffusivity = det.tau * det.D_mol
    x = grid.nodes[:, 0]

    def profile(t_h):
        return scipy.special.erfc(x / (2.0 * math.sqrt(diffusivity * t_h * SECONDS_PER_HOUR)))

    left = grid.boundary_nodes('left')
    boundary = TransportBoundary(nodes=left, values=np.ones(len(left)))
    v = np.zeros((grid.n_quad, 2))
    rho = np.full(grid.n_quad, det.rho0)
    c = profile(t0_h)
    for _ in range(int(round(span_h * SECONDS_PER_HOUR / dt))):
        c = step_transport(c, v, rho, grid, det, dt, boundary=boundary, supg=False).c
    exact = profile(t0_h + span_h)
    return float(np.linalg.norm(c - exact) / np.linalg.norm(exact))


def check_diffusion(tol: float = 0.02) -> CheckResult:
    error = diffusion_profile_error()
    return CheckResult('transport_diffusion', error <= tol, error, tol,
                       f'relative L2 error {error:.3e} after 4 h')


def check_balance(snapshots: Sequence[SnapshotDirectory], tol: float = 1e-8) -> CheckResult:
    errors = [e for snap in snapshots for e in snap.meta['diagnostics']['balance_errors']]
    worst = max(errors)
    return CheckResult('solute_balance', worst <= tol, worst, tol,
                       f'{len(errors)} steps over {len(snapshots)} simulation(s)')


def check_bookkeeping(grid: Grid = Grid(70, 50), config: SolverConfig = None) -> CheckResult:
    config = config or SolverConfig()
    observed = (grid.n_elements, grid.n_nodes, config.n_steps, config.dt,
                tuple(config.record_times_h))
    expected = (3500, 3621, 108, 1200.0, tuple(float(4 * k) for k in range(10)))
    return CheckResult('bookkeeping', observed == expected, float(config.n_steps), 108.0,
                       f'{observed[0]} elements, {observed[1]} nodes, {observed[2]} steps of '
                       f'{observed[3]:g} s, snapshots {list(observed[4])}')


def gradient_error(arch: str, width: int = 16, batch: int = 32, seed: int = 0) -> float:
    config = OperatorConfig(arch=arch, width=width, branch_depth=2, trunk_depth=2,
                            root_depth=2, blocks=2, seed=seed)
    model = build_operator(config)
    rng = stream(seed, arch, 'gradient-check')
    u = torch.as_tensor(rng.normal(size=(batch, config.branch_features)), dtype=DTYPE)
    x = torch.as_tensor(rng.normal(size=(batch, config.trunk_features)), dtype=DTYPE)
    y = torch.as_tensor(rng.normal(size=(batch, 1)), dtype=DTYPE)
    return gradient_check(lambda: ops_forward('mse', model(u, x), y), list(model.parameters()),
                          n_samples=50, seed=seed)


def check_gradients(tol: float = 1e-6) -> CheckResult:
    errors = {arch: gradient_error(arch) for arch in ('deeponet', 'endeeponet', 'stonet')}
    worst = max(errors.values())
    return CheckResult('gradient_check', worst < tol, worst, tol,
                       ', '.join(f'{a} {e:.2e}' for a, e in errors.items()))


def rollout_identity_error(snap: SnapshotDirectory) -> float:
    series = snap.series
    rates = concentration_rate(series)
    states = unroll(lambda c, k: rates[k - 1], series.c[0].copy(), series.times_h)
    return float(np.max(np.abs(np.stack(states) - series.c)))


def check_rollout_identity(snapshots: Sequence[SnapshotDirectory], tol: float = 1e-12) -> CheckResult:
    worst = max(rollout_identity_error(s) for s in snapshots)
    return CheckResult('rollout_identity', worst <= tol, worst, tol,
                       f'max |c_rollout - c_fem| = {worst:.3e}')


def check_architecture_trend(win_fraction: float, n_pairs: int, threshold: float = 0.7) -> CheckResult:
    return CheckResult('architecture_trend', n_pairs > 0 and win_fraction >= threshold,
                       win_fraction, threshold,
                       f'STONet at or below En-DeepONet in {win_fraction:.0%} of {n_pairs} matched pairs')


def check_relative_error(mean_relative_error: float, threshold: float = 0.10) -> CheckResult:
    return CheckResult('rollout_relative_error', mean_relative_error <= threshold,
                       mean_relative_error, threshold,
                       f'mean relative rollout error {mean_relative_error:.4f}')


def check_speedup(simulation_seconds: float, rollout_seconds: float, threshold: float = 10.0) -> CheckResult:
    speedup = simulation_seconds / max(rollout_seconds, 1e-9)
    return CheckResult('speedup', speedup >= threshold, speedup, threshold,
                       f'FEM {simulation_seconds:.2f} s vs rollout {rollout_seconds:.4f} s')


def check_flatness(metrics, early_h: float = 8.0, late_h: float = 36.0, factor: float = 3.0) -> CheckResult:
    early = metrics.relative_error_at(early_h)
    late = metrics.relative_error_at(late_h)
    ratio = late / early if early > 0 else float('inf')
    return CheckResult('relative_error_flatness', ratio <= factor, ratio, factor,
                       f'mean relative error {early:.4f} at {early_h:g} h, {late:.4f} at {late_h:g} h')


def check_determinism(digests: Dict[str, str], previous: Optional[Dict[str, str]]) -> CheckResult:
    if not previous:
        return CheckResult('determinism', False, 0.0, 0.0,
                           'no previous run in this directory; digests recorded for the next one',
                           skipped=True)
    changed = sorted(k for k in digests if k in previous and previous[k] != digests[k])
    compared = sorted(k for k in digests if k in previous)
    return CheckResult('determinism', not changed and bool(compared), float(len(changed)), 0.0,
                       f'{len(compared)} artifacts compared, changed: {changed or "none"}')


def all_passed(results: Sequence[CheckResult]) -> bool:
    """ True when no check failed; skipped checks do not count either way. """
    return all(r.passed or r.skipped for r in results)
