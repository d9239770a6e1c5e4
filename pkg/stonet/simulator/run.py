"""
The coupled time loop: density from the current concentration, then the
pressure solve, then one implicit transport step.
"""

from dataclasses import dataclass, field
import logging
import time
from typing import Dict, List, Tuple

import numpy as np

from stonet.errors import SolverError
from stonet.scenario import DeterministicParams, Scenario, boundary_pressure_profiles
from stonet.simulator.grid import Grid
from stonet.simulator.pressure import solve_pressure
from stonet.simulator.transport import source_boundary, step_transport
from stonet.utils.config import Config, require

logger = logging.getLogger(__name__)

SECONDS_PER_HOUR = 3600.0


@dataclass
class SolverConfig(Config):
    dt: float = 1200.0
    t_end: float = 129600.0
    record_every: float = 14400.0
    pressure_rtol: float = 1e-10
    transport_rtol: float = 1e-13
    supg: bool = True
    source_band: Tuple[float, float] = (0.20, 0.30)
    coupling_iterations: int = 1
    coupling_tol: float = 1e-8

    def validate(self):
        require(self.dt > 0, f'dt must be positive, got {self.dt}')
        for name in ('t_end', 'record_every'):
            ratio = getattr(self, name) / self.dt
            require(abs(ratio - round(ratio)) < 1e-9 and round(ratio) >= 1,
                    f'{name} must be a positive multiple of dt')
        ratio = self.t_end / self.record_every
        require(abs(ratio - round(ratio)) < 1e-9, 't_end must be a multiple of record_every')
        require(1 <= self.coupling_iterations <= 5, 'coupling_iterations must be in [1, 5]')
        require(self.source_band[0] <= self.source_band[1], 'source_band must be ordered')

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    @property
    def steps_per_record(self) -> int:
        return int(round(self.record_every / self.dt))

    @property
    def record_times_h(self) -> List[float]:
        n = int(round(self.t_end / self.record_every))
        return [k * self.record_every / SECONDS_PER_HOUR for k in range(n + 1)]


@dataclass
class TimeSeries:
    """
    Snapshots of one simulation.

    :param times_h: recorded times in hours, (K,)
    :param c: nodal mass fraction, (K, n_nodes)
    :param p: nodal pressure, (K, n_nodes)
    :param v: quadrature velocity, (K, n_quad, 2)
    """
    times_h: np.ndarray
    c: np.ndarray
    p: np.ndarray
    v: np.ndarray
    scenario: Dict = field(default_factory=dict)
    diagnostics: Dict = field(default_factory=dict)
    wall_time_s: float = 0.0

    def __len__(self):
        return len(self.times_h)


def run_simulation(scenario: Scenario, grid: Grid, config: SolverConfig = None,
                   det: DeterministicParams = None) -> TimeSeries:
    """
    Simulate one scenario from c = 0 and record snapshots every
    `config.record_every` seconds.

    :raises SolverError: with the failing step index
    """
    config = config or SolverConfig()
    det = det or DeterministicParams()
    bc = boundary_pressure_profiles(scenario.params, det)
    boundary = source_boundary(grid, config.source_band)
    k_field = scenario.permeability
    started = time.perf_counter()

    def pressure(c, step):
        try:
            return solve_pressure(c, k_field, bc, grid, det, rtol=config.pressure_rtol)
        except SolverError as e:
            raise SolverError(f'pressure solve failed: {e}', e.residuals, step=step) from e

    c = np.zeros(grid.n_nodes)
    current = pressure(c, 0)
    times, cs, ps, vs = [0.0], [c.copy()], [current.p], [current.v]
    pressure_residuals, balance_errors, overshoot = [], [], 0.0
    coupling_changes = []

    for step in range(1, config.n_steps + 1):
        rho_old = current.rho
        flow = current
        c_iter = c
        changes = []
        for iteration in range(config.coupling_iterations):
            if iteration > 0:
                flow = pressure(c_iter, step)
            try:
                result = step_transport(c, flow.v, flow.rho, grid, det, config.dt,
                                        boundary=boundary, rho_old=rho_old,
                                        supg=config.supg, rtol=config.transport_rtol)
            except SolverError as e:
                raise SolverError(f'transport solve failed: {e}', e.residuals, step=step) from e
            change = float(np.max(np.abs(result.c - c_iter)))
            c_iter = result.c
            if iteration > 0:
                changes.append(change)
                if change < config.coupling_tol:
                    break
        coupling_changes.append(changes)

        c = result.c
        pressure_residuals.append(flow.residual)
        balance_errors.append(result.balance.relative_error)
        overshoot = max(overshoot, float(np.max(c)) - 1.0, -float(np.min(c)))
        current = pressure(c, step)

        if step % config.steps_per_record == 0:
            times.append(step * config.dt / SECONDS_PER_HOUR)
            cs.append(c.copy())
            ps.append(current.p)
            vs.append(current.v)
            logger.debug('step %d: t=%.1f h, max c=%.4f', step, times[-1], float(np.max(c)))

    elapsed = time.perf_counter() - started
    logger.info('simulated scenario %s: %d steps, %d snapshots in %.2f s',
                scenario.params.index, config.n_steps, len(times), elapsed)
    diagnostics = {
        'n_steps': config.n_steps,
        'pressure_residuals': pressure_residuals,
        'balance_errors': balance_errors,
        'max_overshoot': overshoot,
    }
    if config.coupling_iterations > 1:
        # max |c| correction of each extra pass, per step
        diagnostics['coupling_changes'] = coupling_changes
    return TimeSeries(times_h=np.array(times), c=np.stack(cs), p=np.stack(ps),
                      v=np.stack(vs), scenario=scenario.params.to_manifest(),
                      diagnostics=diagnostics, wall_time_s=elapsed)
