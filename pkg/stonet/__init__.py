from ._version import __version__
from .scenario import generate_scenario, sample_scenario, equivalent_permeability
from .simulator.run import run_simulation
from .dataset import build_dataset, read_dataset, write_dataset
from .operator import (
    OperatorConfig,
    build_operator,
    load_checkpoint,
    parameter_count,
    rollout,
    save_checkpoint,
)
from .harness import TrainConfig, evaluate, sweep, train
