from stonet.operator.networks import (
    OperatorConfig,
    OperatorNetwork,
    DeepONet,
    EnDeepONet,
    STONet,
    build_operator,
    forward_endeeponet,
    forward_stonet,
    parameter_count
)
from stonet.operator.rollout import RolloutResult, rollout, unroll
from stonet.operator.checkpoint import load_checkpoint, save_checkpoint
