"""
DeepONet, En-DeepONet and STONet.

All three encode the branch features u with a network B and the trunk query x
with a network T into `width`-dimensional embeddings, and differ in how the
two embeddings meet:

    deeponet     sum(B(u) * T(x)) + b
    endeeponet   R(concat(B * T, B + T, B - T))
    stonet       z0 = T(x); for every attention block
                     s_mul, s_add, s_sub = stream layers over (B * z, B + z, B - z)
                     z = z + fusion(concat(s_mul, s_add, s_sub))
                 R(z)

In `literal-chain` fusion the three streams start from the B/T combinations
and are carried from block to block instead of being recomputed from the
block state. The final dense layer of B, T and R is linear, every other
layer uses tanh.

`forward` works on normalized inputs and returns the normalized rate; the
model carries the dataset's normalization stats, and `predict` maps physical
inputs to a physical rate (1/h).
"""

from dataclasses import dataclass
import logging
from typing import List, Optional, Sequence

import numpy as np
import torch
from torch import nn
import torch.fx

from stonet.autodiff import DTYPE, DenseLayer, ops_forward
from stonet.dataset import NormalizationStats, PERMEABILITY_COLUMNS, TRUNK_COLUMNS, VELOCITY_COLUMNS
from stonet.errors import ConfigError, ShapeError
from stonet.utils.config import Config, require

logger = logging.getLogger(__name__)

torch.fx.wrap('ops_forward')

ARCHITECTURES = ('deeponet', 'endeeponet', 'stonet')
FUSION_MODES = ('reinject', 'literal-chain')


@dataclass
class OperatorConfig(Config):
    arch: str = 'stonet'
    width: int = 100
    branch_depth: int = 8
    trunk_depth: int = 8
    root_depth: int = 2
    blocks: int = 8
    fusion: str = 'reinject'
    residual: bool = True
    branch_minus_state: bool = True
    with_concentration: bool = False
    with_velocity: bool = False
    seed: int = 0

    def validate(self):
        require(self.arch in ARCHITECTURES, f'arch must be one of {ARCHITECTURES}, got {self.arch!r}')
        require(self.fusion in FUSION_MODES, f'fusion must be one of {FUSION_MODES}, got {self.fusion!r}')
        require(self.width > 0, 'width must be positive')
        require(self.branch_depth >= 1 and self.trunk_depth >= 1 and self.root_depth >= 1,
                'depths must be at least 1')
        require(self.blocks >= 0, 'blocks must be non-negative')

    @property
    def branch_features(self) -> int:
        return (len(PERMEABILITY_COLUMNS) + (len(VELOCITY_COLUMNS) if self.with_velocity else 0)
                + (1 if self.with_concentration else 0))

    @property
    def trunk_features(self) -> int:
        return len(TRUNK_COLUMNS)


def parameter_count(config: OperatorConfig, d_u: Optional[int] = None,
                    d_x: Optional[int] = None) -> int:
    """
    Closed-form trainable parameter count.

    :param d_u: branch feature count, defaults to the config's
    :param d_x: trunk feature count, defaults to 3
    """
    w = config.width
    d_u = config.branch_features if d_u is None else d_u
    d_x = config.trunk_features if d_x is None else d_x
    hidden = (w + 1) * w
    count = (d_u + 1) * w + (config.branch_depth - 1) * hidden
    count += (d_x + 1) * w + (config.trunk_depth - 1) * hidden
    if config.arch == 'deeponet':
        return count + 1
    if config.arch == 'endeeponet':
        if config.root_depth == 1:
            return count + 3 * w + 1
        return count + (3 * w + 1) * w + (config.root_depth - 2) * hidden + (w + 1)
    count += config.blocks * (3 * hidden + (3 * w + 1) * w)
    return count + (config.root_depth - 1) * hidden + (w + 1)


class MLP(nn.Module):
    """ Dense layers `sizes[0] -> ... -> sizes[-1]`, tanh inside, linear last. """

    def __init__(self, sizes: Sequence[int], generator: torch.Generator):
        super().__init__()
        n = len(sizes) - 1
        self.layers = nn.ModuleList([
            DenseLayer(sizes[i], sizes[i + 1], 'linear' if i == n - 1 else 'tanh', generator)
            for i in range(n)
        ])

    def forward(self, x):
        for layer in self.layers:
            x = layer(x)
        return x


def _sizes(d_in: int, width: int, d_out: int, depth: int) -> List[int]:
    return [d_in] + [width] * (depth - 1) + [d_out]


class OperatorNetwork(nn.Module):
    def __init__(self, config: OperatorConfig, stats: Optional[NormalizationStats] = None):
        super().__init__()
        self.config = config
        self.stats = stats
        generator = torch.Generator().manual_seed(config.seed)
        w = config.width
        self.branch = MLP(_sizes(config.branch_features, w, w, config.branch_depth), generator)
        self.trunk = MLP(_sizes(config.trunk_features, w, w, config.trunk_depth), generator)
        if self.branch.layers[-1].out_features != self.trunk.layers[-1].out_features:
            raise ShapeError('embedding', (self.branch.layers[-1].out_features,),
                             (self.trunk.layers[-1].out_features,))
        self.build_head(generator)

    def build_head(self, generator: torch.Generator):
        pass

    def subtract(self, branch, state):
        if self.config.branch_minus_state:
            return ops_forward('sub', branch, state)
        return ops_forward('sub', state, branch)

    def check_inputs(self, u: torch.Tensor, x: torch.Tensor):
        if u.dim() != 2 or u.shape[1] != self.config.branch_features:
            raise ShapeError('branch input', tuple(u.shape), (-1, self.config.branch_features))
        if x.dim() != 2 or x.shape[1] != self.config.trunk_features:
            raise ShapeError('trunk input', tuple(x.shape), (-1, self.config.trunk_features))
        if u.shape[0] != x.shape[0]:
            raise ShapeError('batch', tuple(u.shape), tuple(x.shape))

    def evaluate(self, u: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
        """ `forward` with input dimension checks. """
        self.check_inputs(u, x)
        return self(u, x)

    def _stats_tensor(self, group: str, attr: str) -> torch.Tensor:
        return torch.as_tensor(getattr(getattr(self.stats, group), attr), dtype=DTYPE)

    def branch_inputs(self, u: torch.Tensor, c_now: Optional[torch.Tensor]) -> torch.Tensor:
        if not self.config.with_concentration:
            return u
        if c_now is None:
            raise ConfigError('this model takes the current concentration as a branch feature')
        return torch.cat([u, c_now.reshape(-1, 1)], dim=1)

    def normalize_inputs(self, u, x, c_now=None):
        u_n = (u - self._stats_tensor('branch', 'mean')) / self._stats_tensor('branch', 'std')
        x_n = (x - self._stats_tensor('trunk', 'mean')) / self._stats_tensor('trunk', 'std')
        if c_now is not None:
            c_now = (c_now - self._stats_tensor('concentration', 'mean')) \
                / self._stats_tensor('concentration', 'std')
        return self.branch_inputs(u_n, c_now), x_n

    def predict_tensor(self, u: torch.Tensor, x: torch.Tensor,
                       c_now: Optional[torch.Tensor] = None) -> torch.Tensor:
        """
        Physical rate (1/h) of shape (batch,) for physical inputs, differentiable.
        Without stats the inputs are used as they are.
        """
        if self.stats is None:
            return self.evaluate(self.branch_inputs(u, c_now), x).reshape(-1)
        u_n, x_n = self.normalize_inputs(u, x, c_now)
        out = self.evaluate(u_n, x_n).reshape(-1)
        return out * self._stats_tensor('target', 'std') + self._stats_tensor('target', 'mean')

    def predict(self, u: np.ndarray, x: np.ndarray, c_now: Optional[np.ndarray] = None) -> np.ndarray:
        as_t = lambda a: None if a is None else torch.as_tensor(np.asarray(a, dtype=np.float64))
        with torch.no_grad():
            return self.predict_tensor(as_t(u), as_t(x), as_t(c_now)).numpy()

    def sample_inputs(self, batch: int = 2):
        return (torch.zeros(batch, self.config.branch_features, dtype=DTYPE),
                torch.zeros(batch, self.config.trunk_features, dtype=DTYPE))


class DeepONet(OperatorNetwork):
    def build_head(self, generator):
        self.bias = nn.Parameter(torch.zeros(1, dtype=DTYPE))
        self.register_buffer('ones', torch.ones(self.config.width, 1, dtype=DTYPE), persistent=False)

    def forward(self, u, x):
        product = ops_forward('mul', self.branch(u), self.trunk(x))
        return ops_forward('add', ops_forward('matmul', product, self.ones), self.bias)


class EnDeepONet(OperatorNetwork):
    def build_head(self, generator):
        w = self.config.width
        self.root = MLP(_sizes(3 * w, w, 1, self.config.root_depth), generator)

    def forward(self, u, x):
        b = self.branch(u)
        t = self.trunk(x)
        combined = ops_forward('concat', ops_forward('mul', b, t), ops_forward('add', b, t),
                               self.subtract(b, t))
        return self.root(combined)


class AttentionBlock(nn.Module):
    """ Three stream layers (mul, add, sub) and the fusion layer over their concatenation. """

    def __init__(self, width: int, generator: torch.Generator):
        super().__init__()
        self.streams = nn.ModuleDict({
            kind: DenseLayer(width, width, 'tanh', generator) for kind in ('mul', 'add', 'sub')
        })
        self.fusion = DenseLayer(3 * width, width, 'tanh', generator)


class STONet(OperatorNetwork):
    def build_head(self, generator):
        w = self.config.width
        self.blocks = nn.ModuleList([AttentionBlock(w, generator) for _ in range(self.config.blocks)])
        self.root = MLP(_sizes(w, w, 1, self.config.root_depth), generator)

    def _fuse(self, block, state, s_mul, s_add, s_sub):
        update = block.fusion(ops_forward('concat', s_mul, s_add, s_sub))
        if self.config.residual:
            return ops_forward('add', state, update)
        return update

    def forward(self, u, x):
        b = self.branch(u)
        z = self.trunk(x)
        if self.config.fusion == 'literal-chain':
            s_mul = ops_forward('mul', b, z)
            s_add = ops_forward('add', b, z)
            s_sub = self.subtract(b, z)
            for block in self.blocks:
                s_mul = block.streams['mul'](s_mul)
                s_add = block.streams['add'](s_add)
                s_sub = block.streams['sub'](s_sub)
                z = self._fuse(block, z, s_mul, s_add, s_sub)
        else:
            for block in self.blocks:
                s_mul = block.streams['mul'](ops_forward('mul', b, z))
                s_add = block.streams['add'](ops_forward('add', b, z))
                s_sub = block.streams['sub'](self.subtract(b, z))
                z = self._fuse(block, z, s_mul, s_add, s_sub)
        return self.root(z)


_MODELS = {'deeponet': DeepONet, 'endeeponet': EnDeepONet, 'stonet': STONet}


def build_operator(config: OperatorConfig, stats: Optional[NormalizationStats] = None) -> OperatorNetwork:
    config.validate()
    model = _MODELS[config.arch](config, stats)
    logger.info('built %s: width %d, %d parameters', config.arch, config.width,
                sum(p.numel() for p in model.parameters()))
    return model


def forward_endeeponet(model: OperatorNetwork, u: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
    if not isinstance(model, EnDeepONet):
        raise ConfigError(f'expected an endeeponet model, got {model.config.arch}')
    return model.evaluate(u, x)


def forward_stonet(model: OperatorNetwork, u: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
    if not isinstance(model, STONet):
        raise ConfigError(f'expected a stonet model, got {model.config.arch}')
    return model.evaluate(u, x)
