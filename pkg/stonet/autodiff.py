"""
Reverse-mode differentiation for the operator networks.

Tensors are float64 `torch.Tensor`s of rank at most two (batch x features)
and torch's autograd runs the backward pass. This module fixes the small op
vocabulary the networks are written in (`ops_forward`), checks shapes with
errors that name both operands, and can record every op onto a `Tape` for
inspection. It also provides the dense layer, the Adam update and a
central-difference gradient check.

`ops_forward` is registered with `torch.fx.wrap`, so traced networks keep
each op as a single node that names its kind.
"""

from dataclasses import dataclass, field
import logging
import math
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from torch import nn
import torch.fx

from stonet.errors import GradientError, ShapeError

logger = logging.getLogger(__name__)

DTYPE = torch.float64

KINDS = ('matmul', 'add', 'sub', 'mul', 'tanh', 'concat', 'mse')
ELEMENTWISE = ('add', 'sub', 'mul')
ACTIVATIONS = ('tanh', 'linear')

# (offset in units of h, weight) for central first-derivative stencils
STENCILS = {
    2: ((1, 0.5), (-1, -0.5)),
    4: ((-2, 1.0 / 12.0), (-1, -8.0 / 12.0), (1, 8.0 / 12.0), (2, -1.0 / 12.0)),
}


@dataclass
class TapeNode:
    index: int
    kind: str
    input_shapes: Tuple[Tuple[int, ...], ...]
    output_shape: Tuple[int, ...]
    parents: Tuple[int, ...]


class Tape:
    """
    Records `ops_forward` calls made while it is active.

    Nodes are appended as ops run, so they are in topological order; a
    parent index of -1 marks an input that no recorded op produced (a leaf).
    """
    _active: List['Tape'] = []

    def __init__(self):
        self.nodes: List[TapeNode] = []
        self._producer: Dict[int, int] = {}
        self._outputs: List[torch.Tensor] = []

    def __enter__(self):
        Tape._active.append(self)
        return self

    def __exit__(self, *exc):
        Tape._active.pop()
        return False

    @classmethod
    def current(cls) -> Optional['Tape']:
        return cls._active[-1] if cls._active else None

    def record(self, kind: str, inputs: Sequence[torch.Tensor], output: torch.Tensor):
        index = len(self.nodes)
        parents = tuple(self._producer.get(id(t), -1) for t in inputs)
        self.nodes.append(TapeNode(index, kind, tuple(tuple(t.shape) for t in inputs),
                                   tuple(output.shape), parents))
        self._producer[id(output)] = index
        # keep outputs alive so their ids are not reused
        self._outputs.append(output)

    def is_acyclic(self) -> bool:
        return all(p < node.index for node in self.nodes for p in node.parents)

    def summary(self) -> List[Dict]:
        return [{'kind': n.kind, 'inputs': [list(s) for s in n.input_shapes],
                 'output': list(n.output_shape), 'parents': list(n.parents)}
                for n in self.nodes]


def _check_rank(kind, *tensors):
    for t in tensors:
        if t.dim() > 2:
            raise ShapeError(kind, *(t.shape for t in tensors))


def ops_forward(kind: str, *inputs: torch.Tensor) -> torch.Tensor:
    """
    Evaluate one op in float64 and record it on the active tape.

    Elementwise ops need equal shapes, except that a rank-1 operand whose
    length equals the feature axis broadcasts over the batch.
    """
    if kind not in KINDS:
        raise ValueError(f'unknown op {kind!r}, expected one of {KINDS}')
    _check_rank(kind, *inputs)

    if kind in ELEMENTWISE:
        a, b = inputs
        if a.shape != b.shape and not (b.dim() == 1 and a.dim() == 2 and b.shape[0] == a.shape[1]):
            raise ShapeError(kind, a.shape, b.shape)
        if kind == 'add':
            out = a + b
        elif kind == 'sub':
            out = a - b
        else:
            out = a * b
    elif kind == 'matmul':
        a, b = inputs
        if a.dim() != 2 or b.dim() != 2 or a.shape[1] != b.shape[0]:
            raise ShapeError(kind, a.shape, b.shape)
        out = a @ b
    elif kind == 'tanh':
        (a,) = inputs
        out = torch.tanh(a)
    elif kind == 'concat':
        batch = {t.shape[:-1] for t in inputs}
        if len(batch) != 1:
            raise ShapeError(kind, *(t.shape for t in inputs))
        out = torch.cat(inputs, dim=-1)
    else:
        pred, target = inputs
        if pred.shape != target.shape:
            raise ShapeError(kind, pred.shape, target.shape)
        out = torch.mean((pred - target) ** 2)

    tape = Tape.current()
    if tape is not None:
        tape.record(kind, inputs, out)
    return out


torch.fx.wrap('ops_forward')


def as_tensor(values, requires_grad: bool = False) -> torch.Tensor:
    t = torch.as_tensor(np.asarray(values, dtype=np.float64), dtype=DTYPE)
    return t.requires_grad_(requires_grad)


def glorot_uniform_(weight: torch.Tensor, generator: Optional[torch.Generator] = None):
    fan_out, fan_in = weight.shape
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    with torch.no_grad():
        weight.uniform_(-bound, bound, generator=generator)
    return weight


class DenseLayer(nn.Module):
    """
    One fully connected layer with an optional tanh.

    Parameters are float64; weights are Glorot-uniform from `generator`,
    biases start at zero.
    """

    def __init__(self, in_features: int, out_features: int, activation: str = 'tanh',
                 generator: Optional[torch.Generator] = None):
        super().__init__()
        if activation not in ACTIVATIONS:
            raise ValueError(f'unknown activation {activation!r}')
        self.activation = activation
        self.linear = nn.Linear(in_features, out_features, dtype=DTYPE)
        glorot_uniform_(self.linear.weight, generator)
        with torch.no_grad():
            self.linear.bias.zero_()

    @property
    def in_features(self) -> int:
        return self.linear.in_features

    @property
    def out_features(self) -> int:
        return self.linear.out_features

    def forward(self, x):
        y = self.linear(x)
        if self.activation == 'tanh':
            y = ops_forward('tanh', y)
        return y


def backward(loss: torch.Tensor, params: Sequence[torch.Tensor] = ()):
    """
    Populate `.grad` of everything `loss` depends on. Parameters in
    `params` that the loss does not reach get a zero gradient.
    """
    if loss.numel() != 1 or loss.dim() != 0:
        raise ShapeError('backward', loss.shape, ())
    loss.backward()
    for p in params:
        if p.grad is None:
            p.grad = torch.zeros_like(p)


def zero_grad(params: Sequence[torch.Tensor]):
    for p in params:
        p.grad = None


@dataclass
class AdamState:
    """
    Bias-corrected Adam over a fixed parameter list, backed by
    `torch.optim.Adam`. `weight_decay` adds an L2 term to the gradient.
    """
    params: List[torch.Tensor]
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    optimizer: torch.optim.Adam = field(init=False, repr=False)

    def __post_init__(self):
        self.params = list(self.params)
        self.optimizer = torch.optim.Adam(self.params, lr=self.lr,
                                          betas=(self.beta1, self.beta2), eps=self.eps,
                                          weight_decay=self.weight_decay, foreach=False)

    @property
    def step_count(self) -> int:
        state = self.optimizer.state.get(self.params[0], {})
        step = state.get('step', 0)
        return int(step.item() if torch.is_tensor(step) else step)

    def metadata(self) -> Dict:
        return {'optimizer': 'adam', 'lr': self.lr, 'beta1': self.beta1, 'beta2': self.beta2,
                'eps': self.eps, 'weight_decay': self.weight_decay, 'step': self.step_count}


def adam_step(params: Sequence[torch.Tensor], grads: Optional[Sequence[torch.Tensor]],
              state: AdamState):
    """
    Apply one Adam update. With `grads` None, the parameters' own `.grad`
    are used.

    :raises GradientError: on a non-finite gradient, before anything changes
    """
    params = list(params)
    grads = [p.grad for p in params] if grads is None else list(grads)
    if len(grads) != len(params):
        raise ShapeError('adam_step', (len(params),), (len(grads),))
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            continue
        if g.shape != p.shape:
            raise ShapeError('adam_step', p.shape, g.shape)
        if not torch.isfinite(g).all():
            raise GradientError(f'non-finite gradient for parameter {i} of shape {tuple(p.shape)}')
    for p, g in zip(params, grads):
        p.grad = None if g is None else g.detach().clone()
    state.optimizer.step()


def gradient_check(loss_fn: Callable[[], torch.Tensor], params: Sequence[torch.Tensor],
                   n_samples: int = 50, h: float = 1e-4, seed: int = 0,
                   floor: float = 1e-12, stencil: int = 4) -> float:
    """
    Compare autograd with central differences on `n_samples` randomly
    chosen scalar parameters.

    The default fourth-order stencil at h = 1e-4 keeps float64 rounding in
    the difference near 1e-12, so the relative error stays meaningful for
    small gradient entries. `stencil=2, h=1e-6` gives the plain two-point
    difference.

    :param loss_fn: recomputes the scalar loss from the current parameters
    :param floor: absolute floor of the relative-error denominator
    :param stencil: 2 or 4 points
    :return: the largest elementwise relative error |g - fd| / max(|g|, |fd|, floor)
    """
    if stencil not in STENCILS:
        raise ValueError(f'stencil must be one of {sorted(STENCILS)}, got {stencil}')
    weights = STENCILS[stencil]
    params = list(params)
    zero_grad(params)
    backward(loss_fn(), params)
    analytic = [p.grad.detach().clone() for p in params]

    rng = np.random.default_rng(seed)
    sizes = np.array([p.numel() for p in params])
    flat = rng.choice(int(sizes.sum()), size=min(n_samples, int(sizes.sum())), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    worst = 0.0
    with torch.no_grad():
        for f in flat:
            which = int(np.searchsorted(offsets, f, side='right') - 1)
            p = params[which].view(-1)
            i = int(f - offsets[which])
            original = p[i].item()
            numeric = 0.0
            for step, weight in weights:
                p[i] = original + step * h
                numeric += weight * loss_fn().item()
            p[i] = original
            numeric /= h
            exact = analytic[which].view(-1)[i].item()
            error = abs(exact - numeric) / max(abs(exact), abs(numeric), floor)
            worst = max(worst, error)
    zero_grad(params)
    return worst
