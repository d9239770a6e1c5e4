"""
Descriptions for the module and function nodes of a traced operator network.

`generate_description` dispatches on the module type; register a new layer
type with `@generate_description.register(MyModule)`. Function nodes are the
`ops_forward` calls of `stonet.autodiff`, described by `generate_op_description`
according to their op kind.
"""

from functools import singledispatch
import logging
from typing import Optional, Sequence

import torch
import torch.nn as nn

from stonet.autodiff import DenseLayer
from stonet.utils.layer_descriptions import (
    ConcatFuncDescription,
    DenseLayerDescription,
    ElementwiseFuncDescription,
    LayerDescription,
    ReductionFuncDescription
)

logger = logging.getLogger(__name__)


@singledispatch
def generate_description(module,
                         input: torch.Tensor,
                         output: torch.Tensor,
                         name: str,
                         ifmap_name: str):
    raise NotImplementedError(f'not implemented for {type(module)}')


@generate_description.register(DenseLayer)
def _(module, input, output, name, ifmap_name):
    return DenseLayerDescription(
        name=name,
        input_names=[ifmap_name],
        output_name=f'{name}_out',
        in_features=module.in_features,
        out_features=module.out_features,
        activation=module.activation,
        batch=input.shape[0]
    )


@generate_description.register(nn.Linear)
def _(module, input, output, name, ifmap_name):
    return DenseLayerDescription(
        name=name,
        input_names=[ifmap_name],
        output_name=f'{name}_out',
        in_features=module.in_features,
        out_features=module.out_features,
        activation='linear',
        batch=input.shape[0]
    )


def generate_op_description(kind: str,
                            inputs: Sequence[torch.Tensor],
                            output: torch.Tensor,
                            name: str,
                            input_names: Sequence[Optional[str]]) -> Optional[LayerDescription]:
    """
    Describe one `ops_forward` call. `tanh` applied outside a dense layer
    and the loss are not layers and give None.
    """
    if kind in ('add', 'sub', 'mul'):
        return ElementwiseFuncDescription(
            name=name,
            input_names=list(input_names),
            output_name=f'{name}_out',
            kind=kind,
            input1_shape=tuple(inputs[0].shape),
            input2_shape=tuple(inputs[1].shape),
            output_shape=tuple(output.shape)
        )
    if kind == 'concat':
        return ConcatFuncDescription(
            name=name,
            input_names=list(input_names),
            output_name=f'{name}_out',
            input_features=[int(t.shape[-1]) for t in inputs]
        )
    if kind == 'matmul':
        return ReductionFuncDescription(
            name=name,
            input_names=list(input_names),
            output_name=f'{name}_out',
            input1_shape=tuple(inputs[0].shape),
            input2_shape=tuple(inputs[1].shape)
        )
    logger.debug('no description for op %s (%s)', name, kind)
    return None
