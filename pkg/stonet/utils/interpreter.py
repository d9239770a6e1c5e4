import logging
from typing import Callable, Dict, List, Optional, Tuple

import torch
from torch import nn
import torch.fx as fx

from stonet.autodiff import DenseLayer, ops_forward
from stonet.utils.converter import generate_description, generate_op_description
from stonet.utils.layer_descriptions import LayerDescription

logger = logging.getLogger(__name__)


class LayerTracer(fx.Tracer):
    """ Keeps each `DenseLayer` as a single call_module node. """

    def is_leaf_module(self, m: nn.Module, module_qualified_name: str) -> bool:
        return isinstance(m, DenseLayer) or super().is_leaf_module(m, module_qualified_name)


def trace(module: nn.Module) -> fx.GraphModule:
    graph = LayerTracer().trace(module)
    return fx.GraphModule(module, graph)


class Converter(fx.Interpreter):
    """
    Runs a traced network on sample inputs and collects a `LayerDescription`
    for every dense layer and every elementwise, concatenation and reduction
    op, in execution order, into `summary`.

    :param bypass: predicate on a module's qualified name; matching modules
        are left out of the summary and their output is treated as their
        input when wiring later descriptions
    """

    def __init__(self, module: fx.GraphModule, garbage_collect_values=True,
                 bypass: Optional[Callable[[str], bool]] = None):
        super().__init__(module, garbage_collect_values)
        self.name_to_module = dict(module.named_modules())
        self.summary: List[LayerDescription] = []
        self.bypass = bypass if bypass is not None else (lambda target: False)
        self.bypassed_arg_remap: Dict[str, str] = {}

    def _resolve(self, arg_name: str) -> str:
        while arg_name in self.bypassed_arg_remap:
            arg_name = self.bypassed_arg_remap[arg_name]
        return arg_name

    def run_node(self, n):
        with self._set_current_node(n):
            args, kwargs = self.fetch_args_kwargs_from_env(n)
            if n.op == 'call_module' or n.op == 'call_function':
                return getattr(self, n.op)(n.target, args, kwargs, n.name, n.args)
            return getattr(self, n.op)(n.target, args, kwargs)

    def call_module(self, target, args: Tuple, kwargs: Dict, name: str,
                    original_args: tuple):
        result = super().call_module(target, args, kwargs)
        module = self.name_to_module[target]

        if self.bypass(target):
            self.bypassed_arg_remap[f'{name}_out'] = f'{original_args[0].name}_out'
            return result

        arg_name = self._resolve(f'{original_args[0].name}_out')
        self.summary.append(generate_description(module, args[0], result, name, arg_name))
        return result

    def call_function(self, target, args, kwargs, name: str,
                      original_args: tuple):
        result = super().call_function(target, args, kwargs)

        if target is not ops_forward:
            logger.error('unknown function %s[type=%s]', name, target)
            raise NotImplementedError(f'cannot describe {target}')

        kind, inputs = args[0], args[1:]
        input_names = [self._resolve(f'{a.name}_out') for a in original_args[1:]]
        description = generate_op_description(kind, inputs, result, name, input_names)
        if description is not None:
            self.summary.append(description)
        elif kind == 'tanh':
            self.bypassed_arg_remap[f'{name}_out'] = input_names[0]
        return result


def describe(module: nn.Module, *sample_inputs: torch.Tensor,
             bypass: Optional[Callable[[str], bool]] = None) -> List[LayerDescription]:
    """
    Trace `module` and describe its layers by running it on `sample_inputs`.
    """
    converter = Converter(trace(module), bypass=bypass)
    with torch.no_grad():
        converter.run(*sample_inputs)
    return converter.summary
