"""
A layer description is one node of an operator network as a Python dataclass.

Descriptions are produced by interpreting a traced network (see
`interpreter.py`) and are used three ways: to enumerate parameters, to compare
the layer graphs of two architectures, and to document a checkpoint's
architecture in `model.json`. Each description names the tensors it reads
(`input_names`) and the tensor it writes (`output_name`), so a list of
descriptions is a dataflow graph.

`to_yaml` starts from a packaged template (`templates/<problem_template>.yaml`)
and fills in the fields of the concrete description.
"""
from dataclasses import dataclass, field
import pkgutil
from typing import Dict, List, Sequence, Tuple

import yaml


@dataclass
class LayerDescription:
    name: str
    input_names: List[str]
    output_name: str

    problem_template = None

    @property
    def n_parameters(self) -> int:
        return 0

    def get_template(self) -> Dict:
        f = pkgutil.get_data('stonet', f'utils/templates/{self.problem_template}.yaml')
        return yaml.load(f, Loader=yaml.SafeLoader)

    def attributes(self) -> Dict:
        return {}

    def signature(self) -> Tuple:
        """ What must agree for two nodes to be considered the same layer. """
        return (self.problem_template,) + tuple(sorted(self.attributes().items()))

    def to_yaml(self) -> Dict:
        config = self.get_template()
        layer = config['layer']
        layer['name'] = self.name
        layer['inputs'] = list(self.input_names)
        layer['output'] = self.output_name
        layer.update(self.attributes())
        return config


@dataclass
class DenseLayerDescription(LayerDescription):
    in_features: int
    out_features: int
    activation: str
    batch: int = 0

    problem_template = 'dense'

    @property
    def n_parameters(self) -> int:
        return (self.in_features + 1) * self.out_features

    def attributes(self):
        return {'in_features': self.in_features, 'out_features': self.out_features,
                'activation': self.activation}

    def to_yaml(self):
        config = super().to_yaml()
        config['layer']['parameters'] = self.n_parameters
        return config


@dataclass
class ElementwiseFuncDescription(LayerDescription):
    kind: str
    input1_shape: Sequence[int]
    input2_shape: Sequence[int]
    output_shape: Sequence[int]

    problem_template = 'elementwise'

    def attributes(self):
        return {'op': self.kind, 'features': int(self.output_shape[-1])}


@dataclass
class ConcatFuncDescription(LayerDescription):
    input_features: List[int] = field(default_factory=list)

    problem_template = 'concat'

    def attributes(self):
        return {'input_features': tuple(self.input_features)}

    def to_yaml(self):
        config = super().to_yaml()
        config['layer']['input_features'] = list(self.input_features)
        return config


@dataclass
class ReductionFuncDescription(LayerDescription):
    """ A product with a constant, such as the feature-axis sum of DeepONet. """
    input1_shape: Sequence[int] = ()
    input2_shape: Sequence[int] = ()

    problem_template = 'reduction'

    def attributes(self):
        return {'contract': int(self.input1_shape[-1]), 'out': int(self.input2_shape[-1])}


def total_parameters(descriptions: Sequence[LayerDescription]) -> int:
    return sum(d.n_parameters for d in descriptions)


def graph_signature(descriptions: Sequence[LayerDescription]) -> List[Tuple]:
    """
    Canonical form of a description list: layer names are replaced by the
    position of the producing layer (or by the graph input's name), so two
    networks built from different module names compare equal when their
    layers and wiring agree.
    """
    position = {d.output_name: i for i, d in enumerate(descriptions)}
    canonical = []
    for d in descriptions:
        sources = tuple(position.get(n, n) for n in d.input_names)
        canonical.append(d.signature() + (sources,))
    return canonical
