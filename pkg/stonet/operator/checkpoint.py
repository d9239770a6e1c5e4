"""
Checkpoints: `model.json` plus `weights.bin`.

`weights.bin` holds every trainable parameter as little-endian float64, in
the order of `model.named_parameters()`, each flattened row-major. The order,
shapes and element offsets are listed under `parameters` in `model.json`,
next to the operator config, the normalization stats, the optimizer
metadata and the layer-by-layer architecture.
"""

import logging
import os
from pathlib import Path
from typing import Dict, Optional

import numpy as np
import torch

from stonet._version import __version__
from stonet.autodiff import AdamState, DTYPE
from stonet.dataset import NormalizationStats
from stonet.errors import DatasetFormatError
from stonet.operator.networks import OperatorConfig, OperatorNetwork, build_operator
from stonet.utils.arrayio import read_array, read_json, write_array, write_json
from stonet.utils.interpreter import describe

logger = logging.getLogger(__name__)

MODEL_FILE = 'model.json'
WEIGHTS_FILE = 'weights.bin'


def parameter_layout(model: OperatorNetwork):
    layout = []
    offset = 0
    for name, p in model.named_parameters():
        layout.append({'name': name, 'shape': list(p.shape), 'offset': offset})
        offset += p.numel()
    return layout, offset


def architecture(model: OperatorNetwork):
    return [d.to_yaml()['layer'] for d in describe(model, *model.sample_inputs())]


def save_checkpoint(model: OperatorNetwork, directory, optimizer: Optional[AdamState] = None,
                    extra: Optional[Dict] = None) -> Path:
    directory = Path(directory)
    os.makedirs(directory, exist_ok=True)

    layout, total = parameter_layout(model)
    weights = np.concatenate([p.detach().numpy().ravel() for p in model.parameters()]) \
        if total else np.zeros(0)
    write_array(directory / WEIGHTS_FILE, weights)
    write_json(directory / MODEL_FILE, {
        'version': __version__,
        'config': model.config.to_dict(),
        'stats': None if model.stats is None else model.stats.to_dict(),
        'optimizer': None if optimizer is None else optimizer.metadata(),
        'weights': {'file': WEIGHTS_FILE, 'dtype': '<f8', 'n_values': total},
        'parameters': layout,
        'architecture': architecture(model),
        'extra': extra or {},
    })
    logger.info('checkpoint written to %s (%d parameters)', directory, total)
    return directory


def load_checkpoint(directory) -> OperatorNetwork:
    directory = Path(directory)
    meta = read_json(directory / MODEL_FILE)
    for key in ('config', 'parameters', 'weights'):
        if key not in meta:
            raise DatasetFormatError(f'{directory / MODEL_FILE} is missing {key!r}')
    config = OperatorConfig.from_dict(meta['config'])
    stats = None if meta.get('stats') is None else NormalizationStats.from_dict(meta['stats'])
    model = build_operator(config, stats)

    layout, total = parameter_layout(model)
    if [(e['name'], e['shape']) for e in layout] != \
            [(e['name'], list(e['shape'])) for e in meta['parameters']]:
        raise DatasetFormatError(f'parameter layout in {directory} does not match a {config.arch} model')
    weights = read_array(directory / WEIGHTS_FILE, (total,))
    with torch.no_grad():
        for entry, p in zip(layout, model.parameters()):
            chunk = weights[entry['offset']:entry['offset'] + p.numel()]
            p.copy_(torch.as_tensor(chunk.reshape(p.shape), dtype=DTYPE))
    return model


def read_model_meta(directory) -> Dict:
    return read_json(Path(directory) / MODEL_FILE)
