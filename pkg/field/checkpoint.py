"""Saving and loading trained local fields."""
import logging
from pathlib import Path

import numpy as np
import torch

from core.exceptions import CheckpointError

from .features import FeatureStore
from .implicit import NeuralField
from .network import Architecture, NetworkParams

logger = logging.getLogger(__name__)

FORMAT = 'implicitnav-field'
VERSION = 1


def save_field(field, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    store = field.store
    payload = {
        'format': FORMAT,
        'version': VERSION,
        'architecture': field.params.architecture.as_dict(),
        'theta': field.params.decoder.state_dict(),
        'ewc_anchor': field.params.ewc_anchor,
        'ewc_importance': field.params.ewc_importance,
        'ewc_count': int(field.params.ewc_count),
        'frozen': bool(field.frozen),
        'store': {
            'voxel_size': store.voxel_size,
            'neighbors': store.neighbors,
            'positions': torch.from_numpy(store.positions.copy()),
            'colors': torch.from_numpy(store.colors.copy()),
            'labels': torch.from_numpy(store.labels.astype(np.int64)),
            'features': store.features.detach().clone(),
        },
    }
    torch.save(payload, path)
    logger.debug(f'Saved field with {len(store)} map points to {path}')
    return path


def load_field(path):
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f'Checkpoint {path} does not exist')
    try:
        payload = torch.load(path, weights_only=True)
    except Exception as exc:
        raise CheckpointError(f'Could not read checkpoint {path}: {exc}') from exc
    if not isinstance(payload, dict) or payload.get('format') != FORMAT:
        raise CheckpointError(f'{path} is not a field checkpoint')
    if payload.get('version') != VERSION:
        raise CheckpointError(f'Unsupported checkpoint version {payload.get("version")} in {path}')

    params = NetworkParams(Architecture(**payload['architecture']))
    params.decoder.load_state_dict(payload['theta'])
    params.ewc_anchor = dict(payload['ewc_anchor'])
    params.ewc_importance = dict(payload['ewc_importance'])
    params.ewc_count = payload['ewc_count']

    saved = payload['store']
    store = FeatureStore(saved['voxel_size'], params.architecture.feature_dim, saved['neighbors'])
    store.positions = saved['positions'].numpy().copy()
    store.colors = saved['colors'].numpy().copy()
    store.labels = saved['labels'].numpy().astype(np.int8)
    store.features = saved['features'].clone().requires_grad_(True)
    store.rebuild_index()

    field = NeuralField(params, store)
    if payload.get('frozen'):
        field.freeze()
    return field
