"""A trained local field: decoder weights plus the feature store they read."""
import numpy as np
import torch

from core.shapes import SdfQuery

from .features import FeatureStore
from .network import NetworkParams, forward

QUERY_CHUNK = 32768


class NeuralField:
    """
    Queryable signed-distance field of one local frame.

    Points without a map point nearby are reported invalid (unobserved
    space); their sdf is NaN and their gradient zero.
    """

    def __init__(self, params=None, store=None):
        self.params = params or NetworkParams()
        feature_dim = self.params.architecture.feature_dim
        self.store = store if store is not None else FeatureStore(feature_dim=feature_dim)
        if self.store.feature_dim != feature_dim:
            raise ValueError('Feature store and decoder disagree on the feature dimension')
        self.frozen = False

    def __len__(self):
        return len(self.store)

    def freeze(self):
        self.frozen = True
        for p in self.params.parameters():
            p.requires_grad_(False)
        self.store.features = self.store.features.detach()

    def query(self, points, colors=None):
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        n = points.shape[0]
        sdf = np.full(n, np.nan)
        grad = np.zeros((n, 3))
        hood = self.store.neighborhood(points)
        valid = hood.valid
        rows = np.flatnonzero(valid)
        for start in range(0, rows.size, QUERY_CHUNK):
            chunk = rows[start:start + QUERY_CHUNK]
            sub = type(hood)(hood.ids[chunk], hood.weights[chunk], hood.valid[chunk])
            if colors is None:
                chunk_colors = self.store.gather_colors(sub)
            else:
                chunk_colors = np.asarray(colors, dtype=np.float64).reshape(-1, 3)[chunk]
            with torch.no_grad():
                features = self.store.gather(sub)
            out = forward(points[chunk], chunk_colors, features, self.params)
            sdf[chunk] = out.sdf.numpy()
            grad[chunk] = out.grad_p.numpy()
        return SdfQuery(sdf, grad, valid)

    def copy(self):
        other = NeuralField(self.params.copy(), self.store.copy())
        other.frozen = self.frozen
        return other
