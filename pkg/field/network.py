"""
SDF decoder F_theta(p, c, f) and its parameter bundle.

The decoder is a float64 MLP over [encode(p), c, f] where encode(p) appends
sin/cos of 2^k pi p for k < pe_bands to p. Spatial gradients come from
reverse-mode differentiation, never finite differences.
"""
from dataclasses import asdict, dataclass

import torch
import torch.nn as nn

DTYPE = torch.float64


@dataclass(frozen=True)
class Architecture:
    """Shape of the decoder."""
    feature_dim: int = 8
    hidden_width: int = 64
    hidden_layers: int = 4
    pe_bands: int = 4
    softplus_beta: float = 100.0
    zero_init_output: bool = False

    @property
    def input_dim(self):
        return 3 + 3 * 2 * self.pe_bands + 3 + self.feature_dim

    def as_dict(self):
        return asdict(self)


class PositionalEncoding(nn.Module):
    def __init__(self, bands):
        super().__init__()
        frequencies = (2.0 ** torch.arange(bands, dtype=DTYPE)) * torch.pi
        self.register_buffer('frequencies', frequencies)

    def forward(self, p):
        scaled = p.unsqueeze(-1) * self.frequencies
        flat = scaled.flatten(start_dim=-2)
        return torch.cat([p, torch.sin(flat), torch.cos(flat)], dim=-1)


class SdfDecoder(nn.Module):
    def __init__(self, architecture):
        super().__init__()
        self.architecture = architecture
        self.encoding = PositionalEncoding(architecture.pe_bands)
        layers = []
        width_in = architecture.input_dim
        for _ in range(architecture.hidden_layers):
            layers.append(nn.Linear(width_in, architecture.hidden_width, dtype=DTYPE))
            layers.append(nn.Softplus(beta=architecture.softplus_beta))
            width_in = architecture.hidden_width
        self.hidden = nn.Sequential(*layers)
        self.output = nn.Linear(width_in, 1, dtype=DTYPE)
        if architecture.zero_init_output:
            nn.init.zeros_(self.output.weight)
            nn.init.zeros_(self.output.bias)

    def forward(self, p, c, f):
        x = torch.cat([self.encoding(p), c, f], dim=-1)
        return self.output(self.hidden(x)).squeeze(-1)


class NetworkParams:
    """Decoder weights theta with the EWC anchor theta* and diagonal importance G."""

    def __init__(self, architecture=None, seed=0):
        self.architecture = architecture or Architecture()
        generator_state = torch.random.get_rng_state()
        torch.manual_seed(seed)
        self.decoder = SdfDecoder(self.architecture)
        torch.random.set_rng_state(generator_state)
        self.ewc_anchor = {name: p.detach().clone() for name, p in self.decoder.named_parameters()}
        self.ewc_importance = {name: torch.zeros_like(p) for name, p in self.decoder.named_parameters()}
        self.ewc_count = 0
        self._optimizer = None

    def named_parameters(self):
        return self.decoder.named_parameters()

    def parameters(self):
        return self.decoder.parameters()

    def flat(self):
        return torch.cat([p.detach().reshape(-1) for p in self.decoder.parameters()])

    def optimizer(self, lr):
        """Adam over theta, created on first use; later calls only update the rate."""
        if self._optimizer is None:
            self._optimizer = torch.optim.Adam(self.decoder.parameters(), lr=lr)
        for group in self._optimizer.param_groups:
            group['lr'] = lr
        return self._optimizer

    def copy(self):
        """Deep copy of weights and EWC state, without optimizer moments."""
        other = NetworkParams.__new__(NetworkParams)
        other.architecture = self.architecture
        other.decoder = SdfDecoder(self.architecture)
        other.decoder.load_state_dict(self.decoder.state_dict())
        other.ewc_anchor = {k: v.clone() for k, v in self.ewc_anchor.items()}
        other.ewc_importance = {k: v.clone() for k, v in self.ewc_importance.items()}
        other.ewc_count = self.ewc_count
        other._optimizer = None
        return other


@dataclass(frozen=True, eq=False)
class FieldOutput:
    sdf: torch.Tensor
    grad_p: torch.Tensor


def forward(p, c, f, params, create_graph=False):
    """Predicted SDF and dF/dp for a batch of (position, color, feature) inputs."""
    p = torch.as_tensor(p, dtype=DTYPE)
    c = torch.as_tensor(c, dtype=DTYPE)
    f = torch.as_tensor(f, dtype=DTYPE)
    squeeze = p.dim() == 1
    if squeeze:
        p, c, f = p.unsqueeze(0), c.unsqueeze(0), f.unsqueeze(0)
    if not p.requires_grad:
        p = p.detach().requires_grad_(True)
    with torch.enable_grad():
        sdf = params.decoder(p, c, f)
        (grad_p,) = torch.autograd.grad(sdf.sum(), p, create_graph=create_graph)
    if not create_graph:
        sdf = sdf.detach()
    if squeeze:
        return FieldOutput(sdf[0], grad_p[0])
    return FieldOutput(sdf, grad_p)
