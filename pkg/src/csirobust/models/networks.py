"""Network architectures: convolutional and recurrent baselines, and the
tiny family (TCN bottleneck autoencoder with swappable latent heads)."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..autograd import GRU, Conv1d, Linear, Module, Parameter
from ..autograd import functional as F

FAMILIES = ("large-cnn", "large-gru", "tiny-tcn-head", "tiny-gru-head")
TINY = ("tiny-tcn-head", "tiny-gru-head")


def family_group(family):
    return "tiny" if family in TINY else "large"


@dataclass
class ModelSpec:
    family: str
    input_dims: tuple
    n_classes: int
    width: int | None = None
    depth: int | None = None
    latent_dim: int = 8
    head_width: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}, got {self.family!r}")
        self.input_dims = tuple(int(d) for d in self.input_dims)
        if len(self.input_dims) != 3 or min(self.input_dims) < 1:
            raise ValueError(f"input_dims must be three positive ints, got {self.input_dims}")
        if self.n_classes < 2:
            raise ValueError("n_classes must be at least 2")

    def to_dict(self):
        d = asdict(self)
        d["input_dims"] = list(self.input_dims)
        return d


def _flat_channels(x):
    n, a, k, t = x.shape
    return F.reshape(x, (n, a * k, t))


class LargeCNN(Module):
    """Five conv blocks (conv k=3, ReLU, max-pool 2) and two dense layers."""

    def __init__(self, spec: ModelSpec, rng):
        a, k, t = spec.input_dims
        w = spec.width or 64
        depth = spec.depth or 5
        if t < 2 ** depth:
            raise ValueError(f"large-cnn with depth {depth} needs at least {2 ** depth} "
                             f"packets (minimum dims (1, 1, {2 ** depth})), got {t}")
        widths = [w, w, int(1.5 * w), int(1.5 * w), 2 * w, 2 * w, 3 * w][:depth]
        widths += [widths[-1]] * (depth - len(widths))
        chans = [a * k] + widths
        self.convs = [Conv1d(chans[i], chans[i + 1], 3, rng) for i in range(depth)]
        flat = widths[-1] * (t // 2 ** depth)
        self.fc1 = Linear(flat, spec.head_width or 8 * w, rng)
        self.fc2 = Linear(spec.head_width or 8 * w, spec.n_classes, rng)

    def forward(self, x):
        h = _flat_channels(x)
        for conv in self.convs:
            h = F.max_pool1d(F.relu(conv(h)), 2)
        h = F.reshape(h, (h.shape[0], -1))
        return self.fc2(F.relu(self.fc1(h)))


class LargeGRU(Module):
    """GRU over packets (subcarrier-antenna vector per step) and an MLP head."""

    def __init__(self, spec: ModelSpec, rng):
        a, k, _ = spec.input_dims
        hidden = spec.width or 128
        self.gru = GRU(a * k, hidden, rng)
        self.fc1 = Linear(hidden, spec.head_width or hidden, rng)
        self.fc2 = Linear(spec.head_width or hidden, spec.n_classes, rng)

    def forward(self, x):
        h = self.gru(_flat_channels(x))
        return self.fc2(F.relu(self.fc1(h)))


class TcnEncoder(Module):
    """Dilated convolutions compressing (A*K, T) to (latent_dim, ceil(T/4))."""

    def __init__(self, input_dims, latent_dim, width, rng):
        a, k, t = input_dims
        if latent_dim >= a * k:
            raise ValueError(f"latent_dim {latent_dim} is not a bottleneck for "
                             f"{a * k} input channels")
        if t < 4:
            raise ValueError(f"tiny encoder needs at least 4 packets, got {t}")
        self.conv1 = Conv1d(a * k, width, 3, rng)
        self.conv2 = Conv1d(width, width, 3, rng, stride=2, dilation=2)
        self.conv3 = Conv1d(width, latent_dim, 3, rng, stride=2, dilation=4)

    def forward(self, x):
        h = F.relu(self.conv1(_flat_channels(x)))
        h = F.relu(self.conv2(h))
        return self.conv3(h)


class TcnDecoder(Module):
    def __init__(self, input_dims, latent_dim, width, rng):
        a, k, t = input_dims
        self.out_shape = (a, k, t)
        self.conv1 = Conv1d(latent_dim, width, 3, rng)
        self.conv2 = Conv1d(width, width, 3, rng)
        self.conv3 = Conv1d(width, a * k, 3, rng)

    def forward(self, z):
        h = F.relu(self.conv1(F.upsample1d(z, 2)))
        h = F.relu(self.conv2(F.upsample1d(h, 2)))
        h = self.conv3(h)
        a, k, t = self.out_shape
        if h.shape[2] != t:
            h = h[:, :, :t]
        return F.reshape(h, (h.shape[0], a, k, t))


class TcnAutoencoder(Module):
    def __init__(self, input_dims, latent_dim=8, width=32, rng=None):
        rng = np.random.default_rng(0) if rng is None else rng
        self.input_dims = tuple(input_dims)
        self.latent_dim = latent_dim
        self.encoder = TcnEncoder(input_dims, latent_dim, width, rng)
        self.decoder = TcnDecoder(input_dims, latent_dim, width, rng)

    def forward(self, x):
        return self.decoder(self.encoder(x))


class TcnHead(Module):
    """Causal dilated convolutions over the latent sequence, mean-pooled."""

    def __init__(self, latent_dim, n_classes, width, rng):
        self.latent_dim = latent_dim
        self.convs = [Conv1d(latent_dim if i == 0 else width, width, 3, rng,
                             dilation=2 ** i, padding="causal") for i in range(3)]
        self.fc = Linear(width, n_classes, rng)

    def forward(self, z):
        h = z
        for conv in self.convs:
            h = F.relu(conv(h))
        return self.fc(F.mean(h, axis=2))


class GruHead(Module):
    def __init__(self, latent_dim, n_classes, width, rng):
        self.latent_dim = latent_dim
        self.gru = GRU(latent_dim, width, rng)
        self.fc = Linear(width, n_classes, rng)

    def forward(self, z):
        return self.fc(self.gru(z))


class TinyClassifier(Module):
    def __init__(self, encoder: TcnEncoder, head: Module):
        if head.latent_dim != encoder.conv3.weight.shape[0]:
            raise ValueError(f"head expects latent_dim {head.latent_dim}, encoder emits "
                             f"{encoder.conv3.weight.shape[0]}")
        self.encoder = encoder
        self.head = head

    def forward(self, x):
        return self.head(self.encoder(x))


def build_head(spec: ModelSpec, rng):
    width = spec.head_width or (32 if spec.family == "tiny-tcn-head" else 64)
    if spec.family == "tiny-tcn-head":
        return TcnHead(spec.latent_dim, spec.n_classes, width, rng)
    if spec.family == "tiny-gru-head":
        return GruHead(spec.latent_dim, spec.n_classes, width, rng)
    raise ValueError(f"{spec.family} has no latent head")


def build_autoencoder(spec: ModelSpec, rng=None):
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    return TcnAutoencoder(spec.input_dims, spec.latent_dim, spec.width or 32, rng)


def build_model(spec: ModelSpec):
    """Freshly initialized network for ``spec``; identical for equal specs."""
    rng = np.random.default_rng(spec.seed)
    if spec.family == "large-cnn":
        net = LargeCNN(spec, rng)
    elif spec.family == "large-gru":
        net = LargeGRU(spec, rng)
    else:
        ae = build_autoencoder(spec, rng)
        net = TinyClassifier(ae.encoder, build_head(spec, rng))
    net.spec = spec
    return net


class LinearNet(Module):
    """Affine classifier ``logits = vec(x) W + b`` used as an analytic oracle
    for attacks (decision boundaries and margins are closed-form)."""

    family = "linear"

    def __init__(self, weight, bias, input_dims):
        weight = np.asarray(weight, dtype=np.float64)
        self.input_dims = tuple(input_dims)
        if weight.shape[0] != int(np.prod(self.input_dims)):
            raise ValueError(f"weight rows {weight.shape[0]} != prod{self.input_dims}")
        self.weight = Parameter(weight)
        self.bias = Parameter(np.asarray(bias, dtype=np.float64))
        self.n_classes = weight.shape[1]

    def forward(self, x):
        return F.matmul(F.reshape(x, (x.shape[0], -1)), self.weight) + self.bias


def network_family(net):
    spec = getattr(net, "spec", None)
    return spec.family if spec is not None else getattr(net, "family", "unknown")


def network_classes(net):
    spec = getattr(net, "spec", None)
    return spec.n_classes if spec is not None else net.n_classes
