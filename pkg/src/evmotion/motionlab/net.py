"""Small channel-last CNN: conv → ReLU (→ SE) … → global pool → linear."""

import hashlib
from dataclasses import asdict, dataclass

import numpy as np

from .. import io as evio
from ..errors import InputError
from . import layers as L

MAX_LEARNABLE_LAYERS = 5
MAX_PARAMS = 50_000


def reduction_for(channels, r):
    """Largest divisor of ``channels`` not above ``r`` (so ``channels / r >= 1``)."""
    r = max(1, min(int(r), channels))
    while channels % r:
        r -= 1
    return r


@dataclass
class NetConfig:
    in_channels: int
    n_classes: int
    conv_channels: tuple = (16,)
    kernel: tuple = (1, 3, 3)          # (kt, kh, kw); kt > 1 gives a 3D convolution
    se: bool = False
    se_after: int = -1                 # index into conv_channels
    se_reduction: int = 16
    fold: bool = False                 # move voxel bins onto the time axis before the first conv

    def __post_init__(self):
        self.conv_channels = tuple(int(c) for c in self.conv_channels)
        self.kernel = tuple(int(k) for k in self.kernel)
        if not self.conv_channels or min(self.conv_channels) < 1:
            raise InputError(f"conv_channels must be non-empty and positive, got {self.conv_channels}")
        if self.in_channels < 1 or self.n_classes < 1:
            raise InputError("in_channels and n_classes must be positive")
        if len(self.kernel) != 3 or any(k % 2 == 0 or k < 1 for k in self.kernel):
            raise InputError(f"kernel must be three odd sizes, got {self.kernel}")
        if self.se and not -len(self.conv_channels) <= self.se_after < len(self.conv_channels):
            raise InputError(f"se_after {self.se_after} out of range")

    @property
    def se_index(self):
        return self.se_after % len(self.conv_channels) if self.se else None

    @property
    def feature_dim(self):
        return self.conv_channels[-1]


class ToyNet:
    """Feature extractor plus linear head with a penultimate feature tap.

    Parameters live in ``self.params`` (insertion order is the manifest and
    initialisation draw order). ``frozen`` nets are rejected by the
    optimiser and by the distillation trainer when passed as student.
    """

    def __init__(self, config: NetConfig, seed=0):
        self.config = config
        self.frozen = False
        self.layers = self._layer_names()
        self.params = self._init_params(np.random.default_rng(seed))
        if self.n_learnable > MAX_LEARNABLE_LAYERS:
            raise InputError(f"{self.n_learnable} learnable layers exceed {MAX_LEARNABLE_LAYERS}")
        if self.n_params > MAX_PARAMS:
            raise InputError(f"{self.n_params} parameters exceed {MAX_PARAMS}")

    def _layer_names(self):
        cfg = self.config
        names = ["fold"] if cfg.fold else []
        for i in range(len(cfg.conv_channels)):
            names += [f"conv{i}", f"relu{i}"]
            if cfg.se_index == i:
                names.append("se")
        return names + ["pool", "fc"]

    def _init_params(self, rng):
        cfg = self.config
        kt, kh, kw = cfg.kernel
        params = {}
        cin = 1 if cfg.fold else cfg.in_channels
        for i, cout in enumerate(cfg.conv_channels):
            fan_in = kt * kh * kw * cin
            params[f"conv{i}.w"] = rng.normal(0.0, np.sqrt(2.0 / fan_in), (kt, kh, kw, cin, cout))
            params[f"conv{i}.b"] = np.zeros(cout)
            if cfg.se_index == i:
                r = reduction_for(cout, cfg.se_reduction)
                cr = cout // r
                params["se.w1"] = rng.normal(0.0, np.sqrt(1.0 / cout), (cr, cout))
                params["se.b1"] = np.zeros(cr)
                params["se.w2"] = rng.normal(0.0, np.sqrt(1.0 / cr), (cout, cr))
                params["se.b2"] = np.zeros(cout)
            cin = cout
        params["fc.w"] = rng.normal(0.0, np.sqrt(1.0 / cin), (cfg.n_classes, cin))
        params["fc.b"] = np.zeros(cfg.n_classes)
        return params

    @property
    def n_learnable(self):
        return sum(1 for n in self.layers if n.startswith(("conv", "se", "fc")))

    @property
    def n_params(self):
        return int(sum(p.size for p in self.params.values()))

    def se_params(self):
        p = self.params
        return L.SEParams(p["se.w1"], p["se.b1"], p["se.w2"], p["se.b2"],
                          p["se.w1"].shape[1] // p["se.w1"].shape[0])

    def freeze(self):
        self.frozen = True
        return self

    def copy(self):
        other = ToyNet.__new__(ToyNet)
        other.config = self.config
        other.frozen = self.frozen
        other.layers = list(self.layers)
        other.params = {k: v.copy() for k, v in self.params.items()}
        return other

    # forward / backward

    def _check_input(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 5 or x.shape[-1] != self.config.in_channels:
            raise InputError(f"expected input (N, T, H, W, {self.config.in_channels}), got {x.shape}")
        return x

    def forward(self, x):
        """Returns ``(logits, features, cache)``; ``features`` is the pooled tap."""
        h = self._check_input(x)
        cache = []
        p = self.params
        feat = None
        for name in self.layers:
            cache.append(h)
            if name == "fold":
                h = L.channel_fold(h)
            elif name.startswith("conv"):
                h = L.conv3d_forward(h, p[f"{name}.w"], p[f"{name}.b"])
            elif name.startswith("relu"):
                h = L.relu_forward(h)
            elif name == "se":
                h, _ = L.se_forward(h, self.se_params())
            elif name == "pool":
                h = feat = L.avg_pool_forward(h)
            elif name == "fc":
                h = L.linear_forward(h, p["fc.w"], p["fc.b"])
        return h, feat, cache

    def features(self, x):
        return self.forward(x)[1]

    def predict(self, x):
        return np.argmax(self.forward(x)[0], axis=1)

    def backward(self, cache, d_logits, d_features=None):
        """Parameter gradients given loss gradients at the logits and (optionally) the feature tap."""
        p = self.params
        grads = {}
        g = d_logits
        for name, inp in zip(reversed(self.layers), reversed(cache)):
            if name == "fc":
                g, grads["fc.w"], grads["fc.b"] = L.linear_backward(inp, p["fc.w"], g)
                if d_features is not None:
                    g = g + d_features
            elif name == "pool":
                g = L.avg_pool_backward(inp.shape, g)
            elif name == "se":
                sg = L.se_backward(inp, self.se_params(), g)
                g = sg.pop("x")
                grads.update({f"se.{k}": v for k, v in sg.items()})
            elif name.startswith("relu"):
                g = L.relu_backward(inp, g)
            elif name.startswith("conv"):
                g, grads[f"{name}.w"], grads[f"{name}.b"] = L.conv3d_backward(inp, p[f"{name}.w"], g)
            elif name == "fold":
                g = L.channel_unfold(g, inp.shape[-1])
        return {k: grads[k] for k in p}

    # persistence

    def meta(self):
        cfg = asdict(self.config)
        cfg["conv_channels"] = list(cfg["conv_channels"])
        cfg["kernel"] = list(cfg["kernel"])
        return {"config": cfg, "layers": self.layers}

    def to_bytes(self):
        return evio.checkpoint_to_bytes(self.params, self.meta())

    def checksum(self):
        return hashlib.sha256(self.to_bytes()).hexdigest()

    def save(self, path):
        return evio.write_checkpoint(path, self.params, self.meta())

    @classmethod
    def load(cls, path):
        tensors, meta = evio.read_checkpoint(path)
        net = cls(NetConfig(**meta["config"]))
        if list(tensors) != list(net.params):
            raise InputError(f"checkpoint tensors {list(tensors)} do not match architecture {list(net.params)}")
        for k, v in tensors.items():
            if v.shape != net.params[k].shape:
                raise InputError(f"checkpoint tensor {k} has shape {v.shape}, expected {net.params[k].shape}")
        net.params = dict(tensors)
        return net


__all__ = ["NetConfig", "ToyNet", "reduction_for"]
