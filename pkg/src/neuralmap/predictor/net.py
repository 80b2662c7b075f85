"""Shallow gated-residual U-Net for per-frame elevation and uncertainty."""
from __future__ import annotations

import numpy as np

from ..sensing import LocalGrid
from .layers import conv2d, conv2d_backward, conv_out_size, sigmoid, upsample2, upsample2_backward
from .loss import LOGVAR_MAX, LOGVAR_MIN, ElevationEstimate, ShapeMismatch

IN_CHANNELS = 2  # elevation (sentinel on empty cells), validity mask
HEAD_CHANNELS = 3  # raw estimate, gate logit, log-variance logit


def _layers(widths):
    c1, c2, c3 = widths
    # name, kernel, in, out, stride
    return [
        ("enc1a", 3, IN_CHANNELS, c1, 1),
        ("enc1b", 3, c1, c1, 1),
        ("enc2a", 3, c1, c2, 2),
        ("enc2b", 3, c2, c2, 1),
        ("enc3a", 3, c2, c3, 2),
        ("enc3b", 3, c3, c3, 1),
        ("dec2", 3, c3 + c2, c2, 1),
        ("dec1", 3, c2 + c1, c1, 1),
        ("head", 1, c1, HEAD_CHANNELS, 1),
    ]


class GatedNet:
    """Encoder-decoder with two downsampling stages and three output heads.

    The final mean is ``g * raw + (1 - g) * input_elevation`` with the gate
    ``g`` in [0, 1]; the log-variance head is squashed into the clamp range.
    """

    def __init__(self, rows: int, cols: int, widths=(16, 32, 32), seed: int = 0, dtype=np.float32):
        self.rows, self.cols = int(rows), int(cols)
        self.widths = tuple(int(w) for w in widths)
        self.dtype = np.dtype(dtype)
        self.seed = int(seed)
        self.meta: dict = {}  # provenance of trained weights (config, dataset)
        self.layers = _layers(self.widths)
        rng = np.random.default_rng(seed)
        self.params: dict[str, np.ndarray] = {}
        for name, k, cin, cout, _ in self.layers:
            std = np.sqrt(2.0 / (k * k * cin))
            if name == "head":
                std *= 0.1
            self.params[f"{name}.w"] = (rng.standard_normal((k, k, cin, cout)) * std).astype(self.dtype)
            self.params[f"{name}.b"] = np.zeros(cout, dtype=self.dtype)

    @property
    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def descriptor(self) -> dict:
        return {
            "arch": "gated-unet",
            "rows": self.rows,
            "cols": self.cols,
            "widths": list(self.widths),
            "in_channels": IN_CHANNELS,
            "activation": "relu",
            "downsampling": "stride-2 conv",
            "upsampling": "nearest x2 + crop",
            "gate": "sigmoid",
            "log_variance": [LOGVAR_MIN, LOGVAR_MAX],
            "dtype": self.dtype.name,
            "seed": self.seed,
            "parameters": [[name, list(p.shape)] for name, p in self.params.items()],
            "parameter_count": self.parameter_count,
        }

    @classmethod
    def from_descriptor(cls, desc: dict) -> "GatedNet":
        net = cls(desc["rows"], desc["cols"], desc["widths"], desc.get("seed", 0), desc.get("dtype", "float32"))
        expected = [[n, list(p.shape)] for n, p in net.params.items()]
        if expected != desc["parameters"]:
            raise ShapeMismatch("descriptor parameter layout does not match the architecture")
        return net

    def copy(self) -> "GatedNet":
        other = GatedNet.__new__(GatedNet)
        other.__dict__.update(self.__dict__)
        other.params = {k: v.copy() for k, v in self.params.items()}
        other.meta = dict(self.meta)
        return other

    def _conv(self, name, x, stride):
        return conv2d(x, self.params[f"{name}.w"], self.params[f"{name}.b"], stride)

    def forward(self, elev, valid):
        """Batched forward pass on (B, rows, cols) arrays.

        Returns ``(mean, log_variance, cache)``.
        """
        elev = np.asarray(elev, dtype=self.dtype)
        valid = np.asarray(valid, dtype=self.dtype)
        if elev.ndim == 2:
            elev, valid = elev[None], valid[None]
        if elev.shape[1:] != (self.rows, self.cols) or valid.shape != elev.shape:
            raise ShapeMismatch(f"expected (*, {self.rows}, {self.cols}), got {elev.shape}")
        x = np.stack([elev, valid], axis=-1)
        strides = {name: s for name, _, _, _, s in self.layers}
        caches, acts = {}, {}

        def block(name, inp):
            out, caches[name] = self._conv(name, inp, strides[name])
            out = np.maximum(out, 0)
            acts[name] = out
            return out

        e1 = block("enc1b", block("enc1a", x))
        e2 = block("enc2b", block("enc2a", e1))
        e3 = block("enc3b", block("enc3a", e2))
        h2, w2 = e2.shape[1:3]
        d2 = block("dec2", np.concatenate([upsample2(e3, h2, w2), e2], axis=-1))
        d1 = block("dec1", np.concatenate([upsample2(d2, self.rows, self.cols), e1], axis=-1))
        head, caches["head"] = self._conv("head", d1, 1)
        raw = head[..., 0]
        gate = sigmoid(head[..., 1])
        sq = sigmoid(head[..., 2])
        log_var = LOGVAR_MIN + (LOGVAR_MAX - LOGVAR_MIN) * sq
        mean = gate * raw + (1 - gate) * elev
        cache = dict(caches=caches, acts=acts, elev=elev, raw=raw, gate=gate, sq=sq,
                     shapes=dict(e2=e2.shape, e3=e3.shape, d2=d2.shape))
        return mean, log_var, cache

    def backward(self, d_mean, d_log_var, cache) -> dict[str, np.ndarray]:
        d_mean = np.asarray(d_mean, dtype=self.dtype)
        d_log_var = np.asarray(d_log_var, dtype=self.dtype)
        caches, acts = cache["caches"], cache["acts"]
        gate, raw, sq = cache["gate"], cache["raw"], cache["sq"]
        d_head = np.stack([
            d_mean * gate,
            d_mean * (raw - cache["elev"]) * gate * (1 - gate),
            d_log_var * (LOGVAR_MAX - LOGVAR_MIN) * sq * (1 - sq),
        ], axis=-1)
        grads: dict[str, np.ndarray] = {}

        def back(name, dout):
            dout = dout * (acts[name] > 0) if name != "head" else dout
            dx, grads[f"{name}.w"], grads[f"{name}.b"] = conv2d_backward(dout, caches[name])
            return dx

        c1, c2, _ = self.widths
        d_d1 = back("head", d_head)
        d_cat1 = back("dec1", d_d1)
        h2, w2 = cache["shapes"]["d2"][1:3]
        d_d2 = upsample2_backward(d_cat1[..., :c2], h2, w2)
        d_e1 = d_cat1[..., c2:]
        d_cat2 = back("dec2", d_d2)
        h3, w3 = cache["shapes"]["e3"][1:3]
        d_e3 = upsample2_backward(d_cat2[..., :-c2], h3, w3)
        d_e2 = d_cat2[..., -c2:]
        d_e2 = d_e2 + back("enc3a", back("enc3b", d_e3))
        d_e1 = d_e1 + back("enc2a", back("enc2b", d_e2))
        back("enc1a", back("enc1b", d_e1))
        return {k: grads[k] for k in self.params}

    def predict_arrays(self, elev, valid, batch_size: int = 256):
        means, logvars = [], []
        for start in range(0, len(elev), batch_size):
            m, s, _ = self.forward(elev[start:start + batch_size], valid[start:start + batch_size])
            means.append(m)
            logvars.append(s)
        return np.concatenate(means).astype(float), np.concatenate(logvars).astype(float)


def predict(net: GatedNet, grid: LocalGrid) -> ElevationEstimate:
    """Run the network on one local grid."""
    if grid.shape != (net.rows, net.cols):
        raise ShapeMismatch(f"net expects {(net.rows, net.cols)}, grid is {grid.shape}")
    mean, log_var, _ = net.forward(grid.filled(), grid.valid)
    return ElevationEstimate(mean[0].astype(float), log_var[0].astype(float))
