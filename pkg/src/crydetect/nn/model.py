"""The modified AlexNet: 225x225x1 input, batch norm after every hidden layer, 2 outputs."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass

import numpy as np

from ..dsp import IMAGE_SIZE, MelImage
from ..preprocess import CRYING, NOT_CRYING
from .layers import BatchNorm, Conv2d, Flatten, Linear, MaxPool2d, ReLU, softmax

FULL_WIDTHS = (96, 256, 384, 384, 256, 4096)
DEEP_FEATURES = 1000

PRESETS = {
    "full": FULL_WIDTHS,
    # 1/8 of every conv and FC6 width; FC7 stays at 1000 so deep features keep their size
    "desk": tuple(w // 8 for w in FULL_WIDTHS),
}


@dataclass(frozen=True)
class Architecture:
    widths: tuple = FULL_WIDTHS
    deep_features: int = DEEP_FEATURES
    n_classes: int = 2
    bn_momentum: float = 0.9
    bn_eps: float = 1e-5

    @classmethod
    def preset(cls, name: str):
        if name not in PRESETS:
            raise ValueError(f"unknown network preset {name!r}; choose from {sorted(PRESETS)}")
        return cls(widths=PRESETS[name])


def build_layers(arch: Architecture, rng, dtype=np.float32):
    c1, c2, c3, c4, c5, f6 = arch.widths
    bn = dict(momentum=arch.bn_momentum, eps=arch.bn_eps, dtype=dtype)
    kw = dict(rng=rng, dtype=dtype)
    # spatial size: 225 -> 54 -> 26 -> 26 -> 12 -> 12 -> 12 -> 12 -> 5
    return [
        Conv2d(1, c1, 11, stride=4, **kw), BatchNorm(c1, **bn), ReLU(), MaxPool2d(3, 2),
        Conv2d(c1, c2, 5, padding=2, **kw), BatchNorm(c2, **bn), ReLU(), MaxPool2d(3, 2),
        Conv2d(c2, c3, 3, padding=1, **kw), BatchNorm(c3, **bn), ReLU(),
        Conv2d(c3, c4, 3, padding=1, **kw), BatchNorm(c4, **bn), ReLU(),
        Conv2d(c4, c5, 3, padding=1, **kw), BatchNorm(c5, **bn), ReLU(), MaxPool2d(3, 2),
        Flatten(),
        Linear(5 * 5 * c5, f6, **kw), BatchNorm(f6, **bn), ReLU(),
        Linear(f6, arch.deep_features, **kw), BatchNorm(arch.deep_features, **bn), ReLU(),
        Linear(arch.deep_features, arch.n_classes, **kw),
    ]


class CnnModel:
    """Layer stack plus a train/eval mode flag."""

    DEEP_LAYER = -2  # index of the ReLU that follows the 1000-unit layer's batch norm

    def __init__(self, arch: Architecture | None = None, seed: int = 0, dtype=np.float32, preset: str | None = None):
        self.arch = Architecture.preset(preset) if preset else (arch or Architecture())
        self.preset = preset
        self.seed = seed
        self.dtype = np.dtype(dtype)
        self.layers = build_layers(self.arch, np.random.default_rng(seed), self.dtype)
        self.layers[0].input_grad = False
        self.mode = "train"
        self.set_mode("eval")
        self.meta = {}

    def set_mode(self, mode: str):
        if mode not in ("train", "eval"):
            raise ValueError(mode)
        self.mode = mode
        for layer in self.layers:
            layer.training = mode == "train"
        return self

    def parameters(self):
        for layer in self.layers:
            yield from layer.params().values()

    def _as_batch(self, images) -> np.ndarray:
        if isinstance(images, MelImage):
            images = [images]
        if isinstance(images, (list, tuple)):
            images = np.stack([im.values if isinstance(im, MelImage) else np.asarray(im) for im in images])
        x = np.asarray(images, dtype=self.dtype)
        if x.ndim == 2:
            x = x[None]
        if x.ndim == 3:
            x = x[:, None]
        if x.ndim != 4 or x.shape[1:] != (1, IMAGE_SIZE, IMAGE_SIZE):
            raise ValueError(f"expected images of shape (B, {IMAGE_SIZE}, {IMAGE_SIZE}), got {x.shape}")
        return x

    def _run(self, x, stop=None):
        layers = self.layers if stop is None else self.layers[:stop]
        for layer in layers:
            x = layer.forward(x)
        return x

    def forward(self, images, batch_size: int = 64) -> np.ndarray:
        """Logits (B, 2). In eval mode the batch is processed in chunks."""
        x = self._as_batch(images)
        if self.mode == "train":
            return self._run(x)
        return np.concatenate([self._run(x[i:i + batch_size]) for i in range(0, len(x), batch_size)])

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def _require_eval(self):
        if self.mode != "eval":
            raise RuntimeError("model is in train mode; call set_mode('eval') before inference")

    def predict_proba(self, images) -> np.ndarray:
        """Softmax probabilities (B, 2) as (not_crying, crying)."""
        self._require_eval()
        return softmax(self.forward(images).astype(np.float64))

    def predict(self, image) -> tuple[str, np.ndarray]:
        """Label and probability pair for one image; equal logits go to not_crying."""
        self._require_eval()
        logits = self.forward(image)[0].astype(np.float64)
        probs = softmax(logits)
        return (CRYING if logits[1] > logits[0] else NOT_CRYING), probs

    def deep_features(self, images, batch_size: int = 64) -> np.ndarray:
        """Post-BN, post-ReLU activations of the 1000-unit hidden layer, shape (B, 1000)."""
        self._require_eval()
        x = self._as_batch(images)
        return np.concatenate([self._run(x[i:i + batch_size], stop=len(self.layers) + self.DEEP_LAYER + 1)
                               for i in range(0, len(x), batch_size)])

    # -- serialization -------------------------------------------------------

    def _arrays(self):
        for i, layer in enumerate(self.layers):
            for name, p in layer.params().items():
                yield f"{i}.{name}", p.value
            for name, buf in layer.buffers().items():
                yield f"{i}.{name}", buf

    def save(self, path) -> None:
        """Write ``<path>.json`` (descriptor with per-array offsets) and ``<path>.bin`` (float32 LE)."""
        path = os.fspath(path)
        offsets, pos = {}, 0
        with open(path + ".bin", "wb") as f:
            for name, arr in self._arrays():
                a = np.ascontiguousarray(arr, dtype="<f4")
                offsets[name] = {"offset": pos, "shape": list(a.shape)}
                f.write(a.tobytes())
                pos += a.nbytes
        desc = {
            "kind": "modified_alexnet",
            "preset": self.preset,
            "architecture": {**asdict(self.arch), "widths": list(self.arch.widths)},
            "layers": [{"kind": layer.kind, **layer.config()} for layer in self.layers],
            "seed": self.seed,
            "meta": self.meta,
            "arrays": offsets,
        }
        with open(path + ".json", "w") as f:
            json.dump(desc, f, indent=2, sort_keys=True)
            f.write("\n")

    @classmethod
    def load(cls, path) -> "CnnModel":
        path = os.fspath(path)
        with open(path + ".json") as f:
            desc = json.load(f)
        a = desc["architecture"]
        arch = Architecture(tuple(a["widths"]), a["deep_features"], a["n_classes"], a["bn_momentum"], a["bn_eps"])
        model = cls(arch, seed=desc["seed"])
        model.preset = desc.get("preset")
        model.meta = desc.get("meta", {})
        blob = open(path + ".bin", "rb").read()
        for name, target in model._arrays():
            meta = desc["arrays"][name]
            count = int(np.prod(meta["shape"]))
            vals = np.frombuffer(blob, dtype="<f4", count=count, offset=meta["offset"]).reshape(meta["shape"])
            target[...] = vals
        return model.set_mode("eval")
