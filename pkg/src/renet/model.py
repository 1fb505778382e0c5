"""Region-ensemble regression networks and their baseline variants.

All variants share one convolutional trunk: three stages of
[conv3x3 -> ReLU -> conv3x3 -> ReLU -> maxpool2] with 1x1-convolution
residual bypasses across stages 2 and 3 (added before the pool), taking a
(N, 1, 96, 96) patch to (N, 64, 12, 12) under the default channel plan.

Heads:
  basic / basic-large  single regressor on the flattened full feature map
  region-ensemble      per-region FC branches, concatenated, fused by one
                       final regression layer (trained end-to-end)
  region-bagging       per-region FC branches each predicting a full pose;
                       the output is their arithmetic mean

FC branches are affine (no activation); dropout follows each of the two
FC layers. The final regression layer is affine with no activation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import checkpoint
from .autodiff import Graph, ShapeError, Tensor

__all__ = [
    "ModelSpec",
    "Model",
    "VARIANTS",
    "partition_regions",
    "param_count",
    "receptive_field",
    "trunk_layer_stack",
    "DEFAULT_CHANNELS",
]

VARIANTS = ("basic", "basic-large", "region-ensemble", "region-bagging")
DEFAULT_CHANNELS = ((16, 16), (32, 32), (64, 64))
MODEL_MAGIC = "renet-model v1"


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description; `fc2_dim=None` resolves to 8192 for
    basic-large (parameter parity with the region ensemble) and to
    `fc_dim` otherwise."""

    variant: str = "region-ensemble"
    joints: int = 16
    grid_n: int = 2
    fc_dim: int = 2048
    fc2_dim: int | None = None
    channels: tuple = DEFAULT_CHANNELS
    input_size: int = 96
    dropout: float = 0.5

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.joints < 1:
            raise ValueError("joints must be >= 1")
        if len(self.channels) != 3 or any(len(pair) != 2 for pair in self.channels):
            raise ValueError("channel plan must be three (convA, convB) pairs")
        if self.input_size % 8:
            raise ValueError(f"input size must be divisible by 8, got {self.input_size}")
        if self.is_regional and self.feature_size % self.grid_n:
            raise ValueError(
                f"grid {self.grid_n} does not divide the {self.feature_size}-cell feature map"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")

    @property
    def is_regional(self):
        return self.variant in ("region-ensemble", "region-bagging")

    @property
    def feature_size(self):
        return self.input_size // 8

    @property
    def feature_channels(self):
        return self.channels[2][1]

    @property
    def region_count(self):
        return self.grid_n * self.grid_n if self.is_regional else 1

    @property
    def region_dim(self):
        side = self.feature_size // self.grid_n if self.is_regional else self.feature_size
        return side * side * self.feature_channels

    @property
    def output_dim(self):
        return 3 * self.joints

    def resolved_fc2(self):
        if self.fc2_dim is not None:
            return self.fc2_dim
        return 8192 if self.variant == "basic-large" else self.fc_dim

    def to_header(self):
        ch = "/".join(f"{a},{b}" for a, b in self.channels)
        return {
            "variant": self.variant,
            "joints": str(self.joints),
            "grid_n": str(self.grid_n),
            "fc_dim": str(self.fc_dim),
            "fc2_dim": str(self.resolved_fc2()),
            "channels": ch,
            "input_size": str(self.input_size),
            "dropout": repr(self.dropout),
        }

    @staticmethod
    def from_header(kv):
        ch = tuple(tuple(int(x) for x in pair.split(",")) for pair in kv["channels"].split("/"))
        return ModelSpec(
            variant=kv["variant"],
            joints=int(kv["joints"]),
            grid_n=int(kv["grid_n"]),
            fc_dim=int(kv["fc_dim"]),
            fc2_dim=int(kv["fc2_dim"]),
            channels=ch,
            input_size=int(kv["input_size"]),
            dropout=float(kv["dropout"]),
        )


def trunk_layer_stack(spec=None):
    """(kernel, stride, pad) triples of the trunk, input to output."""
    stage = [(3, 1, 1), (3, 1, 1), (2, 2, 0)]
    return tuple(stage * 3)


@dataclass
class ReceptiveField:
    top: int
    left: int
    bottom: int  # inclusive
    right: int  # inclusive

    @property
    def height(self):
        return self.bottom - self.top + 1

    @property
    def width(self):
        return self.right - self.left + 1


def receptive_field(spec, rows, cols):
    """Input-image rectangle that can influence feature cells
    [rows[0], rows[1]) x [cols[0], cols[1]), clipped to the input bounds.

    Standard interval propagation over the trunk's kernel/stride/pad stack;
    1x1 residual convolutions never widen the field.
    """
    fs = spec.feature_size
    if not (0 <= rows[0] < rows[1] <= fs and 0 <= cols[0] < cols[1] <= fs):
        raise ValueError(f"cell range outside the {fs}x{fs} feature map")
    spans = []
    for lo, hi in (rows, cols):
        a, b = lo, hi - 1
        for k, s, p in reversed(trunk_layer_stack(spec)):
            a = a * s - p
            b = b * s - p + k - 1
        spans.append((max(a, 0), min(b, spec.input_size - 1)))
    (top, bottom), (left, right) = spans
    return ReceptiveField(top=top, left=left, bottom=bottom, right=right)


def partition_regions(graph, features, n):
    """Split an NCHW feature map into an n x n grid of non-overlapping
    tiles, row-major. Concatenating the tiles reconstructs the input."""
    size = features.shape[2]
    if features.shape[2] != features.shape[3]:
        raise ShapeError("partition expects square feature maps")
    if size % n:
        raise ShapeError(f"grid {n} does not divide spatial extent {size}")
    step = size // n
    tiles = []
    for gy in range(n):
        for gx in range(n):
            tiles.append(
                graph.slice_spatial(
                    features, gy * step, (gy + 1) * step, gx * step, (gx + 1) * step
                )
            )
    return tiles


def param_shapes(spec):
    """Name -> shape of every parameter the spec implies, in build order."""
    shapes = {}

    def conv(name, c_in, c_out, k):
        shapes[f"{name}.w"] = (c_out, c_in, k, k)
        shapes[f"{name}.b"] = (c_out,)

    def fc(name, d_in, d_out):
        shapes[f"{name}.w"] = (d_in, d_out)
        shapes[f"{name}.b"] = (d_out,)

    (c1a, c1b), (c2a, c2b), (c3a, c3b) = spec.channels
    conv("conv1", 1, c1a, 3)
    conv("conv2", c1a, c1b, 3)
    conv("conv3", c1b, c2a, 3)
    conv("conv4", c2a, c2b, 3)
    conv("res2", c1b, c2b, 1)
    conv("conv5", c2b, c3a, 3)
    conv("conv6", c3a, c3b, 3)
    conv("res3", c2b, c3b, 1)

    fc2 = spec.resolved_fc2()
    out_dim = spec.output_dim
    if spec.variant in ("basic", "basic-large"):
        fc("fc1", spec.region_dim, spec.fc_dim)
        fc("fc2", spec.fc_dim, fc2)
        fc("out", fc2, out_dim)
    elif spec.variant == "region-ensemble":
        for i in range(spec.region_count):
            fc(f"region{i}.fc1", spec.region_dim, spec.fc_dim)
            fc(f"region{i}.fc2", spec.fc_dim, fc2)
        fc("fuse", fc2 * spec.region_count, out_dim)
    else:  # region-bagging
        for i in range(spec.region_count):
            fc(f"region{i}.fc1", spec.region_dim, spec.fc_dim)
            fc(f"region{i}.fc2", spec.fc_dim, fc2)
            fc(f"region{i}.out", fc2, out_dim)
    return shapes


class Model:
    """A ModelSpec realized as named parameter tensors plus graph builders."""

    def __init__(self, spec, seed=0, dtype=np.float32, params=None):
        self.spec = spec
        self.dtype = np.dtype(dtype)
        self.params = params if params is not None else self._init_params(seed)

    # -- parameters ---------------------------------------------------------

    def _init_params(self, seed):
        """Fan-in-scaled uniform weights, zero biases."""
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 0x9E3779B9])))
        dt = self.dtype
        params = {}
        for name, shape in param_shapes(self.spec).items():
            if name.endswith(".b"):
                arr = np.zeros(shape, dt)
            else:
                fan_in = int(np.prod(shape[1:])) if len(shape) == 4 else shape[0]
                limit = 1.0 / np.sqrt(fan_in)
                arr = rng.uniform(-limit, limit, size=shape).astype(dt)
            params[name] = Tensor(arr, requires_grad=True, name=name)
        return params

    def astype(self, dtype):
        """Copy of this model with parameters cast to `dtype`."""
        cast = {
            name: Tensor(p.data.astype(dtype), requires_grad=True, name=name)
            for name, p in self.params.items()
        }
        return Model(self.spec, dtype=dtype, params=cast)

    def zero_grads(self):
        for p in self.params.values():
            p.grad = None

    # -- forward ------------------------------------------------------------

    def _as_batch(self, x):
        arr = np.asarray(x, dtype=self.dtype)
        s = self.spec.input_size
        if arr.ndim == 3:
            arr = arr[:, None, :, :]
        if arr.ndim != 4 or arr.shape[1] != 1 or arr.shape[2] != s or arr.shape[3] != s:
            raise ShapeError(f"expected patches (N, 1, {s}, {s}), got {arr.shape}")
        lo, hi = float(arr.min(initial=0.0)), float(arr.max(initial=0.0))
        if lo < -1.0 - 1e-4 or hi > 1.0 + 1e-4:
            raise ValueError(f"patch values outside [-1, 1]: range [{lo:.4f}, {hi:.4f}]")
        return arr

    def _trunk(self, g, x):
        p = self.params
        h = g.relu(g.conv2d(x, p["conv1.w"], p["conv1.b"], pad=1))
        h = g.relu(g.conv2d(h, p["conv2.w"], p["conv2.b"], pad=1))
        h = g.maxpool2(h)
        stage2_in = h
        h = g.relu(g.conv2d(h, p["conv3.w"], p["conv3.b"], pad=1))
        h = g.relu(g.conv2d(h, p["conv4.w"], p["conv4.b"], pad=1))
        h = g.add(h, g.conv2d(stage2_in, p["res2.w"], p["res2.b"]))
        h = g.maxpool2(h)
        stage3_in = h
        h = g.relu(g.conv2d(h, p["conv5.w"], p["conv5.b"], pad=1))
        h = g.relu(g.conv2d(h, p["conv6.w"], p["conv6.b"], pad=1))
        h = g.add(h, g.conv2d(stage3_in, p["res3.w"], p["res3.b"]))
        return g.maxpool2(h)

    def _branch(self, g, tile, prefix):
        p = self.params
        h = g.flatten(tile)
        h = g.linear(h, p[f"{prefix}.fc1.w"], p[f"{prefix}.fc1.b"])
        h = g.dropout(h, self.spec.dropout)
        h = g.linear(h, p[f"{prefix}.fc2.w"], p[f"{prefix}.fc2.b"])
        return g.dropout(h, self.spec.dropout)

    def forward_graph(self, g, x, collect=None):
        """Build the forward pass on an existing graph; returns the (N, 3J)
        output tensor. `collect`, if given, receives intermediate tensors
        under keys "features" and (for regional variants) "branches"."""
        spec = self.spec
        p = self.params
        feats = self._trunk(g, x)
        if collect is not None:
            collect["features"] = feats

        if spec.variant in ("basic", "basic-large"):
            h = g.flatten(feats)
            h = g.linear(h, p["fc1.w"], p["fc1.b"])
            h = g.dropout(h, spec.dropout)
            h = g.linear(h, p["fc2.w"], p["fc2.b"])
            h = g.dropout(h, spec.dropout)
            return g.linear(h, p["out.w"], p["out.b"])

        tiles = partition_regions(g, feats, spec.grid_n)
        if spec.variant == "region-ensemble":
            branches = [self._branch(g, t, f"region{i}") for i, t in enumerate(tiles)]
            if collect is not None:
                collect["branches"] = branches
            fused = g.concat(branches)
            return g.linear(fused, p["fuse.w"], p["fuse.b"])

        # region-bagging: independent pose per region, averaged
        preds = []
        for i, t in enumerate(tiles):
            h = self._branch(g, t, f"region{i}")
            preds.append(g.linear(h, p[f"region{i}.out.w"], p[f"region{i}.out.b"]))
        if collect is not None:
            collect["branches"] = preds
        acc = preds[0]
        for q in preds[1:]:
            acc = g.add(acc, q)
        return g.scale(acc, 1.0 / len(preds))

    def forward(self, x, training=False, rng=None, collect=None):
        """Run a forward pass on a fresh graph; returns (graph, output)."""
        g = Graph(training=training, rng=rng)
        xb = x if isinstance(x, Tensor) else Tensor(self._as_batch(x))
        return g, self.forward_graph(g, xb, collect=collect)

    def predict(self, x):
        """Inference forward; deterministic, returns an (N, 3J) ndarray."""
        _, out = self.forward(x, training=False)
        return out.data

    def features(self, x):
        """Trunk output (N, C, S/8, S/8) in inference mode."""
        g = Graph(training=False)
        xb = Tensor(self._as_batch(x))
        return self._trunk(g, xb).data

    # -- persistence ---------------------------------------------------------

    def save(self, path):
        """Self-describing checkpoint: plain-text spec header, blank line,
        then the binary parameter blob."""
        header = [MODEL_MAGIC]
        header += [f"{k}={v}" for k, v in self.spec.to_header().items()]
        text = "\n".join(header).encode("ascii") + b"\n\n"
        with open(path, "wb") as f:
            f.write(text + checkpoint.dump_tensors(self.params))

    @classmethod
    def load(cls, path):
        blob = open(path, "rb").read()
        sep = blob.find(b"\n\n")
        if sep < 0:
            raise checkpoint.CheckpointError("missing model header")
        lines = blob[:sep].decode("ascii").splitlines()
        if not lines or lines[0] != MODEL_MAGIC:
            raise checkpoint.CheckpointError(f"not a model checkpoint: {path}")
        kv = dict(line.split("=", 1) for line in lines[1:] if line)
        spec = ModelSpec.from_header(kv)
        arrays = checkpoint.parse_tensors(blob[sep + 2 :])
        expected = param_shapes(spec)
        if set(arrays) != set(expected):
            raise checkpoint.CheckpointError("checkpoint parameters do not match the spec header")
        for name, arr in arrays.items():
            if arr.shape != expected[name]:
                raise checkpoint.CheckpointError(
                    f"parameter {name!r} has shape {arr.shape}, spec implies {expected[name]}"
                )
        params = {name: Tensor(arrays[name], requires_grad=True, name=name) for name in arrays}
        return cls(spec, params=params)


def param_count(model):
    """Exact parameter counts: per named part, per section, and total."""
    per_part = {name: int(p.data.size) for name, p in model.params.items()}
    trunk = sum(v for k, v in per_part.items() if k.startswith(("conv", "res")))
    total = sum(per_part.values())
    return {"per_part": per_part, "trunk": trunk, "head": total - trunk, "total": total}
