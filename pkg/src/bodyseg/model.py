"""Assembly of the 26-convolution encoder-decoder segmentation network.

The encoder is five stages of 3x3 conv blocks (conv -> batch norm -> ReLU)
separated by 2x2 max pools that record argmax indices; the decoder mirrors
it with max unpooling, where unpool stage k reuses the indices of pool
stage 6-k.  Learned-probability dropout is applied at exactly two sites:
after the conv13 block (center) and after the conv25 block (output head).
The final conv26 is linear with no normalization and produces one logit
plane per class.

Forward modes:

* ``train`` - batch statistics in batch norm (running stats updated unless
  frozen), dropout sampled; records a tape for :meth:`SegNet.backward`.
* ``eval``  - running statistics, dropout disabled (exact identity).
* ``mc``    - running statistics, dropout sampled; one stochastic pass of
  the Monte-Carlo predictive distribution.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .rng import RngStream

__all__ = [
    "SegNet",
    "build_model",
    "softmax",
    "mc_predict",
    "CLASS_COUNT",
    "CONV_CHANNELS",
    "ENCODER_WIDTHS",
    "DECODER_WIDTHS",
    "DROPOUT_SITES",
    "REGULARIZER_SITES",
    "POOL_FACTOR",
]

CLASS_COUNT = 12
POOL_FACTOR = 32  # five 2x2 pools
INIT_DROP_PROB = 0.1

# (in_channels, out_channels) per convolution. conv26 outputs one channel
# per segmentation class rather than a 64-wide feature map: class logits
# are the whole point of the final layer.
CONV_CHANNELS = {
    1: (3, 64),
    2: (64, 64),
    3: (64, 128),
    4: (128, 128),
    5: (128, 256),
    6: (256, 256),
    7: (256, 256),
    8: (256, 512),
    9: (512, 512),
    10: (512, 512),
    11: (512, 512),
    12: (512, 512),
    13: (512, 512),
    14: (512, 512),
    15: (512, 512),
    16: (512, 512),
    17: (512, 512),
    18: (512, 512),
    19: (512, 512),
    20: (512, 256),
    21: (256, 256),
    22: (256, 256),
    23: (256, 128),
    24: (128, 128),
    25: (128, 64),
    26: (64, CLASS_COUNT),
}

ENCODER_WIDTHS = [64, 64, 128, 128, 256, 256, 256, 512, 512, 512, 512, 512, 512]
DECODER_WIDTHS = [512, 512, 512, 512, 512, 512, 256, 256, 256, 128, 128, 64, CLASS_COUNT]

# Execution order: ("conv", i), ("pool", k) or ("unpool", k).
PLAN = (
    [("conv", 1), ("conv", 2), ("pool", 1)]
    + [("conv", 3), ("conv", 4), ("pool", 2)]
    + [("conv", 5), ("conv", 6), ("conv", 7), ("pool", 3)]
    + [("conv", 8), ("conv", 9), ("conv", 10), ("pool", 4)]
    + [("conv", 11), ("conv", 12), ("conv", 13), ("pool", 5)]
    + [("unpool", 1), ("conv", 14), ("conv", 15), ("conv", 16)]
    + [("unpool", 2), ("conv", 17), ("conv", 18), ("conv", 19)]
    + [("unpool", 3), ("conv", 20), ("conv", 21), ("conv", 22)]
    + [("unpool", 4), ("conv", 23), ("conv", 24)]
    + [("unpool", 5), ("conv", 25), ("conv", 26)]
)

# Dropout site name by the conv block it follows.
DROPOUT_SITES = {13: "dropout_center", 25: "dropout_output"}

# (site, weights of the layer consuming the dropped activations, channels).
REGULARIZER_SITES = [
    ("dropout_center", "conv14.weight", 512),
    ("dropout_output", "conv26.weight", 64),
]

LINEAR_CONVS = {26}  # no batch norm, no ReLU


def _logit(p: float) -> float:
    return float(np.log(p) - np.log1p(-p))


def softmax(logits: np.ndarray, axis: int = 1) -> np.ndarray:
    shifted = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


class SegNet:
    """Parameter container plus forward/backward over the fixed layer plan.

    ``params`` holds every trainable array (conv weights and biases, batch
    norm scale/shift, the two dropout logits); ``stats`` holds the batch
    norm running estimates.  Gradients accumulate in ``grads`` after
    :meth:`backward`.
    """

    def __init__(self, dtype=np.float64):
        self.dtype = dtype
        self.class_count = CLASS_COUNT
        self.temperature = kernels.DEFAULT_TEMPERATURE
        # Conv weights are stored in the kernels' compute layout
        # [3, 3, in_ch, out_ch]; the public registry (named_entries,
        # checkpoints) presents them as [out_ch, in_ch, 3, 3] views.
        self.params: dict[str, np.ndarray] = {}
        self.stats: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._tape = None
        for i in range(1, 27):
            cin, cout = CONV_CHANNELS[i]
            self.params[f"conv{i}.weight"] = np.zeros((3, 3, cin, cout), dtype=dtype)
            self.params[f"conv{i}.bias"] = np.zeros(cout, dtype=dtype)
            if i not in LINEAR_CONVS:
                self.params[f"bn{i}.gamma"] = np.ones(cout, dtype=dtype)
                self.params[f"bn{i}.beta"] = np.zeros(cout, dtype=dtype)
                self.stats[f"bn{i}.running_mean"] = np.zeros(cout, dtype=dtype)
                self.stats[f"bn{i}.running_var"] = np.ones(cout, dtype=dtype)
        for site in DROPOUT_SITES.values():
            self.params[f"{site}.p_logit"] = np.full(1, _logit(INIT_DROP_PROB), dtype=dtype)

    def conv_weight(self, i: int) -> np.ndarray:
        """Kernel of convolution ``i`` as an [out_ch, in_ch, 3, 3] view."""
        return self.params[f"conv{i}.weight"].transpose(3, 2, 0, 1)

    # -- introspection -----------------------------------------------------

    def parameter_count(self) -> int:
        return int(sum(a.size for a in self.params.values()))

    def drop_probability(self, site: str) -> float:
        return float(kernels.sigmoid(self.params[f"{site}.p_logit"])[0])

    def named_entries(self):
        """All persistable arrays (parameters then running stats), in a
        fixed, reproducible order.  Conv weights appear as their public
        [out_ch, in_ch, 3, 3] views; writing into them updates the model."""
        for i in range(1, 27):
            yield f"conv{i}.weight", self.conv_weight(i)
            yield f"conv{i}.bias", self.params[f"conv{i}.bias"]
            if i not in LINEAR_CONVS:
                yield f"bn{i}.gamma", self.params[f"bn{i}.gamma"]
                yield f"bn{i}.beta", self.params[f"bn{i}.beta"]
                yield f"bn{i}.running_mean", self.stats[f"bn{i}.running_mean"]
                yield f"bn{i}.running_var", self.stats[f"bn{i}.running_var"]
        for site in DROPOUT_SITES.values():
            yield f"{site}.p_logit", self.params[f"{site}.p_logit"]

    def cast(self, dtype) -> "SegNet":
        """Copy of the model with all arrays converted (e.g. float32 inference)."""
        other = SegNet(dtype=dtype)
        for name, arr in self.params.items():
            other.params[name] = arr.astype(dtype)
        for name, arr in self.stats.items():
            other.stats[name] = arr.astype(dtype)
        return other

    # -- execution ---------------------------------------------------------

    def forward(
        self,
        x: np.ndarray,
        mode: str = "eval",
        rng: RngStream | None = None,
        update_stats: bool = True,
    ) -> np.ndarray:
        if mode not in ("train", "eval", "mc"):
            raise ValueError(f"unknown mode {mode!r}")
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim != 4 or x.shape[1] != 3:
            raise ValueError(f"expected input [N, 3, H, W], got {x.shape}")
        n, _, h, w = x.shape
        if h % POOL_FACTOR or w % POOL_FACTOR:
            raise ValueError("input must be divisible by 32")
        sample_dropout = mode in ("train", "mc")
        if sample_dropout and rng is None:
            raise ValueError(f"mode {mode!r} needs an RngStream for dropout sampling")
        train = mode == "train"
        tape = [] if train else None
        pool_store: dict[int, tuple[np.ndarray, tuple[int, int]]] = {}

        # Compute runs channels-last; only the public boundary is [N, C, H, W].
        out = np.ascontiguousarray(x.transpose(0, 2, 3, 1))
        for kind, i in PLAN:
            if kind == "conv":
                out, cache = kernels.conv_forward(
                    out, self.params[f"conv{i}.weight"], self.params[f"conv{i}.bias"]
                )
                if train:
                    tape.append(("conv", i, cache))
                if i not in LINEAR_CONVS:
                    out, bn_cache, new_mean, new_var = kernels.batchnorm_forward(
                        out,
                        self.params[f"bn{i}.gamma"],
                        self.params[f"bn{i}.beta"],
                        self.stats[f"bn{i}.running_mean"],
                        self.stats[f"bn{i}.running_var"],
                        train=train,
                        update_stats=update_stats,
                    )
                    if train:
                        self.stats[f"bn{i}.running_mean"] = new_mean
                        self.stats[f"bn{i}.running_var"] = new_var
                        tape.append(("bn", i, bn_cache))
                    out, mask = kernels.relu_forward(out)
                    if train:
                        tape.append(("relu", i, mask))
                    site = DROPOUT_SITES.get(i)
                    if site is not None and sample_dropout:
                        out, dcache = kernels.concrete_dropout_forward(
                            out,
                            self.params[f"{site}.p_logit"][0],
                            rng.child(site),
                            temperature=self.temperature,
                        )
                        if train:
                            tape.append(("dropout", site, dcache))
            elif kind == "pool":
                in_hw = (out.shape[1], out.shape[2])
                out, idx = kernels.maxpool_forward(out)
                pool_store[i] = (idx, in_hw)
                if train:
                    tape.append(("pool", i, idx, in_hw))
            else:  # unpool k consumes the indices of pool 6-k
                idx, target_hw = pool_store.pop(6 - i)
                # The decoder arrives at the later unpool stages with twice
                # the channels the paired pool recorded; the index planes
                # are tiled across the channel axis to cover them.
                c_dec, c_idx = out.shape[3], idx.shape[3]
                if c_dec != c_idx:
                    if c_dec % c_idx:
                        raise ValueError(
                            f"unpool {i}: {c_dec} channels cannot reuse {c_idx} index planes"
                        )
                    idx = np.tile(idx, (1, 1, 1, c_dec // c_idx))
                out = kernels.maxunpool_forward(out, idx, target_hw)
                if train:
                    tape.append(("unpool", i, idx))
        self._tape = tape
        return np.ascontiguousarray(out.transpose(0, 3, 1, 2))

    def zero_grads(self) -> None:
        if self.grads:
            for arr in self.grads.values():
                arr[...] = 0.0
        else:
            self.grads = {name: np.zeros_like(arr) for name, arr in self.params.items()}

    def backward(self, dlogits: np.ndarray) -> np.ndarray:
        """Backpropagate through the tape of the last train-mode forward.

        Accumulates parameter gradients into ``grads`` and returns the
        gradient with respect to the network input.
        """
        if self._tape is None:
            raise RuntimeError("backward requires a preceding train-mode forward")
        if not self.grads:
            self.zero_grads()
        d = np.ascontiguousarray(np.asarray(dlogits, dtype=self.dtype).transpose(0, 2, 3, 1))
        for entry in reversed(self._tape):
            kind = entry[0]
            if kind == "conv":
                _, i, cache = entry
                d, dw33, db = kernels.conv_backward(d, cache)
                self.grads[f"conv{i}.weight"] += dw33
                self.grads[f"conv{i}.bias"] += db
            elif kind == "bn":
                _, i, cache = entry
                d, dgamma, dbeta = kernels.batchnorm_backward(d, cache)
                self.grads[f"bn{i}.gamma"] += dgamma
                self.grads[f"bn{i}.beta"] += dbeta
            elif kind == "relu":
                d = kernels.relu_backward(d, entry[2])
            elif kind == "dropout":
                _, site, cache = entry
                d, dp = kernels.concrete_dropout_backward(d, cache)
                self.grads[f"{site}.p_logit"][0] += dp
            elif kind == "pool":
                _, _, idx, in_hw = entry
                d = kernels.maxpool_backward(d, idx, in_hw)
            else:  # unpool
                d = kernels.maxunpool_backward(d, entry[2])
        self._tape = None
        return np.ascontiguousarray(d.transpose(0, 3, 1, 2))


def build_model(seed: int) -> SegNet:
    """Fresh model with fan-in-scaled Gaussian weights drawn from ``seed``."""
    model = SegNet()
    root = RngStream(seed).child("init")
    for i in range(1, 27):
        cin, cout = CONV_CHANNELS[i]
        std = float(np.sqrt(2.0 / (cin * 9)))
        model.params[f"conv{i}.weight"] = root.child(f"conv{i}.weight").normal(
            (3, 3, cin, cout), std=std
        )
    return model


def mc_predict(model: SegNet, x: np.ndarray, passes: int, rng: RngStream):
    """Monte-Carlo predictive mean and per-class variance for one image.

    Runs ``passes`` stochastic mc-mode forwards, applies a class softmax to
    each, and reduces across passes.  Returns (mean_prob, variance), both
    [class_count, H, W].  The variance is the population variance over the
    sampled passes, so a single pass yields exactly zero.
    """
    if passes < 1:
        raise ValueError("sample count must be >= 1")
    x = np.asarray(x, dtype=model.dtype)
    if x.ndim != 4 or x.shape[0] != 1:
        raise ValueError(f"expected a single image [1, 3, H, W], got {x.shape}")
    total = None
    total_sq = None
    for t in range(passes):
        logits = model.forward(x, mode="mc", rng=rng.child(f"pass{t}"))
        prob = softmax(logits, axis=1)[0]
        if total is None:
            total = prob.copy()
            total_sq = prob * prob
        else:
            total += prob
            total_sq += prob * prob
    mean = total / passes
    var = np.maximum(total_sq / passes - mean * mean, 0.0)
    return mean, var
