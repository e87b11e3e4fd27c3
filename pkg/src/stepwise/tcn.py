"""Multi-stage causal temporal convolutional network in plain numpy.

Each stage is a 1x1 input projection, ``L`` residual layers of
(dilated causal conv -> ReLU -> 1x1 conv -> residual add) with dilation
``2**l``, and a 1x1 classifier. Stage ``s > 1`` consumes the softmax output
of stage ``s - 1``.

Two contraction kernels are used. Inference goes through ``np.einsum``
without BLAS, whose per-row result does not depend on how many rows are
contracted at once; this is what makes streaming and offline logits
bit-identical. Training uses ``np.matmul`` for speed.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

KERNEL_WIDTH = 3

Contract = Callable[[np.ndarray, np.ndarray], np.ndarray]


def _einsum_contract(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    return np.einsum("tc,ch->th", x, w, optimize=False)


def _blas_contract(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    return x @ w


@dataclass
class FeatureSequence:
    data: np.ndarray
    frame_rate: float = 30.0

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2 or self.data.shape[0] < 1 or self.data.shape[1] < 1:
            raise ValueError(f"features must be a non-empty T x D matrix, got shape {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("features contain non-finite values")
        if not self.frame_rate > 0:
            raise ValueError(f"frame_rate must be positive, got {self.frame_rate}")

    def __len__(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


@dataclass
class LayerParams:
    conv_w: np.ndarray  # (3, H, H); taps for t-2d, t-d, t
    conv_b: np.ndarray
    res_w: np.ndarray
    res_b: np.ndarray

    def arrays(self) -> list[np.ndarray]:
        return [self.conv_w, self.conv_b, self.res_w, self.res_b]


@dataclass
class StageParams:
    in_w: np.ndarray
    in_b: np.ndarray
    layers: list[LayerParams]
    out_w: np.ndarray
    out_b: np.ndarray

    @property
    def input_dim(self) -> int:
        return self.in_w.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.in_w.shape[1]

    @property
    def num_classes(self) -> int:
        return self.out_w.shape[1]

    def arrays(self) -> list[np.ndarray]:
        out = [self.in_w, self.in_b]
        for layer in self.layers:
            out.extend(layer.arrays())
        out.extend([self.out_w, self.out_b])
        return out


@dataclass
class CausalTcnModel:
    stages: list[StageParams] = field(default_factory=list)

    @classmethod
    def init(
        cls,
        input_dim: int,
        num_classes: int,
        num_stages: int = 4,
        num_layers: int = 10,
        hidden_dim: int = 64,
        seed: int | np.random.Generator = 0,
    ) -> "CausalTcnModel":
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation for weights and biases."""
        if num_stages < 1 or num_layers < 1 or hidden_dim < 1 or num_classes < 2 or input_dim < 1:
            raise ValueError("need num_stages, num_layers, hidden_dim, input_dim >= 1 and num_classes >= 2")
        rng = np.random.default_rng(seed)

        def uni(shape, fan_in):
            bound = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-bound, bound, size=shape)

        H, K = hidden_dim, num_classes
        stages = []
        for s in range(num_stages):
            C = input_dim if s == 0 else K
            layers = [
                LayerParams(
                    conv_w=uni((KERNEL_WIDTH, H, H), KERNEL_WIDTH * H),
                    conv_b=uni((H,), KERNEL_WIDTH * H),
                    res_w=uni((H, H), H),
                    res_b=uni((H,), H),
                )
                for _ in range(num_layers)
            ]
            stages.append(StageParams(uni((C, H), C), uni((H,), C), layers, uni((H, K), H), uni((K,), H)))
        return cls(stages)

    @property
    def num_stages(self) -> int:
        return len(self.stages)

    @property
    def num_layers(self) -> int:
        return len(self.stages[0].layers)

    @property
    def hidden_dim(self) -> int:
        return self.stages[0].hidden_dim

    @property
    def num_classes(self) -> int:
        return self.stages[0].num_classes

    @property
    def input_dim(self) -> int:
        return self.stages[0].input_dim

    @property
    def receptive_field(self) -> int:
        """Number of input frames (including the current one) that can influence the last output."""
        per_stage = 2 * (2**self.num_layers - 1)
        return self.num_stages * per_stage + 1

    def parameters(self) -> list[np.ndarray]:
        out = []
        for stage in self.stages:
            out.extend(stage.arrays())
        return out

    def map(self, fn: Callable[[np.ndarray], np.ndarray]) -> "CausalTcnModel":
        # fn is called in parameters() order so unflatten can consume a flat vector
        stages = []
        for st in self.stages:
            in_w, in_b = fn(st.in_w), fn(st.in_b)
            layers = [LayerParams(*[fn(a) for a in layer.arrays()]) for layer in st.layers]
            stages.append(StageParams(in_w, in_b, layers, fn(st.out_w), fn(st.out_b)))
        return CausalTcnModel(stages)

    def copy(self) -> "CausalTcnModel":
        return self.map(np.copy)

    def zeros_like(self) -> "CausalTcnModel":
        return self.map(np.zeros_like)

    def validate(self) -> None:
        if not self.stages:
            raise ValueError("model has no stages")
        H, K, L = self.hidden_dim, self.num_classes, self.num_layers
        for s, st in enumerate(self.stages):
            expected_in = self.input_dim if s == 0 else K
            if st.in_w.shape != (expected_in, H) or st.out_w.shape != (H, K) or len(st.layers) != L:
                raise ValueError(f"stage {s} has inconsistent shapes")
            for layer in st.layers:
                if layer.conv_w.shape != (KERNEL_WIDTH, H, H) or layer.res_w.shape != (H, H):
                    raise ValueError(f"stage {s} layer shapes inconsistent")
        for a in self.parameters():
            if not np.all(np.isfinite(a)):
                raise ValueError("model contains non-finite weights")


@dataclass
class StageOutput:
    logits: np.ndarray
    probs: np.ndarray


def softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _shift(x: np.ndarray, s: int) -> np.ndarray:
    """Delay ``x`` by ``s`` frames along axis 0 with zero fill."""
    out = np.zeros_like(x)
    if s < x.shape[0]:
        out[s:] = x[: x.shape[0] - s]
    return out


def _advance(g: np.ndarray, s: int) -> np.ndarray:
    """Adjoint of ``_shift``: out[t] = g[t + s]."""
    out = np.zeros_like(g)
    if s < g.shape[0]:
        out[: g.shape[0] - s] = g[s:]
    return out


def _stack_taps(x: np.ndarray, dilation: int) -> np.ndarray:
    return np.concatenate([_shift(x, 2 * dilation), _shift(x, dilation), x], axis=1)


def _check_finite(x: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(x)):
        bad = np.argwhere(~np.isfinite(x))[0]
        raise ValueError(f"{what} contains non-finite value at index {tuple(int(i) for i in bad)}")


def dilated_causal_conv(
    x: np.ndarray,
    kernel: np.ndarray,
    dilation: int,
    bias: np.ndarray | None = None,
) -> np.ndarray:
    """Width-3 causal convolution.

    ``kernel`` has shape (3, C, C') and its taps multiply x[t-2d], x[t-d] and
    x[t] respectively; frames before the start are zero.
    """
    x = np.asarray(x, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    if dilation < 1:
        raise ValueError(f"dilation must be >= 1, got {dilation}")
    if x.ndim != 2 or kernel.shape[:2] != (KERNEL_WIDTH, x.shape[1]):
        raise ValueError(f"kernel shape {kernel.shape} does not fit input shape {x.shape}")
    _check_finite(x, "conv input")
    C = x.shape[1]
    out = _einsum_contract(_stack_taps(x, dilation), kernel.reshape(KERNEL_WIDTH * C, -1))
    if bias is not None:
        out = out + bias
    return out


# ---------------------------------------------------------------- forward


@dataclass
class _LayerCache:
    taps: np.ndarray
    pre: np.ndarray
    act: np.ndarray


@dataclass
class _StageCache:
    x: np.ndarray
    layers: list[_LayerCache]
    final_hidden: np.ndarray


def _stage_forward(x: np.ndarray, st: StageParams, contract: Contract) -> tuple[StageOutput, _StageCache]:
    h = contract(x, st.in_w) + st.in_b
    caches = []
    for l, layer in enumerate(st.layers):
        taps = _stack_taps(h, 2**l)
        pre = contract(taps, layer.conv_w.reshape(-1, layer.conv_w.shape[2])) + layer.conv_b
        act = np.maximum(pre, 0.0)
        h = h + (contract(act, layer.res_w) + layer.res_b)
        caches.append(_LayerCache(taps, pre, act))
    logits = contract(h, st.out_w) + st.out_b
    return StageOutput(logits, softmax(logits)), _StageCache(x, caches, h)


def _as_matrix(features) -> np.ndarray:
    if isinstance(features, FeatureSequence):
        return features.data
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError(f"features must be a non-empty T x D matrix, got shape {x.shape}")
    _check_finite(x, "features")
    return x


def stage_forward(features, stage: StageParams) -> StageOutput:
    x = _as_matrix(features)
    if x.shape[1] != stage.input_dim:
        raise ValueError(f"feature width {x.shape[1]} does not match stage input width {stage.input_dim}")
    return _stage_forward(x, stage, _einsum_contract)[0]


def _model_forward(x: np.ndarray, model: CausalTcnModel, contract: Contract):
    if x.shape[1] != model.input_dim:
        raise ValueError(f"feature width {x.shape[1]} does not match model input width {model.input_dim}")
    outputs, caches = [], []
    inp = x
    for st in model.stages:
        out, cache = _stage_forward(inp, st, contract)
        outputs.append(out)
        caches.append(cache)
        inp = out.probs
    return outputs, caches


def model_forward(features, model: CausalTcnModel) -> list[StageOutput]:
    """Run every stage; returns one StageOutput per stage (last one is the final prediction)."""
    return _model_forward(_as_matrix(features), model, _einsum_contract)[0]


# ---------------------------------------------------------------- backward


def _stage_backward(d_logits: np.ndarray, st: StageParams, cache: _StageCache, grad: StageParams) -> np.ndarray:
    grad.out_w += cache.final_hidden.T @ d_logits
    grad.out_b += d_logits.sum(axis=0)
    dh = d_logits @ st.out_w.T
    for l in reversed(range(len(st.layers))):
        layer, lc, lg = st.layers[l], cache.layers[l], grad.layers[l]
        d = 2**l
        lg.res_w += lc.act.T @ dh
        lg.res_b += dh.sum(axis=0)
        d_pre = (dh @ layer.res_w.T) * (lc.pre > 0)
        H = layer.conv_w.shape[1]
        lg.conv_w += (lc.taps.T @ d_pre).reshape(layer.conv_w.shape)
        lg.conv_b += d_pre.sum(axis=0)
        d_taps = d_pre @ layer.conv_w.reshape(-1, layer.conv_w.shape[2]).T
        dh = dh + d_taps[:, 2 * H :] + _advance(d_taps[:, H : 2 * H], d) + _advance(d_taps[:, :H], 2 * d)
    grad.in_w += cache.x.T @ dh
    grad.in_b += dh.sum(axis=0)
    return dh @ st.in_w.T


def _softmax_backward(p: np.ndarray, dp: np.ndarray) -> np.ndarray:
    return p * (dp - np.sum(dp * p, axis=1, keepdims=True))


def backward_from_cache(
    model: CausalTcnModel,
    outputs: Sequence[StageOutput],
    caches: Sequence[_StageCache],
    prob_grads: Sequence[np.ndarray],
) -> CausalTcnModel:
    grad = model.zeros_like()
    carry = None
    for s in reversed(range(model.num_stages)):
        dp = np.asarray(prob_grads[s], dtype=np.float64)
        if carry is not None:
            dp = dp + carry
        dz = _softmax_backward(outputs[s].probs, dp)
        carry = _stage_backward(dz, model.stages[s], caches[s], grad.stages[s])
    return grad


def model_backward(features, model: CausalTcnModel, prob_grads: Sequence[np.ndarray]) -> CausalTcnModel:
    """Gradients of a scalar loss w.r.t. every parameter.

    ``prob_grads[s]`` is dLoss/dprobs for stage ``s`` (T x K). The result has
    the same structure as ``model``.
    """
    x = _as_matrix(features)
    if len(prob_grads) != model.num_stages:
        raise ValueError(f"expected {model.num_stages} upstream gradients, got {len(prob_grads)}")
    outputs, caches = _model_forward(x, model, _blas_contract)
    return backward_from_cache(model, outputs, caches, prob_grads)


def forward_for_training(x: np.ndarray, model: CausalTcnModel):
    return _model_forward(x, model, _blas_contract)


# ---------------------------------------------------------------- flat views


def flatten(model: CausalTcnModel) -> np.ndarray:
    return np.concatenate([a.ravel() for a in model.parameters()])


def unflatten(vec: np.ndarray, like: CausalTcnModel) -> CausalTcnModel:
    vec = np.asarray(vec, dtype=np.float64)
    pos = 0

    def take(a):
        nonlocal pos
        out = vec[pos : pos + a.size].reshape(a.shape).copy()
        pos += a.size
        return out

    model = like.map(take)
    if pos != vec.size:
        raise ValueError(f"vector has {vec.size} entries, model needs {pos}")
    return model


# ---------------------------------------------------------------- serialisation

MODEL_MAGIC = b"STPWTCN\x00"
MODEL_VERSION = 1
_HEADER = struct.Struct("<8sIIIIII")


def model_to_bytes(model: CausalTcnModel) -> bytes:
    model.validate()
    header = _HEADER.pack(
        MODEL_MAGIC, MODEL_VERSION, model.num_stages, model.num_layers,
        model.hidden_dim, model.num_classes, model.input_dim,
    )
    return header + flatten(model).astype("<f8").tobytes()


def model_from_bytes(data: bytes) -> CausalTcnModel:
    if len(data) < _HEADER.size:
        raise ValueError("model file truncated")
    magic, version, N, L, H, K, D = _HEADER.unpack_from(data)
    if magic != MODEL_MAGIC:
        raise ValueError("not a model file (bad magic)")
    if version != MODEL_VERSION:
        raise ValueError(f"unsupported model file version {version}")
    like = CausalTcnModel.init(D, K, N, L, H, seed=0)
    n = flatten(like).size
    body = data[_HEADER.size :]
    if len(body) != 8 * n:
        raise ValueError(f"model body has {len(body)} bytes, expected {8 * n}")
    model = unflatten(np.frombuffer(body, dtype="<f8").astype(np.float64), like)
    model.validate()
    return model


def save_model(model: CausalTcnModel, path) -> None:
    Path(path).write_bytes(model_to_bytes(model))


def load_model(path) -> CausalTcnModel:
    return model_from_bytes(Path(path).read_bytes())
