"""From-scratch feedforward networks with exact backprop and MC dropout.

Only the fixed topology this project needs: dense layers, ReLU/tanh/identity
activations, inverted dropout on any layer's output, ADAM and RMSProp.
Parameters are values; forward/backward are pure given a mask, and the
optimizer step returns fresh parameter and optimizer objects.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .errors import ContractViolation, DomainError

CHECKPOINT_FORMAT = "hexrecover-checkpoint-v1"

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
RMSPROP_DECAY = 0.99
RMSPROP_EPS = 1e-8

_ACTIVATIONS = ("relu", "tanh", "identity")


@dataclass(frozen=True)
class LayerSpec:
    width: int
    activation: str = "relu"
    dropout_rate: float = 0.0

    def __post_init__(self):
        if self.width < 1:
            raise DomainError(f"layer width must be positive, got {self.width}")
        if self.activation not in _ACTIVATIONS:
            raise DomainError(f"unknown activation {self.activation!r}")
        if not (0.0 <= self.dropout_rate < 1.0):
            raise DomainError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")


@dataclass(frozen=True)
class Layer:
    weights: np.ndarray  # (out, in)
    biases: np.ndarray  # (out,)
    spec: LayerSpec


@dataclass(frozen=True)
class NetworkParams:
    """Weights/biases for a dense feedforward stack, tagged actor or critic."""

    input_dim: int
    layers: tuple[Layer, ...]
    role: str = "critic"  # "actor" | "critic"

    def __post_init__(self):
        prev = self.input_dim
        for i, layer in enumerate(self.layers):
            w, b = layer.weights, layer.biases
            if w.shape != (layer.spec.width, prev):
                raise DomainError(
                    f"layer {i}: weight shape {w.shape} incompatible with fan-in {prev}"
                )
            if b.shape != (layer.spec.width,):
                raise DomainError(f"layer {i}: bias shape {b.shape} != ({layer.spec.width},)")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise DomainError(f"layer {i}: non-finite parameter entries")
            prev = layer.spec.width

    @property
    def output_dim(self) -> int:
        return self.layers[-1].spec.width

    @property
    def dropout_layers(self) -> tuple[int, ...]:
        return tuple(i for i, l in enumerate(self.layers) if l.spec.dropout_rate > 0.0)


def init_network(
    input_dim: int, specs: Sequence[LayerSpec], role: str, seed: int
) -> NetworkParams:
    """Seeded uniform init in +-1/sqrt(fan_in) for weights and biases."""
    rng = np.random.default_rng(seed)
    layers = []
    prev = input_dim
    for spec in specs:
        bound = 1.0 / np.sqrt(prev)
        w = rng.uniform(-bound, bound, size=(spec.width, prev))
        b = rng.uniform(-bound, bound, size=spec.width)
        layers.append(Layer(weights=w, biases=b, spec=spec))
        prev = spec.width
    return NetworkParams(input_dim=input_dim, layers=tuple(layers), role=role)


@dataclass(frozen=True)
class DropoutMask:
    """Per-unit keep flags for every dropout layer, regenerable from its seed."""

    seed: int
    keeps: dict  # layer index -> bool array of that layer's width

    @classmethod
    def from_seed(cls, params: NetworkParams, seed: int) -> "DropoutMask":
        rng = np.random.default_rng(seed)
        keeps = {}
        for i in params.dropout_layers:
            spec = params.layers[i].spec
            keeps[i] = rng.random(spec.width) >= spec.dropout_rate
        return cls(seed=seed, keeps=keeps)


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z


def _activate_grad(name: str, z: np.ndarray, h: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (z > 0.0).astype(float)
    if name == "tanh":
        return 1.0 - h * h
    return np.ones_like(z)


def _check_input(params: NetworkParams, x) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != params.input_dim:
        raise DomainError(
            f"input shape {np.shape(x)} incompatible with network input dim {params.input_dim}"
        )
    return arr, single


def _forward_cached(params, x, mask):
    """Returns (inputs per layer, pre-activations, post-dropout outputs)."""
    inputs = [x]
    zs = []
    h = x
    for i, layer in enumerate(params.layers):
        z = h @ layer.weights.T + layer.biases
        h = _activate(layer.spec.activation, z)
        if mask is not None and i in mask.keeps:
            h = h * (mask.keeps[i] / (1.0 - layer.spec.dropout_rate))
        zs.append(z)
        inputs.append(h)
    return inputs, zs


def forward(
    params: NetworkParams, x, mask: Optional[DropoutMask] = None
) -> np.ndarray:
    """Evaluate the network on a vector (d,) or a batch (n, d).

    A mask rescales kept units by 1/keep_rate (inverted dropout), so the
    expectation over masks of a linear layer equals the unmasked output.
    """
    arr, single = _check_input(params, x)
    inputs, _ = _forward_cached(params, arr, mask)
    out = inputs[-1]
    return out[0] if single else out


@dataclass(frozen=True)
class NetworkGradients:
    """Exact gradients of sum(output * upstream) w.r.t. every parameter.

    ``input_grad`` carries d(objective)/d(input); the deterministic policy
    update chains it through the critic's action inputs.
    """

    layers: tuple[tuple[np.ndarray, np.ndarray], ...]  # (dW, db) per layer
    input_grad: np.ndarray


def backward(
    params: NetworkParams,
    x,
    upstream,
    mask: Optional[DropoutMask] = None,
) -> NetworkGradients:
    """Reverse-mode gradients of sum over the batch of output . upstream."""
    arr, single = _check_input(params, x)
    up = np.asarray(upstream, dtype=float)
    if single:
        up = up[None, :] if up.ndim == 1 else up
    if up.shape != (arr.shape[0], params.output_dim):
        raise DomainError(
            f"upstream shape {np.shape(upstream)} incompatible with output dim "
            f"{params.output_dim} and batch {arr.shape[0]}"
        )
    inputs, zs = _forward_cached(params, arr, mask)
    grad_layers: list = [None] * len(params.layers)
    g = up
    for i in range(len(params.layers) - 1, -1, -1):
        layer = params.layers[i]
        if mask is not None and i in mask.keeps:
            g = g * (mask.keeps[i] / (1.0 - layer.spec.dropout_rate))
        h_pre_dropout = _activate(layer.spec.activation, zs[i])
        dz = g * _activate_grad(layer.spec.activation, zs[i], h_pre_dropout)
        grad_layers[i] = (dz.T @ inputs[i], dz.sum(axis=0))
        g = dz @ layer.weights
    input_grad = g[0] if single else g
    return NetworkGradients(layers=tuple(grad_layers), input_grad=input_grad)


def forward_mask_stack(
    params: NetworkParams, x, masks: Sequence[DropoutMask]
) -> np.ndarray:
    """Evaluate a batch under several masks at once: returns (n_masks, n, out).

    Equivalent to stacking forward(params, x, m) over masks; kept vectorized
    because Thompson selection calls it every environment step.
    """
    arr, _ = _check_input(params, x)
    h = arr  # (n, d) until the first dropout layer, then (k, n, d)
    k = len(masks)
    for i, layer in enumerate(params.layers):
        z = h @ layer.weights.T + layer.biases
        h = _activate(layer.spec.activation, z)
        if layer.spec.dropout_rate > 0.0:
            factors = np.stack(
                [m.keeps.get(i, np.ones(layer.spec.width, dtype=bool)) for m in masks]
            ) / (1.0 - layer.spec.dropout_rate)
            h = h[None, :, :] * factors[:, None, :] if h.ndim == 2 else h * factors[:, None, :]
    if h.ndim == 2:  # no dropout layer was hit
        h = np.broadcast_to(h, (k,) + h.shape)
    return h


def mc_dropout_q_samples(
    critic: NetworkParams, state, action, n: int, seed: int
) -> np.ndarray:
    """n forward passes of the critic under independently seeded dropout masks.

    The returned vector is the empirical posterior over Q(state, action) that
    Thompson selection and the improvement probability consume.
    """
    if n < 1:
        raise DomainError(f"need n >= 1 posterior samples, got {n}")
    if not critic.dropout_layers:
        raise ContractViolation(
            "critic has no dropout layer; its Q posterior is undefined"
        )
    x = np.concatenate([np.asarray(state, float).ravel(), np.asarray(action, float).ravel()])
    mask_seeds = np.random.SeedSequence(seed).generate_state(n, dtype=np.uint64)
    masks = [DropoutMask.from_seed(critic, int(s)) for s in mask_seeds]
    out = forward_mask_stack(critic, x[None, :], masks)  # (n, 1, out)
    return out[:, 0, 0].copy()


# --- optimizers -----------------------------------------------------------


@dataclass(frozen=True)
class OptimizerState:
    """ADAM or RMSProp accumulator state for one network."""

    variant: str  # "adam" | "rmsprop"
    learning_rate: float
    step_count: int
    slots: tuple  # per layer: tuple of (w_slot, b_slot) arrays

    def __post_init__(self):
        if self.variant not in ("adam", "rmsprop"):
            raise DomainError(f"unknown optimizer variant {self.variant!r}")
        if self.learning_rate <= 0.0:
            raise DomainError(f"learning_rate must be positive, got {self.learning_rate}")


def init_optimizer(params: NetworkParams, variant: str, learning_rate: float) -> OptimizerState:
    n_slots = 2 if variant == "adam" else 1  # adam: (m, v); rmsprop: (s,)
    slots = tuple(
        tuple(
            (np.zeros_like(layer.weights), np.zeros_like(layer.biases))
            for _ in range(n_slots)
        )
        for layer in params.layers
    )
    return OptimizerState(variant=variant, learning_rate=learning_rate, step_count=0, slots=slots)


def optimize_step(
    params: NetworkParams,
    grads: NetworkGradients,
    opt: OptimizerState,
) -> tuple[NetworkParams, OptimizerState]:
    """One ADAM/RMSProp update; returns fresh params and optimizer state."""
    if len(grads.layers) != len(params.layers):
        raise DomainError("gradient structure does not match parameter structure")
    for i, (dw, db) in enumerate(grads.layers):
        if dw.shape != params.layers[i].weights.shape or db.shape != params.layers[i].biases.shape:
            raise DomainError(f"gradient shape mismatch in layer {i}")
        if not (np.isfinite(dw).all() and np.isfinite(db).all()):
            err = DomainError(f"non-finite gradient in layer {i}")
            err.layer_index = i
            raise err

    lr = opt.learning_rate
    t = opt.step_count + 1
    new_layers = []
    new_slots = []
    for layer, (dw, db), slot in zip(params.layers, grads.layers, opt.slots):
        if opt.variant == "adam":
            (m_w, m_b), (v_w, v_b) = slot
            m_w = ADAM_BETA1 * m_w + (1 - ADAM_BETA1) * dw
            m_b = ADAM_BETA1 * m_b + (1 - ADAM_BETA1) * db
            v_w = ADAM_BETA2 * v_w + (1 - ADAM_BETA2) * dw * dw
            v_b = ADAM_BETA2 * v_b + (1 - ADAM_BETA2) * db * db
            mc = 1 - ADAM_BETA1**t
            vc = 1 - ADAM_BETA2**t
            w = layer.weights - lr * (m_w / mc) / (np.sqrt(v_w / vc) + ADAM_EPS)
            b = layer.biases - lr * (m_b / mc) / (np.sqrt(v_b / vc) + ADAM_EPS)
            new_slots.append(((m_w, m_b), (v_w, v_b)))
        else:
            ((s_w, s_b),) = slot
            s_w = RMSPROP_DECAY * s_w + (1 - RMSPROP_DECAY) * dw * dw
            s_b = RMSPROP_DECAY * s_b + (1 - RMSPROP_DECAY) * db * db
            w = layer.weights - lr * dw / (np.sqrt(s_w) + RMSPROP_EPS)
            b = layer.biases - lr * db / (np.sqrt(s_b) + RMSPROP_EPS)
            new_slots.append(((s_w, s_b),))
        new_layers.append(Layer(weights=w, biases=b, spec=layer.spec))
    new_params = NetworkParams(
        input_dim=params.input_dim, layers=tuple(new_layers), role=params.role
    )
    new_opt = OptimizerState(
        variant=opt.variant, learning_rate=lr, step_count=t, slots=tuple(new_slots)
    )
    return new_params, new_opt


# --- checkpoints ----------------------------------------------------------
#
# A checkpoint is a directory with manifest.json (shapes, layer specs,
# optimizer variants, arbitrary metadata) and weights.bin, a concatenation of
# little-endian float64 blobs referenced by offset from the manifest.


def _spec_to_json(spec: LayerSpec) -> dict:
    return {
        "width": spec.width,
        "activation": spec.activation,
        "dropout_rate": spec.dropout_rate,
    }


def save_checkpoint(
    path: str,
    networks: dict[str, NetworkParams],
    optimizers: Optional[dict[str, OptimizerState]] = None,
    meta: Optional[dict] = None,
) -> None:
    os.makedirs(path, exist_ok=True)
    blob = bytearray()
    arrays: list[dict] = []

    def put(arr: np.ndarray) -> int:
        idx = len(arrays)
        raw = np.ascontiguousarray(arr, dtype="<f8")
        arrays.append({"shape": list(arr.shape), "offset": len(blob), "nbytes": raw.nbytes})
        blob.extend(raw.tobytes())
        return idx

    manifest: dict = {"format": CHECKPOINT_FORMAT, "networks": {}, "optimizers": {}}
    for name in sorted(networks):
        net = networks[name]
        manifest["networks"][name] = {
            "role": net.role,
            "input_dim": net.input_dim,
            "layers": [
                {"spec": _spec_to_json(l.spec), "weights": put(l.weights), "biases": put(l.biases)}
                for l in net.layers
            ],
        }
    for name in sorted(optimizers or {}):
        opt = optimizers[name]
        manifest["optimizers"][name] = {
            "variant": opt.variant,
            "learning_rate": opt.learning_rate,
            "step_count": opt.step_count,
            "slots": [
                [[put(w_slot), put(b_slot)] for (w_slot, b_slot) in layer_slots]
                for layer_slots in opt.slots
            ],
        }
    manifest["arrays"] = arrays
    manifest["meta"] = meta or {}
    with open(os.path.join(path, "weights.bin"), "wb") as fh:
        fh.write(bytes(blob))
    with open(os.path.join(path, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)


def load_checkpoint(
    path: str,
) -> tuple[dict[str, NetworkParams], dict[str, OptimizerState], dict]:
    with open(os.path.join(path, "manifest.json")) as fh:
        manifest = json.load(fh)
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise DomainError(f"unsupported checkpoint format {manifest.get('format')!r}")
    with open(os.path.join(path, "weights.bin"), "rb") as fh:
        blob = fh.read()

    def get(idx: int) -> np.ndarray:
        entry = manifest["arrays"][idx]
        arr = np.frombuffer(
            blob, dtype="<f8", count=entry["nbytes"] // 8, offset=entry["offset"]
        )
        return arr.reshape(entry["shape"]).copy()

    networks = {}
    for name, net in manifest["networks"].items():
        layers = tuple(
            Layer(
                weights=get(l["weights"]),
                biases=get(l["biases"]),
                spec=LayerSpec(**l["spec"]),
            )
            for l in net["layers"]
        )
        networks[name] = NetworkParams(
            input_dim=net["input_dim"], layers=layers, role=net["role"]
        )
    optimizers = {}
    for name, opt in manifest["optimizers"].items():
        slots = tuple(
            tuple((get(w_idx), get(b_idx)) for w_idx, b_idx in layer_slots)
            for layer_slots in opt["slots"]
        )
        optimizers[name] = OptimizerState(
            variant=opt["variant"],
            learning_rate=opt["learning_rate"],
            step_count=opt["step_count"],
            slots=slots,
        )
    return networks, optimizers, manifest.get("meta", {})
