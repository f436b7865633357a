"""
Minimal multilayer perceptron encoder with exact manual backprop.

Hidden layers use ReLU, the output layer is affine. The descriptor-level
gradient handed to `mlp_backward` is where GRM plugs in.
"""
from dataclasses import dataclass, field
from pathlib import Path
import itertools
import logging
import struct

import numpy as np

from .exceptions import DimensionMismatchError, FormatError, InvalidInputError, StaleCacheError

logger = logging.getLogger("rectification")

CHECKPOINT_MAGIC = b"GRMM"
CHECKPOINT_VERSION = 1

_versions = itertools.count(1)


class MlpEncoder:
    def __init__(self, weights, biases):
        if len(weights) != len(biases) or not weights:
            raise InvalidInputError("encoder needs one bias vector per weight matrix")
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        for index, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise InvalidInputError(f"layer {index}: weight {w.shape} and bias {b.shape} disagree")
            if index and w.shape[0] != self.weights[index - 1].shape[1]:
                raise DimensionMismatchError(f"layer {index} input", self.weights[index - 1].shape[1], w.shape[0])
        self.version = next(_versions)

    @classmethod
    def initialize(cls, layer_sizes, rng):
        """He-initialized weights, zero biases"""
        if len(layer_sizes) < 2 or min(layer_sizes) < 1:
            raise InvalidInputError(f"invalid layer sizes {layer_sizes}")
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            weights.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases)

    @property
    def layer_sizes(self):
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def input_dim(self):
        return self.weights[0].shape[0]

    @property
    def output_dim(self):
        return self.weights[-1].shape[1]

    def parameters(self):
        """Flat parameter list: w0, b0, w1, b1, ..."""
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def set_parameters(self, params):
        if len(params) != 2 * len(self.weights):
            raise InvalidInputError(f"expected {2 * len(self.weights)} parameter arrays, got {len(params)}")
        self.weights = [np.asarray(p, dtype=np.float64) for p in params[0::2]]
        self.biases = [np.asarray(p, dtype=np.float64) for p in params[1::2]]
        self.version = next(_versions)

    def copy(self):
        return MlpEncoder([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def encode(self, inputs):
        """Inference-only forward pass"""
        descriptors, _ = mlp_forward(self, inputs)
        return descriptors


@dataclass
class ForwardCache:
    encoder_version: int
    layer_inputs: list = field(default_factory=list)
    pre_activations: list = field(default_factory=list)


def mlp_forward(encoder, inputs):
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim == 1:
        inputs = inputs[None, :]
    if inputs.shape[1] != encoder.input_dim:
        raise DimensionMismatchError("encoder input", encoder.input_dim, inputs.shape[1])

    cache = ForwardCache(encoder_version=encoder.version)
    activations = inputs
    last = len(encoder.weights) - 1
    for index, (w, b) in enumerate(zip(encoder.weights, encoder.biases)):
        cache.layer_inputs.append(activations)
        z = activations @ w + b
        cache.pre_activations.append(z)
        activations = z if index == last else np.maximum(z, 0.0)
    return activations, cache


def mlp_backward(encoder, cache, descriptor_gradients):
    """Chain-rule gradients [dw0, db0, dw1, db1, ...] for the given descriptor gradients"""
    if cache.encoder_version != encoder.version:
        raise StaleCacheError(
            f"forward cache was built for encoder version {cache.encoder_version}, "
            f"encoder is at {encoder.version}"
        )
    upstream = np.asarray(descriptor_gradients, dtype=np.float64)
    if upstream.ndim == 1:
        upstream = upstream[None, :]
    expected = cache.pre_activations[-1].shape
    if upstream.shape != expected:
        raise DimensionMismatchError("descriptor gradients", expected, upstream.shape)

    grads = [None] * (2 * len(encoder.weights))
    for index in reversed(range(len(encoder.weights))):
        if index != len(encoder.weights) - 1:
            upstream = upstream * (cache.pre_activations[index] > 0.0)
        grads[2 * index] = cache.layer_inputs[index].T @ upstream
        grads[2 * index + 1] = upstream.sum(axis=0)
        upstream = upstream @ encoder.weights[index].T
    return grads


def l2_normalize(descriptors):
    norms = np.linalg.norm(descriptors, axis=1, keepdims=True)
    return descriptors / np.maximum(norms, 1e-12), norms


def l2_normalize_backward(normalized, norms, gradients):
    """Backprop through x / ||x|| given the normalized output"""
    radial = np.einsum("ij,ij->i", normalized, gradients)[:, None]
    return (gradients - normalized * radial) / np.maximum(norms, 1e-12)


def save_checkpoint(encoder, path):
    """magic, version byte, u32 layer count, u32 sizes, then float64 LE parameters"""
    sizes = encoder.layer_sizes
    with open(path, "wb") as handle:
        handle.write(CHECKPOINT_MAGIC)
        handle.write(struct.pack("<B", CHECKPOINT_VERSION))
        handle.write(struct.pack("<I", len(sizes)))
        handle.write(struct.pack(f"<{len(sizes)}I", *sizes))
        for w, b in zip(encoder.weights, encoder.biases):
            handle.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            handle.write(np.ascontiguousarray(b, dtype="<f8").tobytes())
    logger.info(f"Checkpoint with layers {sizes} written to {path}")


def load_checkpoint(path):
    data = Path(path).read_bytes()
    if data[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path} is not an encoder checkpoint")
    if len(data) < 9 or data[4] != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version")
    (count,) = struct.unpack_from("<I", data, 5)
    offset = 9
    try:
        sizes = struct.unpack_from(f"<{count}I", data, offset)
    except struct.error as exc:
        raise FormatError(f"{path}: truncated layer list") from exc
    offset += 4 * count

    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        needed = 8 * (fan_in * fan_out + fan_out)
        if offset + needed > len(data):
            raise FormatError(f"{path}: truncated parameters")
        w = np.frombuffer(data, dtype="<f8", count=fan_in * fan_out, offset=offset)
        offset += 8 * fan_in * fan_out
        b = np.frombuffer(data, dtype="<f8", count=fan_out, offset=offset)
        offset += 8 * fan_out
        weights.append(w.reshape(fan_in, fan_out).astype(np.float64))
        biases.append(b.astype(np.float64))
    if offset != len(data):
        raise FormatError(f"{path}: {len(data) - offset} trailing bytes")
    return MlpEncoder(weights, biases)
