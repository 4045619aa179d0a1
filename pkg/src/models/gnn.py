"""This module defines the weights of the retrieval scorers and their
binary file format.

The weights file starts with the magic bytes ``GNN1`` followed by the
architecture code (``u8``), the layer count, the input and the output
dimensions (``u32`` little-endian each), then every matrix in declared
order as little-endian ``f32`` values in row-major order.
"""
import struct
from dataclasses import dataclass
from enum import Enum
from typing import List, Tuple

import numpy as np

from src.errors import ParseError, ShapeMismatch
from src.services.storage import write_bytes

MAGIC = b"GNN1"
HEADER = struct.Struct("<4sBIII")


class Arch(str, Enum):
    """Scorer architecture."""

    SGC = "sgc"
    GCN = "gcn"
    SAGE = "sage"

    @property
    def code(self) -> int:
        """The architecture byte of the weights file."""
        return ARCH_CODES[self]


ARCH_CODES = {Arch.SGC: 0, Arch.GCN: 1, Arch.SAGE: 2}


def weight_shapes(
    arch: Arch, layers: int, dim_in: int, dim_out: int
) -> List[Tuple[int, int]]:
    """The declared matrix shapes of an architecture.

    :param arch: The architecture.
    :type arch: Arch
    :param layers: The layer count K.
    :type layers: int
    :param dim_in: The input feature dimension.
    :type dim_in: int
    :param dim_out: The output dimension.
    :type dim_out: int
    :return: One shape per matrix, in file order.
    :rtype: List[Tuple[int, int]]
    """
    if arch is Arch.SGC:
        return []
    if arch is Arch.SAGE:
        return [(dim_in, dim_out), (dim_in, dim_out)]
    return [(dim_in if layer == 0 else dim_out, dim_out) for layer in range(layers)]


@dataclass(frozen=True, eq=False)
class GnnModel:
    """Weights of a retrieval scorer.

    For ``sage`` the weights are ``(W_self, W_neigh)``; for ``gcn`` one
    matrix per layer; for ``sgc`` none.

    :param arch: The architecture.
    :type arch: Arch
    :param layers: The layer count K.
    :type layers: int
    :param dim_in: The input dimension.
    :type dim_in: int
    :param dim_out: The output dimension.
    :type dim_out: int
    :param weights: The weight matrices.
    :type weights: Tuple[np.ndarray, ...]
    """

    arch: Arch
    layers: int
    dim_in: int
    dim_out: int
    weights: Tuple[np.ndarray, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "arch", Arch(self.arch))
        if self.arch is Arch.SAGE and self.layers != 1:
            raise ShapeMismatch("GraphSAGE scorers have exactly one layer.")
        if self.layers < (0 if self.arch is Arch.SGC else 1):
            raise ShapeMismatch(f"Invalid layer count {self.layers}.")
        expected = weight_shapes(self.arch, self.layers, self.dim_in, self.dim_out)
        weights = tuple(np.asarray(item, dtype=np.float64) for item in self.weights)
        shapes = [item.shape for item in weights]
        if shapes != expected:
            raise ShapeMismatch(
                f"Weights {shapes} do not match the declared {expected}."
            )
        if not all(np.all(np.isfinite(item)) for item in weights):
            raise ShapeMismatch("Weights must be finite.")
        object.__setattr__(self, "weights", weights)

    def with_weights(self, weights) -> "GnnModel":
        """A copy of the model carrying other weights."""
        return GnnModel(
            self.arch, self.layers, self.dim_in, self.dim_out, tuple(weights)
        )

    def same_as(self, other: "GnnModel") -> bool:
        """Bit-identical comparison of two models."""
        return (
            (self.arch, self.layers, self.dim_in, self.dim_out)
            == (other.arch, other.layers, other.dim_in, other.dim_out)
            and len(self.weights) == len(other.weights)
            and all(np.array_equal(a, b) for a, b in zip(self.weights, other.weights))
        )


def sgc_model(layers: int, dim: int) -> GnnModel:
    """The parameter-free SGC scorer."""
    return GnnModel(Arch.SGC, layers, dim, dim)


def encode_weights(model: GnnModel) -> bytes:
    """Serialize a model to the weights file format."""
    header = HEADER.pack(
        MAGIC, model.arch.code, model.layers, model.dim_in, model.dim_out
    )
    body = b"".join(
        np.ascontiguousarray(item, dtype="<f4").tobytes() for item in model.weights
    )
    return header + body


def decode_weights(data: bytes) -> GnnModel:
    """Read a model from the weights file format.

    :param data: The file content.
    :type data: bytes
    :raises ParseError: The content is truncated or not a weights file.
    :return: The model, weights widened to float64.
    :rtype: GnnModel
    """
    if len(data) < HEADER.size:
        raise ParseError("Weights file is truncated.")
    magic, code, layers, dim_in, dim_out = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ParseError("Weights file does not start with GNN1.")
    archs = {value: key for key, value in ARCH_CODES.items()}
    if code not in archs:
        raise ParseError(f"Unknown architecture code {code}.")
    arch = archs[code]
    offset = HEADER.size
    weights = []
    for rows, cols in weight_shapes(arch, layers, dim_in, dim_out):
        count = rows * cols
        if len(data) < offset + 4 * count:
            raise ParseError("Weights file is truncated.")
        matrix = np.frombuffer(data, dtype="<f4", count=count, offset=offset)
        weights.append(matrix.reshape(rows, cols).astype(np.float64))
        offset += 4 * count
    if offset != len(data):
        raise ParseError("Weights file has trailing bytes.")
    return GnnModel(arch, layers, dim_in, dim_out, tuple(weights))


def save_weights(model: GnnModel, path: str):
    """Atomically write a weights file."""
    write_bytes(path, encode_weights(model))


def load_weights(path: str) -> GnnModel:
    """Read a weights file.

    :param path: The file path.
    :type path: str
    :raises ParseError: The file is missing or malformed.
    :return: The model.
    :rtype: GnnModel
    """
    try:
        with open(path, "rb") as file:
            data = file.read()
    except OSError as error:
        raise ParseError(f"Unable to read {path!r}: {error}") from error
    return decode_weights(data)
