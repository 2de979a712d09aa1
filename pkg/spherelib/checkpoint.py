"""
Binary checkpoint format of :class:`~spherelib.embedder.ModelState`.

Layout (all integers little-endian)::

    offset  type            content
    0       4 bytes         magic b"SPHM"
    4       u32             format version (1)
    8       u32             header length H in bytes
    12      H bytes         UTF-8 JSON header
    12+H    repeated        one record per array listed in the header:
                              u64 value count n, then n float64 values

The header holds the embedder configuration (including the classifier kind), the class count, the annealing state,
the iteration, free-form metadata and the ``name``/``shape`` of every array in
record order. Arrays are stored in row-major order.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .embedder import ClassifierWeights, DenseLayer, EmbedderConfig, ModelState
from .exceptions import CheckpointError, DimensionError, DomainError
from .margin_losses import AnnealState

MAGIC = b"SPHM"
FORMAT_VERSION = 1


def _arrays(state: ModelState) -> list[tuple[str, np.ndarray]]:
    arrays = []
    for index, layer in enumerate(state.layers):
        arrays.append((f"layer{index}.weights", layer.weights))
        arrays.append((f"layer{index}.biases", layer.biases))
    arrays.append(("classifier", state.classifier.matrix))
    if state.classifier.biases is not None:
        arrays.append(("classifier.biases", state.classifier.biases))
    return arrays


def checkpoint_save(state: ModelState, metadata: dict | None = None) -> bytes:
    """
    Encodes a model state.

    Parameters
    ----------
    state : :class:`~spherelib.embedder.ModelState`
        Model to encode.
    metadata : dict, optional
        JSON-serializable information stored with the model (e.g. the run config).

    Returns
    -------
    bytes
        The checkpoint stream. Encoding the same state twice gives the same bytes.
    """
    arrays = _arrays(state)
    header = {
        "embedder": {
            "layer_widths": list(state.config.layer_widths),
            "activation": state.config.activation,
            "seed": state.config.seed,
            "classifier": state.config.classifier,
            "embedding_relu": state.config.embedding_relu,
        },
        "k_classes": state.k_classes,
        "anneal": {
            "iteration": state.anneal.iteration,
            "lambda": state.anneal.lambda_,
        },
        "iteration": state.iteration,
        "arrays": [{"name": name, "shape": list(array.shape)} for name, array in arrays],
        "metadata": metadata or {},
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    chunks = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(header_bytes)), header_bytes]
    for _, array in arrays:
        values = np.ascontiguousarray(array, dtype="<f8")
        chunks.append(struct.pack("<Q", values.size))
        chunks.append(values.tobytes())
    return b"".join(chunks)


def _take(stream: bytes, offset: int, size: int, what: str) -> bytes:
    if offset + size > len(stream):
        raise CheckpointError(
            f"Truncated checkpoint while reading {what}: {size} bytes needed, "
            f"{len(stream) - offset} left",
            offset,
        )
    return stream[offset : offset + size]


def checkpoint_read(stream: bytes) -> tuple[ModelState, dict]:
    """
    Decodes a checkpoint stream and returns the model with its metadata.

    Raises
    ------
    :class:`~spherelib.exceptions.CheckpointError`
        On a wrong magic, an unsupported version, a malformed header, truncation or
        trailing bytes. No partial state is returned.
    """
    if _take(stream, 0, 4, "the magic bytes") != MAGIC:
        raise CheckpointError("Not a spherelib checkpoint (bad magic bytes)", 0)
    version, header_length = struct.unpack("<II", _take(stream, 4, 8, "the preamble"))
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"Unsupported checkpoint version {version}, expected {FORMAT_VERSION}", 4
        )
    offset = 12
    try:
        header = json.loads(_take(stream, offset, header_length, "the header"))
        embedder = EmbedderConfig(
            layer_widths=tuple(header["embedder"]["layer_widths"]),
            activation=header["embedder"]["activation"],
            seed=header["embedder"]["seed"],
            classifier=header["embedder"].get("classifier", "angular"),
            embedding_relu=header["embedder"].get("embedding_relu", False),
        )
        entries = header["arrays"]
        anneal = AnnealState(
            iteration=int(header["anneal"]["iteration"]),
            lambda_=float(header["anneal"]["lambda"]),
        )
        iteration = int(header["iteration"])
        metadata = header.get("metadata", {})
    except CheckpointError:
        raise
    except (ValueError, KeyError, TypeError) as error:
        raise CheckpointError(f"Malformed checkpoint header: {error}", offset) from error
    offset += header_length

    arrays = {}
    for entry in entries:
        (count,) = struct.unpack("<Q", _take(stream, offset, 8, entry["name"]))
        shape = tuple(entry["shape"])
        if count != int(np.prod(shape)):
            raise CheckpointError(
                f"Array {entry['name']} holds {count} values but its shape is {shape}",
                offset,
            )
        offset += 8
        data = _take(stream, offset, 8 * count, entry["name"])
        arrays[entry["name"]] = np.frombuffer(data, dtype="<f8").astype(np.float64).reshape(shape)
        offset += 8 * count
    if offset != len(stream):
        raise CheckpointError(f"{len(stream) - offset} unexpected trailing bytes", offset)

    n_layers = len(embedder.layer_widths) - 1
    try:
        layers = tuple(
            DenseLayer(arrays[f"layer{i}.weights"], arrays[f"layer{i}.biases"])
            for i in range(n_layers)
        )
        classifier = ClassifierWeights(
            arrays["classifier"],
            biases=arrays["classifier.biases"] if embedder.classifier == "affine" else None,
            normalized=embedder.classifier == "angular",
        )
    except KeyError as error:
        raise CheckpointError(f"Missing array {error}", offset) from error
    except (DimensionError, DomainError) as error:
        raise CheckpointError(f"Inconsistent classifier: {error}", offset) from error
    state = ModelState(
        config=embedder,
        layers=layers,
        classifier=classifier,
        anneal=anneal,
        iteration=iteration,
    )
    return state, metadata


def checkpoint_load(stream: bytes) -> ModelState:
    """
    Decodes a checkpoint stream written by :func:`checkpoint_save`.
    """
    state, _ = checkpoint_read(stream)
    return state
