"""On-disk formats.

Binary artifacts share one container: a magic line, an 8-byte little-endian
header length, a JSON header (sorted keys) and a body of little-endian
float64 values. Headers describe the body completely, so a file can be
checked before its numbers are trusted.
"""
import json
import logging
import struct
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import DimensionMismatch, FileFormatError
from .inference import ChainSet
from .vae import DecoderWeights, MLPSpec

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

TRAINING_MAGIC = b"AGGVAE-TRAINING 1\n"
DECODER_MAGIC = b"AGGVAE-DECODER 1\n"
DRAWS_MAGIC = b"AGGVAE-DRAWS 1\n"

_F64 = np.dtype("<f8")


def _write_container(path: PathLike, magic: bytes, header: Dict, blocks: Sequence[np.ndarray]) -> None:
    encoded = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<Q", len(encoded)))
        fh.write(encoded)
        for block in blocks:
            fh.write(np.ascontiguousarray(block, dtype=_F64).tobytes())


def _read_container(path: PathLike, magic: bytes) -> Tuple[Dict, np.ndarray]:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise FileFormatError(f"Cannot read {path}: {exc}") from exc

    if not raw.startswith(magic):
        raise FileFormatError(f"{path} is not a {magic.decode().split()[0]} file.")
    offset = len(magic)
    if len(raw) < offset + 8:
        raise FileFormatError(f"{path}: truncated header.")
    (size,) = struct.unpack("<Q", raw[offset : offset + 8])
    offset += 8
    try:
        header = json.loads(raw[offset : offset + size].decode("utf-8"))
    except ValueError as exc:
        raise FileFormatError(f"{path}: malformed header: {exc}") from exc
    offset += size

    body = raw[offset:]
    if len(body) % _F64.itemsize:
        raise FileFormatError(f"{path}: body is not a whole number of float64 values.")
    return header, np.frombuffer(body, dtype=_F64).astype(float)


# ---------------------------
# Plain-text matrices
# ---------------------------


def write_matrix(path: PathLike, matrix: np.ndarray, header: Optional[Dict] = None) -> None:
    """``K n`` on the first line, then one row per line; integers stay integers."""
    matrix = np.atleast_2d(np.asarray(matrix))
    integral = np.issubdtype(matrix.dtype, np.integer) or np.issubdtype(matrix.dtype, np.bool_)
    fmt = "%d" if integral else "%.17g"
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in sorted((header or {}).items()):
            fh.write(f"# {key} = {value}\n")
        fh.write(f"{matrix.shape[0]} {matrix.shape[1]}\n")
        np.savetxt(fh, matrix, fmt=fmt)


def read_matrix(path: PathLike) -> np.ndarray:
    try:
        lines = [line for line in Path(path).read_text(encoding="utf-8").splitlines() if not line.startswith("#")]
    except OSError as exc:
        raise FileFormatError(f"Cannot read {path}: {exc}") from exc
    try:
        rows, cols = (int(token) for token in lines[0].split())
        matrix = np.loadtxt(lines[1:], ndmin=2) if rows else np.empty((0, cols))
    except (IndexError, ValueError) as exc:
        raise FileFormatError(f"{path}: malformed matrix: {exc}") from exc
    if matrix.shape != (rows, cols):
        raise FileFormatError(f"{path}: header says {rows} x {cols}, body is {matrix.shape[0]} x {matrix.shape[1]}.")
    return matrix


# ---------------------------
# Training sets
# ---------------------------


def save_training_set(
    path: PathLike, values: np.ndarray, K1: int, K2: int, seed: int, provenance: Optional[Dict] = None
) -> None:
    values = np.atleast_2d(np.asarray(values, dtype=float))
    if values.shape[1] != K1 + K2:
        raise FileFormatError(f"Training rows have {values.shape[1]} entries, expected {K1 + K2}.")
    header = {"count": values.shape[0], "K1": K1, "K2": K2, "seed": seed, "provenance": provenance or {}}
    _write_container(path, TRAINING_MAGIC, header, [values])


def load_training_set(path: PathLike) -> Tuple[np.ndarray, Dict]:
    header, body = _read_container(path, TRAINING_MAGIC)
    try:
        count, K = int(header["count"]), int(header["K1"]) + int(header["K2"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FileFormatError(f"{path}: incomplete header: {exc}") from exc
    if body.size != count * K:
        raise FileFormatError(f"{path}: expected {count} x {K} values, found {body.size}.")
    return body.reshape(count, K), header


def save_training_text(path: PathLike, values: np.ndarray, K1: int, K2: int, seed: int) -> None:
    values = np.atleast_2d(np.asarray(values, dtype=float))
    np.savetxt(path, values, fmt="%.17g", header=f"count={values.shape[0]} K1={K1} K2={K2} seed={seed}")


def load_training_text(path: PathLike) -> Tuple[np.ndarray, Dict]:
    try:
        first = Path(path).read_text(encoding="utf-8").splitlines()[0]
        header = {key: int(value) for key, value in (item.split("=") for item in first.lstrip("# ").split())}
        values = np.loadtxt(path, ndmin=2)
    except (OSError, IndexError, ValueError) as exc:
        raise FileFormatError(f"Cannot read training text {path}: {exc}") from exc
    if values.shape != (header["count"], header["K1"] + header["K2"]):
        raise FileFormatError(f"{path}: body shape {values.shape} does not match its header.")
    return values, header


# ---------------------------
# Decoder
# ---------------------------


def save_decoder(path: PathLike, weights: DecoderWeights) -> None:
    header = {
        "layer_sizes": list(weights.spec.layer_sizes),
        "activation": weights.spec.activation,
        "latent_dim": weights.latent_dim,
        "K1": weights.K1,
        "K2": weights.K2,
        "shift": [float(v) for v in weights.shift],
        "scale": [float(v) for v in weights.scale],
        "provenance": weights.provenance,
        "loss_trace": [float(v) for v in weights.loss_trace],
    }
    _write_container(path, DECODER_MAGIC, header, weights.params)
    logger.debug("Wrote decoder %s -> %s", header["layer_sizes"], path)


def load_decoder(path: PathLike) -> DecoderWeights:
    header, body = _read_container(path, DECODER_MAGIC)
    try:
        spec = MLPSpec(tuple(int(n) for n in header["layer_sizes"]), header["activation"])
        K = int(header["K1"]) + int(header["K2"])
        shift = np.array(header["shift"], dtype=float)
        scale = np.array(header["scale"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise FileFormatError(f"{path}: incomplete decoder header: {exc}") from exc

    if shift.shape != (K,) or scale.shape != (K,):
        raise FileFormatError(f"{path}: standardization vectors must have length {K}.")
    sizes = [int(np.prod(shape)) for shape in spec.shapes()]
    if body.size != sum(sizes):
        raise FileFormatError(f"{path}: expected {sum(sizes)} weights, found {body.size}.")

    params: List[np.ndarray] = []
    offset = 0
    for shape, size in zip(spec.shapes(), sizes):
        params.append(body[offset : offset + size].reshape(shape))
        offset += size

    try:
        return DecoderWeights(
            spec=spec,
            params=tuple(params),
            latent_dim=int(header["latent_dim"]),
            K1=int(header["K1"]),
            K2=int(header["K2"]),
            shift=shift,
            scale=scale,
            provenance=header.get("provenance") or {},
            loss_trace=tuple(header.get("loss_trace") or ()),
        )
    except (ValueError, DimensionMismatch) as exc:
        raise FileFormatError(f"{path}: {exc}") from exc


# ---------------------------
# Draws
# ---------------------------


def timing_path(path: PathLike) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".timing.json")


def save_draws(path: PathLike, chains: ChainSet) -> None:
    """Draws chain-major then iteration-major; wall-clock goes to the timing sidecar."""
    header = {
        "kind": chains.kind,
        "names": list(chains.names),
        "chains": chains.chains,
        "warmup": chains.warmup,
        "samples": chains.samples,
        "seeds": chains.seeds,
        "K1": chains.K1,
        "K2": chains.K2,
        "labels_old": list(chains.labels_old),
        "labels_new": list(chains.labels_new),
        "n_leapfrog": chains.n_leapfrog.astype(int).tolist(),
        "divergent": chains.divergent.astype(int).tolist(),
        "step_size": [] if chains.step_size is None else [float(v) for v in chains.step_size],
        "unreliable": chains.unreliable,
        "provenance": chains.provenance,
    }
    _write_container(path, DRAWS_MAGIC, header, [chains.draws])

    timing = {
        "warmup_seconds": [float(v) for v in chains.warmup_seconds],
        "sampling_seconds": [float(v) for v in chains.sampling_seconds],
        "provenance": chains.provenance,
    }
    timing_path(path).write_text(json.dumps(timing, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_draws(path: PathLike) -> ChainSet:
    header, body = _read_container(path, DRAWS_MAGIC)
    try:
        C, S, P = int(header["chains"]), int(header["samples"]), len(header["names"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FileFormatError(f"{path}: incomplete draws header: {exc}") from exc
    if body.size != C * S * P:
        raise FileFormatError(f"{path}: expected {C} x {S} x {P} values, found {body.size}.")

    warmup_seconds = sampling_seconds = None
    sidecar = timing_path(path)
    if sidecar.exists():
        timing = json.loads(sidecar.read_text(encoding="utf-8"))
        warmup_seconds = np.array(timing.get("warmup_seconds", [0.0] * C), dtype=float)
        sampling_seconds = np.array(timing.get("sampling_seconds", [0.0] * C), dtype=float)
    else:
        logger.warning("%s has no timing sidecar; wall-clock treated as zero", path)

    return ChainSet(
        kind=header["kind"],
        names=list(header["names"]),
        draws=body.reshape(C, S, P),
        warmup=int(header["warmup"]),
        samples=S,
        seeds=header.get("seeds", []),
        K1=int(header["K1"]),
        K2=int(header["K2"]),
        labels_old=tuple(header.get("labels_old", ())),
        labels_new=tuple(header.get("labels_new", ())),
        n_leapfrog=np.array(header.get("n_leapfrog") or np.zeros((C, S)), dtype=int).reshape(C, S),
        divergent=np.array(header.get("divergent") or np.zeros((C, S)), dtype=bool).reshape(C, S),
        step_size=np.array(header.get("step_size", []), dtype=float),
        warmup_seconds=warmup_seconds,
        sampling_seconds=sampling_seconds,
        provenance=header.get("provenance") or {},
    )
