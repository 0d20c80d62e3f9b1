"""Directory-based model checkpoints with tamper detection.

Layout::

    checkpoint/
      spec.json       model spec, seed, spec digest, step counter
      manifest.json   tensor name -> shape, dtype, file, byte length, digest
      <tensor>.bin    one little-endian float32 file per named state tensor

Every tensor is stored as float32 regardless of its live dtype (integer
buffers are cast; the manifest remembers the original dtype so loading
restores it).  Loading verifies byte lengths and digests and refuses
mismatched specs, so a truncated, edited or foreign checkpoint fails
loudly instead of producing a silently different model.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .exceptions import (
    CorruptCheckpointError,
    IncompatibleSpecError,
    IncompleteCheckpointError,
)
from .models import ModelSpec, build_model, spec_hash

SPEC_FILE = "spec.json"
MANIFEST_FILE = "manifest.json"


@dataclass
class CheckpointBundle:
    """A reloaded model together with its training provenance."""

    model: nn.Module
    spec: ModelSpec
    seed: int
    step: int


def _tensor_file(name: str) -> str:
    return name + ".bin"


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def save_checkpoint(path, model: nn.Module, spec: ModelSpec, seed: int,
                    step: int) -> None:
    """Write the model's full state under ``path`` (created if needed)."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest = {}
    for name, tensor in model.state_dict().items():
        array = tensor.detach().cpu().contiguous().numpy()
        data = array.astype("<f4").tobytes()
        fname = _tensor_file(name)
        with open(path / fname, "wb") as fh:
            fh.write(data)
        manifest[name] = {
            "shape": list(array.shape),
            "dtype": str(tensor.dtype).replace("torch.", ""),
            "file": fname,
            "byte_length": len(data),
            "sha256": _sha256(data),
        }
    with open(path / MANIFEST_FILE, "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")
    header = {
        "spec": spec.to_dict(),
        "spec_sha256": spec_hash(spec),
        "seed": int(seed),
        "step": int(step),
    }
    with open(path / SPEC_FILE, "w") as fh:
        json.dump(header, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _read_json(path: Path) -> dict:
    if not path.exists():
        raise IncompleteCheckpointError(f"missing {path.name}")
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise CorruptCheckpointError(f"{path.name}: {exc}") from None


def load_checkpoint(path, expected_spec: ModelSpec | None = None
                    ) -> CheckpointBundle:
    """Rebuild a model from a checkpoint directory, verifying integrity.

    With ``expected_spec`` given, a checkpoint written under any other
    spec is refused.
    """
    path = Path(path)
    header = _read_json(path / SPEC_FILE)
    for key in ("spec", "spec_sha256", "seed", "step"):
        if key not in header:
            raise CorruptCheckpointError(f"{SPEC_FILE} missing {key!r}")
    spec = ModelSpec.from_dict(header["spec"])
    if spec_hash(spec) != header["spec_sha256"]:
        raise CorruptCheckpointError("spec digest does not match spec")
    if expected_spec is not None and spec_hash(expected_spec) != header["spec_sha256"]:
        raise IncompatibleSpecError(
            "checkpoint was written under a different model spec")
    manifest = _read_json(path / MANIFEST_FILE)

    model = build_model(spec)
    state = model.state_dict()
    missing = set(state) - set(manifest)
    if missing:
        raise IncompleteCheckpointError(
            f"manifest missing tensors {sorted(missing)[:4]}")
    extra = set(manifest) - set(state)
    if extra:
        raise IncompatibleSpecError(
            f"manifest names unknown tensors {sorted(extra)[:4]}")

    new_state = {}
    for name, entry in manifest.items():
        fpath = path / entry["file"]
        if not fpath.exists():
            raise IncompleteCheckpointError(f"missing tensor file "
                                            f"{entry['file']}")
        data = fpath.read_bytes()
        if len(data) != entry["byte_length"]:
            raise CorruptCheckpointError(
                f"{entry['file']}: expected {entry['byte_length']} bytes, "
                f"found {len(data)}")
        if _sha256(data) != entry["sha256"]:
            raise CorruptCheckpointError(f"{entry['file']}: digest mismatch")
        try:
            array = np.frombuffer(data, dtype="<f4").reshape(entry["shape"])
        except ValueError:
            raise CorruptCheckpointError(
                f"{entry['file']}: byte length does not fit shape "
                f"{entry['shape']}") from None
        target = state[name]
        if list(target.shape) != list(entry["shape"]):
            raise IncompatibleSpecError(
                f"{name}: stored shape {entry['shape']} does not fit "
                f"{list(target.shape)}")
        tensor = torch.from_numpy(array.copy()).to(target.dtype)
        new_state[name] = tensor
    model.load_state_dict(new_state)
    model.eval()
    return CheckpointBundle(model=model, spec=spec,
                            seed=int(header["seed"]),
                            step=int(header["step"]))
