"""Parameter storage: named value/gradient pairs plus checkpoint I/O.

A ParamStore is an ordered collection of ParamGroups. The optimizer is the
single writer; forward passes only read values, and backward passes accumulate
into the paired grad buffers (or into detached scratch buffers when tasks run
on worker threads, merged later in task order so runs are reproducible).
"""

import hashlib
import io
import json
import zipfile

import numpy as np

from .errors import CheckpointError, ShapeError

CHECKPOINT_FORMAT = "moekgc-ckpt-1"


class ParamGroup:
    __slots__ = ("name", "value", "grad", "trainable")

    def __init__(self, name, value, trainable=True):
        self.name = name
        self.value = np.ascontiguousarray(value, dtype=np.float64)
        if self.value.ndim not in (1, 2):
            raise ShapeError(f"param {name}: only vectors and matrices are supported")
        self.grad = np.zeros_like(self.value)
        self.trainable = trainable


class ParamStore:
    def __init__(self):
        self._groups = {}

    def add(self, name, value, trainable=True):
        if name in self._groups:
            raise ValueError(f"duplicate param group {name!r}")
        group = ParamGroup(name, value, trainable)
        self._groups[name] = group
        return group

    def __getitem__(self, name):
        return self._groups[name]

    def __contains__(self, name):
        return name in self._groups

    def __iter__(self):
        return iter(self._groups.values())

    def __len__(self):
        return len(self._groups)

    def names(self):
        return list(self._groups.keys())

    def zero_grads(self):
        for g in self._groups.values():
            g.grad.fill(0.0)

    def grads_are_zero(self):
        return all(not g.grad.any() for g in self._groups.values())

    def new_grad_buffers(self):
        """Detached zero buffers matching every group, for worker-local accumulation."""
        return {name: np.zeros_like(g.value) for name, g in self._groups.items()}

    def accumulate(self, buffers):
        """Merge one scratch-buffer dict into the live grads (caller fixes the order)."""
        for name, buf in buffers.items():
            self._groups[name].grad += buf

    def value_hash(self):
        """SHA-256 over all parameter bytes, for immutability assertions."""
        h = hashlib.sha256()
        for name in sorted(self._groups):
            g = self._groups[name]
            h.update(name.encode())
            h.update(g.value.tobytes())
        return h.hexdigest()

    def copy_values(self):
        return {name: g.value.copy() for name, g in self._groups.items()}

    def load_values(self, values):
        for name, g in self._groups.items():
            if name not in values:
                raise CheckpointError(f"missing parameter group {name!r}")
            arr = np.asarray(values[name], dtype=np.float64)
            if arr.shape != g.value.shape:
                raise CheckpointError(
                    f"shape mismatch for {name!r}: checkpoint {arr.shape} vs model {g.value.shape}"
                )
            g.value[...] = arr


def save_checkpoint(path, store, meta, adam_state=None):
    """Write parameters, optimizer state and metadata to one zip document.

    float64 payloads are stored as raw .npy members, so the round trip is
    bit-exact. `meta` must be JSON-serializable and carries the model config
    and run seed.
    """
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        manifest = {
            "format": CHECKPOINT_FORMAT,
            "meta": meta,
            "params": [
                {"name": g.name, "shape": list(g.value.shape), "trainable": g.trainable}
                for g in store
            ],
            "adam": adam_state.describe() if adam_state is not None else None,
        }
        zf.writestr("manifest.json", json.dumps(manifest, sort_keys=True, indent=1))
        for g in store:
            zf.writestr(f"param/{g.name}.npy", _npy_bytes(g.value))
        if adam_state is not None:
            for name, (m, v) in adam_state.moments.items():
                zf.writestr(f"adam/m/{name}.npy", _npy_bytes(m))
                zf.writestr(f"adam/v/{name}.npy", _npy_bytes(v))


def load_checkpoint(path):
    """Read a checkpoint; returns (values dict, manifest dict, adam moments dict)."""
    try:
        zf = zipfile.ZipFile(path, "r")
    except (OSError, zipfile.BadZipFile) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    with zf:
        try:
            manifest = json.loads(zf.read("manifest.json"))
        except KeyError:
            raise CheckpointError(f"{path} is not a moekgc checkpoint (no manifest)")
        if manifest.get("format") != CHECKPOINT_FORMAT:
            raise CheckpointError(f"unsupported checkpoint format {manifest.get('format')!r}")
        values = {}
        for entry in manifest["params"]:
            name = entry["name"]
            values[name] = _read_npy(zf, f"param/{name}.npy")
        moments = {}
        if manifest.get("adam") is not None:
            for entry in manifest["params"]:
                name = entry["name"]
                m_key, v_key = f"adam/m/{name}.npy", f"adam/v/{name}.npy"
                if m_key in zf.namelist():
                    moments[name] = (_read_npy(zf, m_key), _read_npy(zf, v_key))
    return values, manifest, moments


def _npy_bytes(arr):
    buf = io.BytesIO()
    np.save(buf, arr, allow_pickle=False)
    return buf.getvalue()


def _read_npy(zf, key):
    try:
        return np.load(io.BytesIO(zf.read(key)), allow_pickle=False)
    except KeyError as exc:
        raise CheckpointError(f"checkpoint member {key} missing") from exc
