"""Checkpoint archives: a zip of ``.tnsr`` entries plus ``manifest.txt``.

Manifest lines::

    # cbgan_aug checkpoint v1
    meta <key>=<value>
    tensor <name> <dtype> <shape>       shape as 64x6x7x7, or () for scalars

Tensor ``<name>`` is stored at ``tensors/<name>.tnsr``. Module entries are
named ``<module>/<state_dict key>``; optimizer moments are named
``optim/<optimizer>/<param name>/<state key>``.
"""
from __future__ import annotations

import os
import zipfile
from pathlib import Path

import numpy as np
import torch

from .tensorio import TensorFormatError, decode_tensor, encode_tensor

MANIFEST = "manifest.txt"
HEADER = "# cbgan_aug checkpoint v1"


class CheckpointError(ValueError):
    pass


def _to_storable(t: torch.Tensor) -> np.ndarray:
    arr = t.detach().cpu().numpy()
    if arr.dtype == np.uint8:
        return arr
    # integer counters (BatchNorm num_batches_tracked) fit exactly in float32
    return arr.astype(np.float32)


def _shape_str(shape) -> str:
    return "x".join(str(s) for s in shape) if len(shape) else "()"


def _parse_shape(s: str) -> tuple:
    if s == "()":
        return ()
    return tuple(int(v) for v in s.split("x"))


def checkpoint_tensors(modules: dict, optimizers: dict | None = None) -> dict:
    tensors = {}
    for mname, module in modules.items():
        for key, value in module.state_dict().items():
            tensors[f"{mname}/{key}"] = _to_storable(value)
    for oname, (opt, module) in (optimizers or {}).items():
        names = {id(p): n for n, p in module.named_parameters()}
        for param, state in opt.state.items():
            for skey, value in state.items():
                if torch.is_tensor(value):
                    tensors[f"optim/{oname}/{names[id(param)]}/{skey}"] = _to_storable(value)
    return tensors


def save_checkpoint(path, modules: dict, optimizers: dict | None = None, meta: dict | None = None) -> None:
    """Write modules (name -> nn.Module) and optimizers (name -> (opt, module)).

    The archive is written to a temporary file and renamed into place.
    """
    path = Path(path)
    tensors = checkpoint_tensors(modules, optimizers)
    lines = [HEADER]
    lines += [f"meta {k}={v}" for k, v in (meta or {}).items()]
    lines += [f"tensor {name} {arr.dtype} {_shape_str(arr.shape)}" for name, arr in tensors.items()]
    tmp = path.with_name(path.name + ".tmp")
    with zipfile.ZipFile(tmp, "w", compression=zipfile.ZIP_STORED) as zf:
        zf.writestr(MANIFEST, "\n".join(lines) + "\n")
        for name, arr in tensors.items():
            zf.writestr(f"tensors/{name}.tnsr", encode_tensor(arr))
    os.replace(tmp, path)


def read_checkpoint(path) -> tuple[dict, dict]:
    """Return (meta, tensors) after validating the manifest against the payload."""
    try:
        zf = zipfile.ZipFile(path)
    except (zipfile.BadZipFile, FileNotFoundError) as exc:
        raise CheckpointError(f"{path}: not a checkpoint archive ({exc})") from exc
    with zf:
        try:
            manifest = zf.read(MANIFEST).decode("utf-8").splitlines()
        except KeyError as exc:
            raise CheckpointError(f"{path}: missing {MANIFEST}") from exc
        if not manifest or manifest[0] != HEADER:
            raise CheckpointError(f"{path}: corrupt manifest header")
        meta, tensors = {}, {}
        for lineno, line in enumerate(manifest[1:], start=2):
            parts = line.split()
            if not parts:
                continue
            try:
                if parts[0] == "meta" and len(parts) == 2 and "=" in parts[1]:
                    k, v = parts[1].split("=", 1)
                    meta[k] = v
                    continue
                if parts[0] != "tensor" or len(parts) != 4:
                    raise ValueError("unrecognised entry")
                name, dtype, shape = parts[1], np.dtype(parts[2]), _parse_shape(parts[3])
            except (ValueError, TypeError) as exc:
                raise CheckpointError(f"{path}: corrupt manifest at line {lineno}: {line!r}") from exc
            try:
                arr = decode_tensor(zf.read(f"tensors/{name}.tnsr"))
            except KeyError as exc:
                raise CheckpointError(f"{path}: manifest lists {name} but the archive lacks it") from exc
            except TensorFormatError as exc:
                raise CheckpointError(f"{path}: {name}: {exc}") from exc
            if arr.dtype != dtype or arr.shape != shape:
                raise CheckpointError(
                    f"{path}: {name} is {arr.dtype}{arr.shape}, manifest says {dtype}{shape}"
                )
            tensors[name] = arr
    return meta, tensors


def load_checkpoint(path, modules: dict, optimizers: dict | None = None) -> dict:
    """Restore modules and optimizer moments in place; returns the meta dict."""
    meta, tensors = read_checkpoint(path)
    for mname, module in modules.items():
        state = module.state_dict()
        new_state = {}
        for key, ref in state.items():
            name = f"{mname}/{key}"
            if name not in tensors:
                raise CheckpointError(f"{path}: missing tensor {name}")
            arr = tensors[name]
            if tuple(arr.shape) != tuple(ref.shape):
                raise CheckpointError(f"{path}: {name} has shape {arr.shape}, model expects {tuple(ref.shape)}")
            new_state[key] = torch.from_numpy(arr.copy()).to(ref.dtype)
        module.load_state_dict(new_state)
    for oname, (opt, module) in (optimizers or {}).items():
        opt.state.clear()
        prefix = f"optim/{oname}/"
        params = dict(module.named_parameters())
        for name, arr in tensors.items():
            if not name.startswith(prefix):
                continue
            pname, skey = name[len(prefix):].rsplit("/", 1)
            if pname not in params:
                raise CheckpointError(f"{path}: optimizer state for unknown parameter {pname}")
            opt.state[params[pname]][skey] = torch.from_numpy(arr.copy())
    return meta

