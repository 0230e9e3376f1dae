"""Checkpoint files: a text header followed by raw little-endian doubles.

Layout::

    DTVAE1\\n
    <one line of JSON: config, epoch, adam step, array manifest>\\n
    <params in manifest order><adam first moments><adam second moments>

Arrays are written as ``<f8`` in C order, so a save/load round trip is
bit-exact.  Files are written to a temporary name and renamed into place, so
a crash mid-write leaves the previous checkpoint intact.
"""

from __future__ import annotations

import json
import os

import numpy as np

from . import nn, vae

MAGIC = "DTVAE1"


class CheckpointError(ValueError):
    pass


def save(path: str, config: vae.TrainConfig, state: vae.TrainState) -> None:
    names = state.params.config.param_names()
    header = {
        "version": MAGIC,
        "config": config.to_dict(),
        "epoch": state.epoch,
        "adam_step": state.adam.step,
        "arrays": [[n, list(state.params.arrays[n].shape)] for n in names],
    }
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(f"{MAGIC}\n".encode())
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for group in (state.params.arrays, state.adam.m, state.adam.v):
            for n in names:
                fh.write(np.ascontiguousarray(group[n], dtype="<f8").tobytes())
    os.replace(tmp, path)


def load(path: str) -> tuple[vae.TrainConfig, vae.TrainState]:
    with open(path, "rb") as fh:
        first = fh.readline().decode(errors="replace").rstrip("\n")
        if first != MAGIC:
            raise CheckpointError(f"{path}: expected format {MAGIC!r}, found {first[:16]!r}")
        header = json.loads(fh.readline())
        payload = fh.read()
    config = vae.TrainConfig(**header["config"])
    mcfg = config.model_config()
    expected = mcfg.layer_shapes()
    manifest = [(n, tuple(s)) for n, s in header["arrays"]]
    if [n for n, _ in manifest] != mcfg.param_names():
        raise CheckpointError(f"{path}: array names do not match the config snapshot")
    for n, shape in manifest:
        blk, kind = n.split(".")
        want = expected[blk] if kind == "w" else (expected[blk][0],)
        if shape != want:
            raise CheckpointError(f"{path}: {n} has shape {shape}, config implies {want}")

    sizes = [int(np.prod(s)) for _, s in manifest]
    if len(payload) != 3 * 8 * sum(sizes):
        raise CheckpointError(f"{path}: payload is {len(payload)} bytes, expected {3 * 8 * sum(sizes)}")
    flat = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    groups = []
    offset = 0
    for _ in range(3):
        group = {}
        for (n, shape), size in zip(manifest, sizes):
            group[n] = flat[offset:offset + size].reshape(shape).copy()
            offset += size
        groups.append(group)
    params = nn.ModelParams(mcfg, groups[0])
    adam = nn.AdamState(groups[1], groups[2], int(header["adam_step"]))
    return config, vae.TrainState(params, adam, int(header["epoch"]))
