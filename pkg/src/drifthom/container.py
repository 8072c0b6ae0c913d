"""Self-describing binary container for grid fields.

Layout, all little-endian:

    magic "DHF1"
    u32 format version
    u32 d, u32 n_x, u32 n_t
    f64 L, f64 T_env
    i64 seed
    u32 number of fields
    per field: u16 name length, utf-8 name, u16 ndim, u64*ndim shape,
               float64 array data in C order

Environments round-trip through ``save_environment``/``load_environment``;
generic field dumps (drifts, stream recoveries, solutions) use
``write_container``/``read_container`` directly.
"""

from __future__ import annotations

import struct

import numpy as np

from .environment import EnvironmentRealization
from .errors import ParseError
from .grid import SpaceTimeGrid

MAGIC = b"DHF1"
VERSION = 1


def write_container(path, grid: SpaceTimeGrid, seed: int, fields: dict) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IIII", VERSION, grid.d, grid.n_x, grid.n_t))
        fh.write(struct.pack("<ddq", grid.L, grid.T_env, seed))
        fh.write(struct.pack("<I", len(fields)))
        for name, arr in fields.items():
            arr = np.ascontiguousarray(arr, dtype="<f8")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<H", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes(order="C"))


def read_container(path):
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ParseError(f"{path}: not a field container (bad magic)")
        version, d, n_x, n_t = struct.unpack("<IIII", fh.read(16))
        if version != VERSION:
            raise ParseError(f"{path}: unsupported container version {version}")
        L, T_env, seed = struct.unpack("<ddq", fh.read(24))
        (n_fields,) = struct.unpack("<I", fh.read(4))
        grid = SpaceTimeGrid(d=d, n_x=n_x, n_t=n_t, L=L, T_env=T_env)
        fields = {}
        for _ in range(n_fields):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<H", fh.read(2))
            shape = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim))
            count = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(fh.read(8 * count), dtype="<f8")
            if data.size != count:
                raise ParseError(f"{path}: truncated data for field {name!r}")
            fields[name] = data.reshape(shape).astype(float)
        return grid, seed, fields


def save_environment(path, env: EnvironmentRealization) -> None:
    fields = {
        "a": env.a,
        "s": env.s,
        "bbar": env.bbar,
        "bounds": np.array([env.lam, env.Lam]),
    }
    write_container(path, env.grid, env.seed, fields)


def load_environment(path) -> EnvironmentRealization:
    grid, seed, fields = read_container(path)
    for key in ("a", "s", "bbar", "bounds"):
        if key not in fields:
            raise ParseError(f"{path}: missing environment field {key!r}")
    lam, Lam = fields["bounds"]
    return EnvironmentRealization(
        grid=grid,
        a=fields["a"],
        s=fields["s"],
        bbar=fields["bbar"],
        seed=seed,
        lam=float(lam),
        Lam=float(Lam),
        params=None,
        bbar_model="loaded",
    )
