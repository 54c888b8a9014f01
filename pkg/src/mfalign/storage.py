"""Binary model container ("MFA1").

Layout, all little-endian::

    magic   4s   b"MFA1"
    kind    4s   b"IBFA" | b"MBFA" | b"LSQ " | b"PROC" | b"CCA "
    order   1s   b"L"
    v       u32  number of views
    k       u32  latent dimension (0 for linear maps)
    dims    v * u32
    payload float64 arrays, row-major, shapes implied by the header

Payload per kind:

    IBFA  for each view: mu, W, Psi; then P (k); then U_x, U_y
    MBFA  for each view: mu, W, Psi; then u32 iterations, u32 trace length,
          the NLL trace
    LSQ/PROC  u8 has_mu; W (d' x d); mu (d') when present
    CCA   for each view: mu, A; then correlations (k)

The reader rejects trailing bytes, so a round trip is bit-identical.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .baselines import CcaModel, LinearMap
from .errors import FormatError
from .models import IbfaModel, MbfaModel

MAGIC = b"MFA1"
_HEAD = struct.Struct("<4s4scII")
_KINDS = {b"IBFA": "IBFA", b"MBFA": "MBFA", b"LSQ ": "LSQ", b"PROC": "PROC", b"CCA ": "CCA"}
_LINEAR_KIND = {"least-squares": b"LSQ ", "procrustes": b"PROC"}


def _arr(a) -> bytes:
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def dumps(model) -> bytes:
    if isinstance(model, IbfaModel):
        kind, v, k, dims = b"IBFA", 2, model.k, model.dims
        parts = []
        for mu, w, psi in ((model.mu_x, model.wx, model.psi_x), (model.mu_y, model.wy, model.psi_y)):
            parts += [_arr(mu), _arr(w), _arr(psi)]
        parts += [_arr(model.p), _arr(model.ux), _arr(model.uy)]
    elif isinstance(model, MbfaModel):
        kind, v, k, dims = b"MBFA", model.v, model.k, model.dims
        parts = []
        for mu, w, psi in zip(model.mu, model.w, model.psi):
            parts += [_arr(mu), _arr(w), _arr(psi)]
        parts.append(struct.pack("<II", model.iterations_run, len(model.nll_trace)))
        parts.append(_arr(model.nll_trace))
    elif isinstance(model, LinearMap):
        kind, v, k = _LINEAR_KIND[model.kind], 2, 0
        dims = (model.w.shape[1], model.w.shape[0])
        parts = [struct.pack("<B", model.mu is not None), _arr(model.w)]
        if model.mu is not None:
            parts.append(_arr(model.mu))
    elif isinstance(model, CcaModel):
        kind, v, k = b"CCA ", 2, len(model.correlations)
        dims = (model.ax.shape[0], model.ay.shape[0])
        parts = [_arr(model.mu_x), _arr(model.ax), _arr(model.mu_y), _arr(model.ay), _arr(model.correlations)]
    else:
        raise TypeError(f"cannot serialise {type(model).__name__}")
    head = _HEAD.pack(MAGIC, kind, b"L", v, k) + struct.pack(f"<{v}I", *dims)
    return head + b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = memoryview(data)
        self.pos = 0

    def take(self, n: int) -> memoryview:
        if self.pos + n > len(self.data):
            raise FormatError("model file is truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        st = struct.Struct(fmt)
        return st.unpack(self.take(st.size))

    def floats(self, *shape) -> np.ndarray:
        count = int(np.prod(shape)) if shape else 1
        return np.frombuffer(self.take(8 * count), dtype="<f8").astype(np.float64).reshape(shape)


def loads(data: bytes):
    r = _Reader(data)
    magic, kind, order, v, k = r.unpack(_HEAD.format)
    if magic != MAGIC:
        raise FormatError("not an MFA1 model file")
    if order != b"L":
        raise FormatError(f"unsupported byte order marker {order!r}")
    if kind not in _KINDS:
        raise FormatError(f"unknown model kind {kind!r}")
    dims = r.unpack(f"<{v}I")
    kind = _KINDS[kind]
    if kind in ("IBFA", "MBFA"):
        views = [(r.floats(d), r.floats(d, k), r.floats(d, d)) for d in dims]
        if kind == "IBFA":
            if v != 2:
                raise FormatError("IBFA model must have two views")
            p = r.floats(k)
            ux, uy = r.floats(dims[0], k), r.floats(dims[1], k)
            (mx, wx, px), (my, wy, py) = views
            model = IbfaModel(k=k, wx=wx, wy=wy, mu_x=mx, mu_y=my, psi_x=px, psi_y=py, p=p, ux=ux, uy=uy)
        else:
            iters, length = r.unpack("<II")
            trace = r.floats(length)
            model = MbfaModel(
                k=k, w=tuple(w for _, w, _ in views), mu=tuple(m for m, _, _ in views),
                psi=tuple(p for _, _, p in views), nll_trace=trace, iterations_run=iters,
            )
    elif kind in ("LSQ", "PROC"):
        (has_mu,) = r.unpack("<B")
        w = r.floats(dims[1], dims[0])
        mu = r.floats(dims[1]) if has_mu else None
        model = LinearMap(w=w, mu=mu, kind="least-squares" if kind == "LSQ" else "procrustes")
    else:
        mx, ax = r.floats(dims[0]), r.floats(dims[0], k)
        my, ay = r.floats(dims[1]), r.floats(dims[1], k)
        model = CcaModel(ax=ax, ay=ay, mu_x=mx, mu_y=my, correlations=r.floats(k))
    if r.pos != len(r.data):
        raise FormatError("trailing bytes after model payload")
    return model


def save_model(path, model) -> None:
    Path(path).write_bytes(dumps(model))


def load_model(path):
    try:
        return loads(Path(path).read_bytes())
    except struct.error as exc:
        raise FormatError(f"{path}: {exc}") from None


def model_kind(model) -> str:
    if isinstance(model, IbfaModel):
        return "IBFA"
    if isinstance(model, MbfaModel):
        return "MBFA"
    if isinstance(model, LinearMap):
        return _KINDS[_LINEAR_KIND[model.kind]]
    if isinstance(model, CcaModel):
        return "CCA"
    raise TypeError(f"unknown model type {type(model).__name__}")
