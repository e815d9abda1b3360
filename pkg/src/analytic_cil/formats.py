"""Binary and text formats.

FMX1 (feature matrices), little-endian::

    offset  size  field
    0       4     magic b"FMX1"
    4       4     flags u32 (bit 0: labels present)
    8       8     rows u64
    16      4     cols u32
    20      4     reserved u32 (zero)
    24      8*rows*cols   float64 row-major data
    ...     4*rows        u32 labels (only if flag bit 0 set)

CSV alternative: header ``label,f0,f1,...`` (the ``label`` column is optional).

GDA1 (statistics and classifiers), little-endian::

    0   4  magic b"GDA1"
    4   2  version u16 (=1)
    6   2  kind u16: 0 STATS, 1 LDA, 2 RGDA, 3 LRRGDA, 4 SGD
    8   4  C u32 (classes)
    12  4  d u32 (feature dim)
    16  4  r u32 (rank; 0 unless LRRGDA)
    20  4  reserved u32 (zero)
    24  4*C          class ids u32

followed by float64 blocks per kind:

    STATS   counts u64[C]; per class: mu[d], sigma[d*d]
    LDA     shared precision[d*d]; W[C*d]; b[C]
    SGD     W[C*d]; b[C]
    RGDA    per class: mu[d], log_det, log_prior, precision[d*d]
    LRRGDA  shared: alpha1, alpha2, alpha3, log_det_B, B_inv[d*d], B[d*d];
            per class: w[d], b, P[r*d], M_inv[r*r]

LRRGDA does not store class means; they are recovered as ``B @ w_c``.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from .classifiers import LinearClassifier, RegularizationParams, RgdaClassifier
from .errors import FormatError
from .lr_rgda import LrGlobal, LrRgdaClassifier
from .stats import FeatureMatrix, GaussianClassStats, StatsRegistry

FMX_MAGIC = b"FMX1"
GDA_MAGIC = b"GDA1"
GDA_VERSION = 1
HEADER_BYTES = 24

_FMX_HEADER = struct.Struct("<4sIQII")
_GDA_HEADER = struct.Struct("<4sHHIIII")

KIND_CODES = {"STATS": 0, "LDA": 1, "RGDA": 2, "LRRGDA": 3, "SGD": 4}
KIND_NAMES = {v: k for k, v in KIND_CODES.items()}


# ---------------------------------------------------------------- FMX1 / CSV


def write_fmx(path, fm: FeatureMatrix) -> None:
    flags = 1 if fm.labels is not None else 0
    with open(path, "wb") as fh:
        fh.write(_FMX_HEADER.pack(FMX_MAGIC, flags, fm.rows, fm.cols, 0))
        fh.write(np.ascontiguousarray(fm.data, dtype="<f8").tobytes())
        if fm.labels is not None:
            if fm.labels.size and fm.labels.max() >= 2**32:
                raise ValueError("labels must fit in u32")
            fh.write(fm.labels.astype("<u4").tobytes())


def parse_fmx(buf: bytes) -> FeatureMatrix:
    if len(buf) < HEADER_BYTES:
        raise FormatError(f"truncated FMX1 header ({len(buf)} bytes)", len(buf))
    magic, flags, rows, cols, _ = _FMX_HEADER.unpack_from(buf, 0)
    if magic != FMX_MAGIC:
        raise FormatError(f"bad magic {magic!r}", 0)
    if cols < 1:
        raise FormatError("cols must be >= 1", 16)
    if flags & ~1:
        raise FormatError(f"unknown flag bits {flags:#x}", 4)
    n_data = rows * cols * 8
    end = HEADER_BYTES + n_data
    if len(buf) < end:
        raise FormatError(f"truncated data: expected {n_data} bytes of float64", len(buf))
    data = np.frombuffer(buf, dtype="<f8", count=rows * cols, offset=HEADER_BYTES)
    data = data.astype(np.float64).reshape(rows, cols)
    labels = None
    if flags & 1:
        if len(buf) < end + 4 * rows:
            raise FormatError(f"truncated labels: expected {4 * rows} bytes", len(buf))
        labels = np.frombuffer(buf, dtype="<u4", count=rows, offset=end).astype(np.int64)
        end += 4 * rows
    if len(buf) != end:
        raise FormatError(f"{len(buf) - end} trailing bytes", end)
    return FeatureMatrix(data, labels)


def parse_csv(buf: bytes) -> FeatureMatrix:
    text = buf.decode("utf-8")
    lines = text.splitlines(keepends=True)
    if not lines:
        raise FormatError("zero rows", 0)
    header = [h.strip() for h in lines[0].strip().split(",")]
    has_label = header[0] == "label"
    feat_cols = header[1:] if has_label else header
    expected = [f"f{i}" for i in range(len(feat_cols))]
    if feat_cols != expected or not feat_cols:
        raise FormatError(f"CSV header must be 'label,f0,f1,...' or 'f0,f1,...', got {lines[0].strip()!r}", 0)
    width = len(header)
    rows, labels = [], []
    offset = len(lines[0].encode("utf-8"))
    for line in lines[1:]:
        raw = line.strip()
        if raw:
            parts = raw.split(",")
            if len(parts) != width:
                raise FormatError(f"expected {width} fields, got {len(parts)}", offset)
            try:
                vals = [float(p) for p in parts]
            except ValueError:
                raise FormatError(f"non-numeric field in {raw!r}", offset) from None
            if has_label:
                lab = vals[0]
                if lab < 0 or lab != int(lab):
                    raise FormatError(f"label must be a non-negative integer, got {parts[0]!r}", offset)
                labels.append(int(lab))
                vals = vals[1:]
            rows.append(vals)
        offset += len(line.encode("utf-8"))
    data = np.asarray(rows, dtype=np.float64).reshape(len(rows), len(feat_cols))
    return FeatureMatrix(data, np.asarray(labels, dtype=np.int64) if has_label else None)


def read_features(path) -> FeatureMatrix:
    """Load FMX1 or CSV, chosen by the leading magic bytes."""
    buf = Path(path).read_bytes()
    if not buf:
        raise FormatError("zero rows", 0)
    if buf[:4] == FMX_MAGIC:
        return parse_fmx(buf)
    return parse_csv(buf)


def write_csv(path, fm: FeatureMatrix) -> None:
    cols = [f"f{i}" for i in range(fm.cols)]
    with open(path, "w", newline="") as fh:
        fh.write(",".join((["label"] if fm.labels is not None else []) + cols) + "\n")
        for i in range(fm.rows):
            vals = [repr(float(v)) for v in fm.data[i]]
            if fm.labels is not None:
                vals.insert(0, str(int(fm.labels[i])))
            fh.write(",".join(vals) + "\n")


# ---------------------------------------------------------------- GDA1


def _kind_of(obj) -> str:
    if isinstance(obj, StatsRegistry):
        return "STATS"
    if isinstance(obj, LrRgdaClassifier):
        return "LRRGDA"
    if isinstance(obj, RgdaClassifier):
        return "RGDA"
    if isinstance(obj, LinearClassifier):
        return "SGD" if obj.kind == "SGD" else "LDA"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def storage_layout(kind: str, C: int, d: int, r: int = 0) -> dict:
    """Exact GDA1 byte counts for a classifier of the given shape.

    Nothing is allocated, so this also answers "how large would it be".
    """
    kind = kind.upper()
    f8 = 8
    if kind == "STATS":
        shared, per_class = C * 8, f8 * (d + d * d)
        blocks = {"counts": C * 8, "mu": f8 * d, "sigma": f8 * d * d}
    elif kind == "LDA":
        shared, per_class = f8 * d * d, f8 * (d + 1)
        blocks = {"precision(shared)": f8 * d * d, "w": f8 * d, "b": f8}
    elif kind == "SGD":
        shared, per_class = 0, f8 * (d + 1)
        blocks = {"w": f8 * d, "b": f8}
    elif kind == "RGDA":
        shared, per_class = 0, f8 * (d * d + d + 2)
        blocks = {"mu": f8 * d, "log_det": f8, "log_prior": f8, "precision": f8 * d * d}
    elif kind == "LRRGDA":
        shared, per_class = f8 * (4 + 2 * d * d), f8 * (d * r + r * r + d + 1)
        blocks = {"w": f8 * d, "b": f8, "P": f8 * r * d, "M_inv": f8 * r * r}
    else:
        raise ValueError(f"unknown kind {kind!r}")
    header = HEADER_BYTES + 4 * C
    return {
        "kind": kind,
        "C": C,
        "d": d,
        "r": r,
        "header_bytes": header,
        "shared_bytes": shared,
        "per_class_bytes": per_class,
        "per_class_blocks": blocks,
        "per_class_total_bytes": C * per_class,
        "total_bytes": header + shared + C * per_class,
    }


def storage_report(clf) -> dict:
    """Byte breakdown of ``clf`` as it would be written by :func:`save_gda`."""
    kind = _kind_of(clf)
    if kind == "STATS":
        C, d, r = len(clf), clf.dim, 0
    else:
        C, d = len(clf.class_ids), clf.dim
        r = clf.rank if kind == "LRRGDA" else 0
    return storage_layout(kind, C, d, r)


def _f8(a) -> bytes:
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def dumps_gda(obj) -> bytes:
    kind = _kind_of(obj)
    out = io.BytesIO()
    if kind == "STATS":
        ids = np.asarray(obj.class_ids, dtype=np.int64)
        C, d, r = len(ids), obj.dim, 0
    else:
        ids = np.asarray(obj.class_ids, dtype=np.int64)
        C, d = len(ids), obj.dim
        r = obj.rank if kind == "LRRGDA" else 0
    if C and (ids.min() < 0 or ids.max() >= 2**32):
        raise ValueError("class ids must fit in u32")
    out.write(_GDA_HEADER.pack(GDA_MAGIC, GDA_VERSION, KIND_CODES[kind], C, d, r, 0))
    out.write(ids.astype("<u4").tobytes())
    if kind == "STATS":
        stats = list(obj.iter_stats())
        out.write(np.asarray([s.count for s in stats], dtype="<u8").tobytes())
        for s in stats:
            out.write(_f8(s.mu))
            out.write(_f8(s.sigma))
    elif kind == "LDA":
        P = obj.precision if obj.precision is not None else np.zeros((d, d))
        out.write(_f8(P))
        out.write(_f8(obj.W))
        out.write(_f8(obj.b))
    elif kind == "SGD":
        out.write(_f8(obj.W))
        out.write(_f8(obj.b))
    elif kind == "RGDA":
        for c in range(C):
            out.write(_f8(obj.mu[c]))
            out.write(_f8([obj.log_det[c], obj.log_prior[c]]))
            out.write(_f8(obj.precision[c]))
    else:
        p = obj.params
        g = obj.global_
        out.write(_f8([p.alpha1, p.alpha2, p.alpha3, g.log_det_B]))
        out.write(_f8(g.B_inv))
        out.write(_f8(g.B))
        for c in range(C):
            out.write(_f8(obj.W[c]))
            out.write(_f8([obj.bias[c]]))
            out.write(_f8(obj.P[c]))
            out.write(_f8(obj.M_inv[c]))
    return out.getvalue()


def save_gda(path, obj) -> None:
    Path(path).write_bytes(dumps_gda(obj))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n_items: int, dtype: str) -> np.ndarray:
        size = np.dtype(dtype).itemsize * n_items
        if self.pos + size > len(self.buf):
            raise FormatError(f"truncated GDA1 block: need {size} bytes", self.pos)
        arr = np.frombuffer(self.buf, dtype=dtype, count=n_items, offset=self.pos)
        self.pos += size
        return arr.astype(np.float64 if dtype == "<f8" else np.int64)

    def f8(self, *shape: int) -> np.ndarray:
        n = int(np.prod(shape)) if shape else 1
        return self.take(n, "<f8").reshape(shape) if shape else self.take(1, "<f8")[0]


def loads_gda(buf: bytes):
    if len(buf) < HEADER_BYTES:
        raise FormatError("truncated GDA1 header", len(buf))
    magic, version, code, C, d, r, _ = _GDA_HEADER.unpack_from(buf, 0)
    if magic != GDA_MAGIC:
        raise FormatError(f"bad magic {magic!r}", 0)
    if version != GDA_VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    if code not in KIND_NAMES:
        raise FormatError(f"unknown kind code {code}", 6)
    kind = KIND_NAMES[code]
    rd = _Reader(buf)
    rd.pos = HEADER_BYTES
    ids = rd.take(C, "<u4")
    if kind == "STATS":
        counts = rd.take(C, "<u8")
        reg = StatsRegistry(d)
        for i in range(C):
            mu = rd.f8(d)
            sigma = rd.f8(d, d)
            reg.set_stats(GaussianClassStats(int(ids[i]), mu, sigma, int(counts[i])))
        obj = reg
    elif kind in ("LDA", "SGD"):
        P = rd.f8(d, d) if kind == "LDA" else None
        W = rd.f8(C, d)
        b = rd.f8(C)
        obj = LinearClassifier(ids, W, b, kind=kind, precision=P)
    elif kind == "RGDA":
        mu = np.empty((C, d))
        prec = np.empty((C, d, d))
        ld = np.empty(C)
        lp = np.empty(C)
        for c in range(C):
            mu[c] = rd.f8(d)
            ld[c], lp[c] = rd.f8(2)
            prec[c] = rd.f8(d, d)
        obj = RgdaClassifier(ids, mu, prec, ld, lp)
    else:
        a1, a2, a3, log_det_B = rd.f8(4)
        B_inv = rd.f8(d, d)
        B = rd.f8(d, d)
        W = np.empty((C, d))
        bias = np.empty(C)
        P = np.empty((C, r, d))
        M_inv = np.empty((C, r, r))
        for c in range(C):
            W[c] = rd.f8(d)
            bias[c] = rd.f8(1)[0]
            P[c] = rd.f8(r, d)
            M_inv[c] = rd.f8(r, r)
        params = RegularizationParams(alpha1=a1, alpha2=a2, alpha3=a3, rank=max(r, 1))
        obj = LrRgdaClassifier(
            global_=LrGlobal(B=B, B_inv=B_inv, log_det_B=float(log_det_B)),
            class_ids=ids,
            mu=W @ B,
            W=W,
            bias=bias,
            P=P,
            M_inv=M_inv,
            params=params,
        )
    if rd.pos != len(buf):
        raise FormatError(f"{len(buf) - rd.pos} trailing bytes", rd.pos)
    return obj


def load_gda(path):
    return loads_gda(Path(path).read_bytes())
