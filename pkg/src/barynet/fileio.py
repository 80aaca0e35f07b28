"""CSV and binary PPM ingestion, run manifests, and model persistence."""
from __future__ import annotations

import csv
import json
import os
import platform
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .nets import BatchNormStats, LabelNet, NetSpec, TransportNet
from .oracle.lp import DiscreteDist
from .objectives import LabeledSample


class FormatError(ValueError):
    pass


# ---------------------------------------------------------------------------
# CSV


def _fmt(v) -> str:
    return repr(float(v))


def write_csv(path, columns: dict):
    """Write named equal-length columns; floats use shortest round-trip repr."""
    names = list(columns)
    cols = [np.asarray(columns[n]).ravel() for n in names]
    if len({len(c) for c in cols}) > 1:
        raise ValueError("columns must have equal length")
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(names)
        for row in zip(*cols):
            out.writerow([str(int(v)) if np.issubdtype(type(v), np.integer) else _fmt(v) for v in row])


def sample_columns(sample: LabeledSample) -> dict:
    cols = {f"x{i + 1}": sample.xs[:, i] for i in range(sample.x_dim)}
    if sample.zs is not None:
        if sample.discrete:
            cols["label"] = sample.zs.astype(np.int64)
        else:
            cols.update({f"z{i + 1}": sample.zs[:, i] for i in range(sample.z_dim)})
    return cols


def write_sample_csv(path, sample: LabeledSample):
    write_csv(path, sample_columns(sample))


def write_points_csv(path, points, prefix="x"):
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    write_csv(path, {f"{prefix}{i + 1}": pts[:, i] for i in range(pts.shape[1])})


def _parse_cell(text: str) -> float:
    text = text.strip()
    if text == "" or text.lower() in ("na", "nan", "null"):
        return np.nan
    return float(text)


def load_csv(path, x_cols=None, z_cols=None, drop_incomplete: bool = False) -> LabeledSample:
    """Read a headered CSV into a sample.

    Columns default to ``x1..xd`` and either ``label`` (integer labels) or
    ``z1..zk``. Rows with missing values are an error unless
    ``drop_incomplete`` is set.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise FormatError(f"{path}: empty file") from None
        rows = [r for r in reader if any(cell.strip() for cell in r)]
    if len(set(header)) != len(header):
        raise FormatError(f"{path}: duplicate column names")
    if x_cols is None:
        x_cols = [h for h in header if h.startswith("x") and h[1:].isdigit()]
    discrete = False
    if z_cols is None:
        if "label" in header:
            z_cols, discrete = ["label"], True
        else:
            z_cols = [h for h in header if h.startswith("z") and h[1:].isdigit()]
    missing = [c for c in list(x_cols) + list(z_cols) if c not in header]
    if missing or not x_cols:
        raise FormatError(f"{path}: missing columns {missing or 'x1..xd'}")
    index = {h: i for i, h in enumerate(header)}
    data = np.empty((len(rows), len(x_cols) + len(z_cols)))
    for r, row in enumerate(rows):
        if len(row) != len(header):
            raise FormatError(f"{path}: line {r + 2} has {len(row)} fields, expected {len(header)}")
        for k, col in enumerate(list(x_cols) + list(z_cols)):
            try:
                data[r, k] = _parse_cell(row[index[col]])
            except ValueError:
                raise FormatError(f"{path}: line {r + 2}, column {col}: not a number") from None
    bad = ~np.all(np.isfinite(data), axis=1)
    if bad.any():
        if not drop_incomplete:
            raise FormatError(f"{path}: {int(bad.sum())} rows with missing values (use drop_incomplete)")
        data = data[~bad]
    if len(data) == 0:
        raise FormatError(f"{path}: no complete rows")
    xs = data[:, :len(x_cols)]
    if not z_cols:
        return LabeledSample(xs)
    zs = data[:, len(x_cols):]
    if discrete:
        if np.any(zs != np.round(zs)):
            raise FormatError(f"{path}: labels must be integers")
        return LabeledSample(xs, zs[:, 0].astype(np.int64))
    return LabeledSample(xs, zs)


# ---------------------------------------------------------------------------
# PPM (binary P6, maxval 255)


def _read_token(buf: bytes, pos: int):
    n = len(buf)
    while pos < n:
        if buf[pos:pos + 1] == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif buf[pos:pos + 1].isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise FormatError(f"unexpected end of header at byte {start}")
    return buf[start:pos], start, pos


def read_ppm(path):
    """Return ``(height, width, uint8 array of shape (H, W, 3))``."""
    with open(path, "rb") as fh:
        buf = fh.read()
    magic, off, pos = _read_token(buf, 0)
    if magic != b"P6":
        raise FormatError(f"not a binary P6 file (magic {magic!r} at byte {off})")
    vals = []
    for what in ("width", "height", "maxval"):
        tok, off, pos = _read_token(buf, pos)
        if not tok.isdigit() or int(tok) <= 0:
            raise FormatError(f"bad {what} {tok!r} at byte {off}")
        vals.append(int(tok))
    width, height, maxval = vals
    if maxval != 255:
        raise FormatError(f"maxval must be 255, got {maxval} at byte {off}")
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise FormatError(f"missing whitespace after header at byte {pos}")
    pos += 1
    need = width * height * 3
    if len(buf) - pos != need:
        raise FormatError(f"pixel data at byte {pos} has {len(buf) - pos} bytes, expected {need}")
    arr = np.frombuffer(buf, dtype=np.uint8, count=need, offset=pos)
    return height, width, arr.reshape(height, width, 3)


def load_image_ppm(path) -> DiscreteDist:
    """Pixels as a uniform discrete distribution over [0,1]^3 (row-major order)."""
    _, _, arr = read_ppm(path)
    return DiscreteDist(arr.reshape(-1, 3).astype(np.float64) / 255.0)


def ppm_shape(path) -> tuple:
    h, w, _ = read_ppm(path)
    return h, w


def write_image_ppm(path, pixels, shape=None):
    """Clamp to [0,1], quantise to bytes, write P6. ``pixels`` is (H, W, 3) or (H*W, 3) with ``shape``."""
    px = np.asarray(pixels, dtype=np.float64)
    if px.ndim == 2:
        if shape is None:
            raise ValueError("flat pixel arrays need shape=(height, width)")
        px = px.reshape(shape[0], shape[1], 3)
    if px.ndim != 3 or px.shape[2] != 3:
        raise ValueError("pixels must have three channels")
    q = np.round(np.clip(px, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w, _ = q.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(q.tobytes())


# ---------------------------------------------------------------------------
# run manifest


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


@dataclass
class RunManifest:
    seed: int
    subcommand: str
    params: dict = field(default_factory=dict)
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    wall_time: float = 0.0
    created: str = ""
    rng: str = "numpy PCG64 (default_rng)"
    python: str = field(default_factory=platform.python_version)

    FILENAME = "manifest.json"

    def to_json(self) -> str:
        return json.dumps(_jsonable(asdict(self)), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        return cls(**json.loads(text))

    def write(self, directory):
        os.makedirs(directory, exist_ok=True)
        path = os.path.join(directory, self.FILENAME)
        with open(path, "w") as fh:
            fh.write(self.to_json() + "\n")
        return path

    @classmethod
    def read(cls, directory) -> "RunManifest":
        with open(os.path.join(directory, cls.FILENAME)) as fh:
            return cls.from_json(fh.read())

    def stamp(self, started: float):
        self.wall_time = time.time() - started
        self.created = time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime())
        return self


# ---------------------------------------------------------------------------
# model persistence (JSON keeps run directories byte-deterministic)


def _stats_dict(stats):
    if stats is None:
        return None
    return {"mean": {str(k): v.tolist() for k, v in stats.mean.items()},
            "var": {str(k): v.tolist() for k, v in stats.var.items()},
            "momentum": stats.momentum}


def _stats_from(d):
    if d is None:
        return None
    return BatchNormStats({int(k): np.asarray(v) for k, v in d["mean"].items()},
                          {int(k): np.asarray(v) for k, v in d["var"].items()}, d["momentum"])


def net_to_dict(net) -> dict:
    """Serialise a TransportNet or LabelNet (spec, parameters, label layout)."""
    out = {"spec": net.spec.to_dict(), "params": np.asarray(net.param_vector().values).tolist(),
           "n_labels": net.n_labels, "bn_stats": _stats_dict(net.bn_stats)}
    if isinstance(net, TransportNet):
        out.update(kind="transport", x_dim=net.x_dim, z_dim=net.z_dim, residual=net.residual)
    elif isinstance(net, LabelNet):
        out.update(kind="label", clamp_bias_and_bn=net.clamp_bias_and_bn)
    else:
        raise TypeError(f"cannot serialise {type(net).__name__}")
    return out


def net_from_dict(d: dict):
    spec = NetSpec.from_dict(d["spec"])
    params = np.asarray(d["params"], dtype=np.float64)
    stats = _stats_from(d.get("bn_stats"))
    if d["kind"] == "transport":
        return TransportNet(spec, params, d["x_dim"], d["z_dim"], d["n_labels"], d["residual"],
                            bn_stats=stats, training=stats is None)
    if d["kind"] == "label":
        return LabelNet(spec, params, d["n_labels"], d["clamp_bias_and_bn"], bn_stats=stats,
                        training=stats is None)
    raise FormatError(f"unknown net kind {d['kind']!r}")


def save_model(path, **nets):
    """Write named nets (``None`` entries are skipped) to one JSON file."""
    payload = {name: net_to_dict(net) for name, net in nets.items() if net is not None}
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")


def load_model(path) -> dict:
    with open(path) as fh:
        payload = json.load(fh)
    return {name: net_from_dict(d) for name, d in payload.items()}
