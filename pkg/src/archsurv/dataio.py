"""CSV schemas and provenance headers.

Data files: header `id,t1..tK,d1..dK,y,dtilde`; onset cells may be empty for
censored onsets (they equal y).  Latent files: `id,d,tt1..ttK` with empty
cells for onsets that never happen.  Query files: `id,t1..tK` with empty
cells for unobserved onsets.  All floats are written in shortest
round-trip form, so parse/serialize is idempotent.  Every file starts with
a `#` provenance line recording the producing command, version, seed, and
config digest.
"""

from __future__ import annotations

import csv
import hashlib
import io

import numpy as np

from . import __version__
from .data import SurvivalData
from .errors import ConfigError
from .predict import PredictionQuery
from .simulate import LatentTruth


def provenance_line(command: str, seed, config_digest: str) -> str:
    return (
        f"# archsurv command={command} version={__version__} "
        f"seed={seed} config_sha256={config_digest}"
    )


def config_digest(items: dict) -> str:
    canon = "\n".join(f"{k}={items[k]!r}" for k in sorted(items))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _open_rows(path):
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.reader(io.StringIO("".join(lines))))


def write_data_csv(path, data: SurvivalData, header_line: str = None) -> None:
    k = data.k
    with open(path, "w", newline="") as fh:
        if header_line:
            fh.write(header_line + "\n")
        w = csv.writer(fh)
        w.writerow(
            ["id"]
            + [f"t{j + 1}" for j in range(k)]
            + [f"d{j + 1}" for j in range(k)]
            + ["y", "dtilde"]
        )
        for i in range(data.n):
            row = [str(data.ids[i])]
            row += [_fmt(data.t[i, j]) for j in range(k)]
            row += [str(int(data.delta[i, j])) for j in range(k)]
            row += [_fmt(data.y[i]), str(int(data.dtilde[i]))]
            w.writerow(row)


def read_data_csv(path) -> SurvivalData:
    rows = _open_rows(path)
    if not rows:
        raise ConfigError(f"{path}: empty file")
    header = rows[0]
    if len(header) < 4 or header[0] != "id" or header[-2:] != ["y", "dtilde"]:
        raise ConfigError(f"{path}: expected header id,t1..tK,d1..dK,y,dtilde")
    k = (len(header) - 3) // 2
    expect = (
        ["id"]
        + [f"t{j + 1}" for j in range(k)]
        + [f"d{j + 1}" for j in range(k)]
        + ["y", "dtilde"]
    )
    if header != expect:
        raise ConfigError(f"{path}: malformed header {header}")

    ids, t, d, y, dt = [], [], [], [], []
    problems = []
    for rn, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(expect):
            problems.append(f"line {rn}: {len(row)} fields, expected {len(expect)}")
            continue
        try:
            y_i = float(row[1 + 2 * k])
            t_i = [float(c) if c != "" else y_i for c in row[1 : 1 + k]]
            d_i = [int(c) for c in row[1 + k : 1 + 2 * k]]
            dt_i = int(row[2 + 2 * k])
        except ValueError as exc:
            problems.append(f"line {rn}: {exc}")
            continue
        ids.append(row[0])
        t.append(t_i)
        d.append(d_i)
        y.append(y_i)
        dt.append(dt_i)
    if problems:
        raise ConfigError(f"{path}: " + "; ".join(problems[:5]))
    if not ids:
        raise ConfigError(f"{path}: no data rows")
    try:
        return SurvivalData(t, d, y, dt, ids=np.array(ids))
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def write_latent_csv(path, latent: LatentTruth, header_line: str = None) -> None:
    enc = latent.onset_or_inf()
    k = enc.shape[1]
    with open(path, "w", newline="") as fh:
        if header_line:
            fh.write(header_line + "\n")
        w = csv.writer(fh)
        w.writerow(["id", "d"] + [f"tt{j + 1}" for j in range(k)])
        for i in range(latent.d.size):
            row = [str(latent.ids[i]), _fmt(latent.d[i])]
            row += ["" if np.isinf(enc[i, j]) else _fmt(enc[i, j]) for j in range(k)]
            w.writerow(row)


def read_latent_csv(path):
    rows = _open_rows(path)
    header = rows[0]
    k = len(header) - 2
    ids, d, onset = [], [], []
    for row in rows[1:]:
        if not row:
            continue
        ids.append(row[0])
        d.append(float(row[1]))
        onset.append([float(c) if c != "" else np.inf for c in row[2 : 2 + k]])
    return np.array(ids), np.asarray(d), np.asarray(onset)


def write_query_csv(path, queries, k, ids=None, header_line=None) -> None:
    with open(path, "w", newline="") as fh:
        if header_line:
            fh.write(header_line + "\n")
        w = csv.writer(fh)
        w.writerow(["id"] + [f"t{j + 1}" for j in range(k)])
        for i, q in enumerate(queries):
            obs = dict(q.events)
            rid = ids[i] if ids is not None else i + 1
            w.writerow(
                [str(rid)]
                + [_fmt(obs[j]) if j in obs else "" for j in range(k)]
            )


def read_query_csv(path, k=None):
    rows = _open_rows(path)
    if not rows:
        raise ConfigError(f"{path}: empty query file")
    header = rows[0]
    if header[0] != "id":
        raise ConfigError(f"{path}: first query column must be id")
    file_k = len(header) - 1
    if k is not None and file_k != k:
        raise ConfigError(f"{path}: query has {file_k} events, model expects {k}")
    ids, queries = [], []
    for rn, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != file_k + 1:
            raise ConfigError(f"{path}: line {rn}: wrong field count")
        events = tuple(
            (j, float(c)) for j, c in enumerate(row[1:]) if c != ""
        )
        ids.append(row[0])
        queries.append(PredictionQuery(events))
    return ids, queries
