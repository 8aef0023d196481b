"""48-entry numeric descriptor of a timing path.

Canonical order (frozen for dataset interchange):

    [0]  endpoint setup (ps)
    [1]  nominal timing-engine path delay (ps)
    [2]  sum of fanout over data-portion cells
    [3..17]   launch-clock portion block
    [18..32]  capture-clock portion block
    [33..47]  data portion block

Each 15-entry portion block is: gate count, portion delay (ps), cell counts
for drive strengths x0,x1,x2,x4,x8,x16,x32, then total routed length (um)
on metal layers M1..M6. M7 routing exists in the wire model but is not a
feature.
"""

from __future__ import annotations

import csv
import io

import numpy as np

from .library import STRENGTHS
from .netlist import Design, DesignIndex, SubPath, TimingPath

N_FEATURES = 48

_PORTION_FIELDS = (
    ["gate_count", "delay_ps"]
    + [f"n_{s.value}" for s in STRENGTHS]
    + [f"len_m{i}_um" for i in range(1, 7)]
)

FEATURE_NAMES: tuple[str, ...] = tuple(
    ["setup_ps", "sta_delay_ps", "dp_fanout_sum"]
    + [f"{portion}_{f}" for portion in ("lp", "cp", "dp") for f in _PORTION_FIELDS]
)

assert len(FEATURE_NAMES) == N_FEATURES


def _portion_block(index: DesignIndex, sub: SubPath) -> list[float]:
    block = [float(len(sub.gates)), index.subpath_nominal_delay(sub)]
    counts = {s: 0 for s in STRENGTHS}
    for gid in sub.gates:
        counts[index.gate_by_id[gid].drive_strength] += 1
    block.extend(float(counts[s]) for s in STRENGTHS)
    layer_len = {f"M{i}": 0.0 for i in range(1, 8)}
    for wk in sub.wires:
        for seg in index.wire_by_key[wk].segments:
            layer_len[seg.layer] += seg.length_um
    block.extend(layer_len[f"M{i}"] for i in range(1, 7))
    return block


def extract_features(design: Design, path: TimingPath, sta_delay: float,
                     index: DesignIndex | None = None) -> np.ndarray:
    """Build the canonical 48-entry vector for one path."""
    if sta_delay <= 0:
        raise ValueError("sta_delay must be > 0")
    index = index or DesignIndex(design)
    dp_fanout = float(sum(index.fanout(g) for g in path.dp.gates))
    vec = [path.endpoint_setup, float(sta_delay), dp_fanout]
    for sub in (path.lp, path.cp, path.dp):
        vec.extend(_portion_block(index, sub))
    out = np.asarray(vec, dtype=float)
    if out.shape != (N_FEATURES,):
        raise AssertionError("feature extraction produced a malformed vector")
    if not np.all(np.isfinite(out)):
        raise AssertionError("feature vector contains non-finite entries")
    return out


def feature_matrix(design: Design, paths, index: DesignIndex | None = None) -> np.ndarray:
    index = index or DesignIndex(design)
    return np.stack([
        extract_features(design, p, index.path_nominal_delay(p), index) for p in paths
    ])


# --- dataset CSV (path_id,f00..f47,label_ps) ---

DATASET_HEADER = ["path_id"] + [f"f{i:02d}" for i in range(N_FEATURES)] + ["label_ps"]


def dataset_to_csv(path_ids, X: np.ndarray, y: np.ndarray) -> str:
    """Serialize rows with shortest-roundtrip float text (exact reload)."""
    if X.shape[1] != N_FEATURES:
        raise ValueError(f"feature matrix must have {N_FEATURES} columns")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(DATASET_HEADER)
    for pid, row, label in zip(path_ids, X, y):
        w.writerow([pid] + [repr(float(v)) for v in row] + [repr(float(label))])
    return buf.getvalue()


def dataset_from_csv(text: str):
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != DATASET_HEADER:
        raise ValueError("unrecognized dataset header")
    path_ids = [r[0] for r in rows[1:]]
    data = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    if data.size == 0:
        return path_ids, np.zeros((0, N_FEATURES)), np.zeros(0)
    return path_ids, data[:, :N_FEATURES], data[:, N_FEATURES]
