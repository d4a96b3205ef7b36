"""File formats: schema parameters, run configs and metrics CSV.

The parameter file is line-oriented and human-diffable:

    dsn-schemas v1
    D=253 M=5 A=3 window=5
    W+4 12 45 101
    R+ 5 19

one line per schema, listing its set bit indices in ascending order under
the augmented-row layout pinned by the header.  Loading validates every
header field against the caller's geometry and names the first field that
disagrees.
"""

from __future__ import annotations

import csv
import io
from dataclasses import fields as dataclass_fields

import numpy as np

from .agent import EpisodeRecord, RunConfig
from .breakout import BreakoutConfig
from .core import EnvSpec, ParameterSet

FORMAT_HEADER = "dsn-schemas v1"


class ParamsFormatError(ValueError):
    """A parameter file failed validation; the message names the field."""


def params_to_text(params: ParameterSet) -> str:
    spec = params.spec
    lines = [
        FORMAT_HEADER,
        f"D={spec.row_width} M={spec.num_types} A={spec.num_actions} "
        f"window={spec.window_side}",
    ]
    for tag in params.tags():
        for row in params.matrix(tag):
            bits = " ".join(str(b) for b in np.flatnonzero(row))
            lines.append(f"{tag} {bits}")
    return "\n".join(lines) + "\n"


def save_params(params: ParameterSet, path: str) -> None:
    with open(path, "w") as fh:
        fh.write(params_to_text(params))


def params_from_text(text: str, spec: EnvSpec, cap: int = 500) -> ParameterSet:
    lines = [ln.rstrip("\n") for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != FORMAT_HEADER:
        raise ParamsFormatError(f"missing header {FORMAT_HEADER!r}")
    expected = {
        "D": spec.row_width,
        "M": spec.num_types,
        "A": spec.num_actions,
        "window": spec.window_side,
    }
    got = {}
    for token in lines[1].split():
        name, _, value = token.partition("=")
        got[name] = int(value)
    for name, want in expected.items():
        if got.get(name) != want:
            raise ParamsFormatError(
                f"field {name}: file has {got.get(name)}, configuration needs {want}"
            )
    params = ParameterSet.empty(spec, cap=cap)
    rows: dict[str, list[np.ndarray]] = {tag: [] for tag in params.tags()}
    for line in lines[2:]:
        tag, *bits = line.split()
        if tag not in rows:
            raise ParamsFormatError(f"field tag: unknown matrix tag {tag!r}")
        mask = np.zeros(spec.row_width, np.uint8)
        prev = -1
        for b in bits:
            idx = int(b)
            if idx <= prev:
                raise ParamsFormatError("field bits: indices must be ascending")
            if idx >= spec.row_width:
                raise ParamsFormatError(f"field bits: index {idx} >= D={spec.row_width}")
            mask[idx] = 1
            prev = idx
        if mask.sum() == 0:
            raise ParamsFormatError("field bits: schema has no bits set")
        rows[tag].append(mask)
    for tag, masks in rows.items():
        if masks:
            params.set_matrix(tag, np.stack(masks))
    return params


def load_params(path: str, spec: EnvSpec, cap: int = 500) -> ParameterSet:
    with open(path) as fh:
        return params_from_text(fh.read(), spec, cap=cap)


# ---------------------------------------------------------------------------
# metrics

METRIC_COLUMNS = [
    "episode",
    "seed",
    "total_reward",
    "steps",
    "bricks",
    "lives_lost",
    "plans_ok",
    "plans_tried",
]


def metrics_to_text(records: list[EpisodeRecord]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(METRIC_COLUMNS)
    for r in records:
        writer.writerow(
            [r.episode, r.seed, r.total_reward, r.steps, r.bricks, r.lives_lost,
             r.plans_ok, r.plans_tried]
        )
    groups: dict[int, list[EpisodeRecord]] = {}
    for r in records:
        groups.setdefault(r.seed, []).append(r)
    for seed, rows in groups.items():
        table = np.array(
            [[r.total_reward, r.steps, r.bricks, r.lives_lost, r.plans_ok, r.plans_tried]
             for r in rows],
            dtype=np.float64,
        )
        writer.writerow(["mean", seed] + [f"{v:.6f}" for v in table.mean(axis=0)])
        writer.writerow(["std", seed] + [f"{v:.6f}" for v in table.std(axis=0)])
    return out.getvalue()


def emit_metrics(records: list[EpisodeRecord], path: str) -> None:
    with open(path, "w") as fh:
        fh.write(metrics_to_text(records))


# ---------------------------------------------------------------------------
# run configuration files: flat "key = value" lines, # comments

_ENV_FIELDS = {f.name: f.type for f in dataclass_fields(BreakoutConfig)}
_RUN_FIELDS = {f.name for f in dataclass_fields(RunConfig)} - {"env"}


def parse_config_text(text: str) -> RunConfig:
    env_kwargs: dict = {}
    run_kwargs: dict = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line is not key = value: {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key in _ENV_FIELDS:
            env_kwargs[key] = int(value)
        elif key == "seeds":
            run_kwargs["seeds"] = tuple(int(v) for v in value.split(",") if v.strip())
        elif key == "explore_epsilon":
            run_kwargs[key] = float(value)
        elif key in ("replan", "params_path", "metrics_path"):
            run_kwargs[key] = value
        elif key in _RUN_FIELDS:
            run_kwargs[key] = int(value)
        else:
            raise ValueError(f"unknown config key {key!r}")
    return RunConfig(env=BreakoutConfig(**env_kwargs), **run_kwargs)


def load_config(path: str) -> RunConfig:
    with open(path) as fh:
        return parse_config_text(fh.read())
