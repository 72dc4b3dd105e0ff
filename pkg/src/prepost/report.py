"""Render MC summaries as CSV, aligned text, or JSON; atomic file output."""
from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from pathlib import Path

from .harness import McSummary

__all__ = ["render_summary", "write_atomic"]

FORMATS = ("csv", "text", "json")


def _g12(x: float) -> str:
    return "nan" if math.isnan(x) else f"{x:.12g}"


def _pivot(summaries: list[McSummary]):
    rows: dict[tuple, dict] = {}
    specs = sorted({s.model_spec for s in summaries})
    for s in sorted(summaries, key=lambda s: s.sort_key):
        key = (s.scenario.number, s.cluster_size, s.config_id)
        rows.setdefault(key, {})[s.model_spec] = s
    return rows, specs


def _csv(summaries) -> str:
    rows, specs = _pivot(summaries)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = ["scenario", "cluster_size", "config", "k"]
    for spec in specs:
        header += [f"{spec.label}:{col}" for col in ("tau_hat", "pct_err", "mc_se", "sd", "n_converged")]
    writer.writerow(header)
    for (scenario, n, cid), cells in rows.items():
        k = next(iter(cells.values())).k
        line = [scenario, n, cid, k]
        for spec in specs:
            s = cells.get(spec)
            if s is None:
                line += ["", "", "", "", ""]
            else:
                line += [_g12(s.tau_hat_mean), _g12(s.pct_err), _g12(s.mc_se), _g12(s.tau_hat_sd), s.n_converged]
        writer.writerow(line)
    return buf.getvalue()


def _text(summaries) -> str:
    rows, specs = _pivot(summaries)
    header = ["Scen", "n", "Config"]
    for spec in specs:
        header += [f"{spec.label} tau", "%err", "MC SE"]
    body = []
    for (scenario, n, cid), cells in rows.items():
        line = [str(scenario), str(n), cid]
        for spec in specs:
            s = cells.get(spec)
            if s is None or not s.valid:
                line += ["-", "-", "-"]
            else:
                line += [f"{s.tau_hat_mean:.1f}", f"{s.pct_err:.1f}", f"{s.mc_se:.3f}"]
        body.append(line)
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
    out = []
    for r in [header] + body:
        out.append("  ".join(c.rjust(w) for c, w in zip(r, widths)).rstrip())
        if r is header:
            out.append("  ".join("-" * w for w in widths))
    return "\n".join(out) + "\n"


def _json(summaries) -> str:
    records = []
    for s in sorted(summaries, key=lambda s: s.sort_key):
        records.append(
            {
                "scenario": s.scenario.value,
                "cluster_size": s.cluster_size,
                "config": s.config_id,
                "spec": s.model_spec.label,
                "k": s.k,
                "tau": s.tau,
                "tau_hat_mean": s.tau_hat_mean,
                "tau_hat_sd": s.tau_hat_sd,
                "mc_se": s.mc_se,
                "pct_err": s.pct_err,
                "n_converged": s.n_converged,
                "valid": s.valid,
            }
        )
    return json.dumps(records, indent=2, sort_keys=True) + "\n"


def render_summary(summaries: list[McSummary], fmt: str = "csv") -> str:
    """One row per (scenario, n, configuration), one column group per model spec."""
    if not summaries:
        raise ValueError("nothing to render: empty summary list")
    if fmt == "csv":
        return _csv(summaries)
    if fmt in ("text", "markdown"):
        return _text(summaries)
    if fmt == "json":
        return _json(summaries)
    raise ValueError(f"unknown format {fmt!r}; choose from {', '.join(FORMATS)}")


def write_atomic(path: "str | Path", text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path
