"""Report emission: JSON, CSV (plot-ready), and a plain-text table.

All files are written with '\\n' newlines and repr-exact floats so a reloaded
CSV equals the source values and repeated runs are byte-identical.
"""

from __future__ import annotations

import json
from pathlib import Path

__all__ = ["emit_report", "report_csv_rows"]

_BASE_COLUMNS = ("mpjpe", "p_mpjpe", "mpvpe", "p_mpvpe")


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _f_columns(report: dict) -> list[str]:
    cols = set()
    for method in ("refined", "coarse"):
        for setting in ("general", "bimanual"):
            means = report.get(method, {}).get(setting, {}).get("means") or {}
            cols.update(k for k in means if k.startswith("f@"))
    return sorted(cols, key=lambda c: float(c[2:]))


def report_csv_rows(report: dict) -> tuple[list[str], list[list[str]]]:
    f_cols = _f_columns(report)
    header = ["method", "setting", "n_samples", "n_hands", "n_excluded"]
    header += list(_BASE_COLUMNS) + f_cols + ["mrrpe"]
    rows = []
    for method in ("coarse", "refined"):
        for setting in ("general", "bimanual"):
            rep = report.get(method, {}).get(setting)
            if rep is None:
                continue
            means = rep.get("means") or {}
            row = [
                method,
                setting,
                str(rep.get("n_samples", 0)),
                str(rep.get("n_hands", 0)),
                str(rep.get("n_excluded", 0)),
            ]
            row += [_fmt(means.get(c)) for c in _BASE_COLUMNS]
            row += [_fmt(means.get(c)) for c in f_cols]
            row.append(_fmt(means.get("mrrpe")))
            rows.append(row)
    return header, rows


def _text_table(report: dict) -> str:
    header, rows = report_csv_rows(report)
    show = ["method", "setting", "p_mpjpe", "p_mpvpe"]
    show += [c for c in header if c.startswith("f@")] + ["mrrpe"]
    idx = [header.index(c) for c in show]
    cells = [[r[i] for i in idx] for r in rows]

    def shorten(v: str) -> str:
        try:
            return f"{float(v):.4f}"
        except ValueError:
            return v

    cells = [[row[0], row[1]] + [shorten(v) for v in row[2:]] for row in cells]
    widths = [max(len(show[c]), *(len(row[c]) for row in cells)) for c in range(len(show))]
    lines = ["  ".join(name.ljust(widths[c]) for c, name in enumerate(show))]
    lines.append("  ".join("-" * w for w in widths))
    for row in cells:
        lines.append("  ".join(v.ljust(widths[c]) for c, v in enumerate(row)))
    lines.append("")
    lines.append("per-involvement breakdown (refined p_mpvpe | count):")
    for name, entry in sorted(report.get("per_type", {}).items()):
        means = entry.get("refined") or {}
        val = means.get("p_mpvpe")
        shown = f"{val:.4f}" if isinstance(val, float) else "-"
        lines.append(f"  {name:<12} {shown:>10} | {entry.get('count', 0)}")
    return "\n".join(lines) + "\n"


def emit_report(report: dict, out_dir, formats=("json", "csv", "txt")) -> list[Path]:
    """Write the report files; returns the paths written."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if "json" in formats:
        path = out / "report.json"
        path.write_text(json.dumps(report, sort_keys=True, indent=2) + "\n", encoding="utf-8")
        written.append(path)
    if "csv" in formats:
        header, rows = report_csv_rows(report)
        path = out / "report.csv"
        lines = [",".join(header)] + [",".join(r) for r in rows]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        written.append(path)

        curves = report.get("curves") or []
        if curves:
            cpath = out / "curves.csv"
            lines = ["epoch,train_loss,val_p_mpvpe"]
            for c in curves:
                lines.append(
                    ",".join(
                        [str(c.get("epoch")), _fmt(c.get("train_loss")), _fmt(c.get("val_p_mpvpe"))]
                    )
                )
            cpath.write_text("\n".join(lines) + "\n", encoding="utf-8")
            written.append(cpath)

        hist = report.get("retrieval_histogram") or []
        if hist:
            hpath = out / "retrieval_hist.csv"
            lines = ["lo,hi,count,mean_gain"]
            for b in hist:
                lines.append(
                    ",".join([_fmt(b["lo"]), _fmt(b["hi"]), str(b["count"]), _fmt(b["mean_gain"])])
                )
            hpath.write_text("\n".join(lines) + "\n", encoding="utf-8")
            written.append(hpath)
    if "txt" in formats:
        path = out / "report.txt"
        path.write_text(_text_table(report), encoding="utf-8")
        written.append(path)
    return written
