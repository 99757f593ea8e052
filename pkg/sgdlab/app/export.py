# sgdlab/app/export.py
import json
import logging
import subprocess
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd
import plotly.express as px
import plotly.graph_objects as go

from .schemas import UniformityReport, W2DecayCurve, WeakErrorCurve

logger = logging.getLogger(__name__)


def git_describe() -> str:
    try:
        p = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
            cwd=Path(__file__).resolve().parent,
            check=False,
            text=True,
        )
        if p.returncode != 0:
            return "nogit"
        s = (p.stdout or "").strip()
        return s if s else "nogit"
    except Exception:
        return "nogit"


def csv_header(config: dict) -> str:
    """One-line JSON provenance header, written as a CSV comment."""
    return "# " + json.dumps({"config": config, "build": git_describe()}, sort_keys=True) + "\r\n"


def write_results(frame: pd.DataFrame, output: str, config: dict) -> Path:
    """Write `output`.csv: JSON header line, then RFC-4180 rows with 17 significant digits."""
    path = Path(output).with_suffix(".csv")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(csv_header(config))
        frame.to_csv(fh, index=False, float_format="%.17g", lineterminator="\r\n")
    logger.info(f"Wrote {len(frame)} rows to {path}")
    return path


def read_results(path) -> pd.DataFrame:
    return pd.read_csv(path, comment="#")


def write_figure(fig: go.Figure, output: str) -> Path:
    path = Path(output).with_suffix(".html")
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.write_html(path, include_plotlyjs="cdn", full_html=True, div_id="sgdlab-figure")
    logger.info(f"Wrote figure to {path}")
    return path


def weak_error_figure(curve: WeakErrorCurve, title: Optional[str] = None) -> go.Figure:
    """Log-log weak error against eta with the fitted line and its slope."""
    eta = np.asarray(curve.eta_grid)
    errors = np.asarray(curve.errors)
    fig = go.Figure()
    fig.add_trace(go.Scatter(
        x=eta,
        y=errors,
        mode="markers",
        name="|U^n - u^1|",
        error_y=dict(type="data", array=curve.std_errors, visible=True),
        marker=dict(symbol=["x" if f else "circle" for f in curve.noise_floor]),
    ))
    if np.isfinite(curve.slope):
        fig.add_trace(go.Scatter(
            x=eta,
            y=2.0 ** (curve.intercept + curve.slope * np.log2(eta)),
            mode="lines",
            name=f"fit, slope {curve.slope:.3f}",
        ))
    fig.update_xaxes(type="log", title="eta")
    fig.update_yaxes(type="log", title="weak error")
    fig.update_layout(
        title=title or f"Weak error at T = {curve.horizon:g}",
        annotations=[dict(
            x=0.02, y=0.98, xref="paper", yref="paper", showarrow=False,
            text=f"slope = {curve.slope:.3f} (95% CI {curve.slope_ci[0]:.3f} .. {curve.slope_ci[1]:.3f})",
        )],
    )
    return fig


def uniformity_figure(report: UniformityReport) -> go.Figure:
    fig = px.line(
        pd.DataFrame({"n": report.n_list, "error": report.errors}),
        x="n",
        y="error",
        markers=True,
        log_x=True,
        title=f"Error against n at eta = {report.eta:g}",
    )
    return fig


def decay_figure(curve: W2DecayCurve) -> go.Figure:
    """Semilog W2 between the two chains with the contraction reference."""
    fig = go.Figure()
    fig.add_trace(go.Scatter(x=curve.n_grid, y=curve.w2_values, mode="markers+lines", name="empirical W2"))
    fig.add_trace(go.Scatter(
        x=curve.n_grid, y=curve.reference, mode="lines", name=f"rho^n |x_a - x_b|, rho = {curve.rho_ref:.4f}"
    ))
    fig.update_yaxes(type="log", title="W2")
    fig.update_xaxes(title="n")
    fig.update_layout(title=f"W2 contraction at eta = {curve.eta:g}")
    return fig


def histogram_figure(samples: np.ndarray, bins: int, title: str) -> go.Figure:
    fig = px.histogram(
        pd.DataFrame({"x": np.asarray(samples).ravel()}),
        x="x",
        nbins=bins,
        histnorm="probability density",
        title=title,
    )
    return fig
