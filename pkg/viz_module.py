# ============================================================
# viz_module.py - Black-Box Load Distribution
# Cost and delay-reduction curves from metrics CSVs, with
# Plotly, exported as standalone HTML.
# ============================================================

import logging
from pathlib import Path
from typing import List, Optional

import pandas as pd
import plotly.graph_objects as go
from plotly.subplots import make_subplots

logger = logging.getLogger(__name__)

# ── Theme colours ─────────────────────────────────────────────────────────────
BG_CARD  = "#080f24"
BLUE     = "#00f5d4"
GREEN    = "#06d6a0"
AMBER    = "#ffd60a"
RED      = "#f72585"
PURPLE   = "#b14cf0"
TEXT     = "#c4d8ff"
GRID     = "#0f1e3d"

PALETTE = [BLUE, GREEN, AMBER, RED, PURPLE, "#06b6d4", "#f43f5e", "#84cc16"]

LAYOUT_BASE = dict(
    paper_bgcolor=BG_CARD,
    plot_bgcolor=BG_CARD,
    font=dict(family="DM Sans, sans-serif", color=TEXT, size=12),
    margin=dict(l=20, r=20, t=44, b=20),
    xaxis=dict(gridcolor=GRID, zerolinecolor=GRID),
    yaxis=dict(gridcolor=GRID, zerolinecolor=GRID),
)


def agent_labels(df: pd.DataFrame) -> List[str]:
    return [c[len("cost_"):] for c in df.columns if c.startswith("cost_")]


def cost_curve_chart(df: pd.DataFrame, title: str = "Mean Delay") -> go.Figure:
    """
    Raw per-step cost (faint) and its moving average per agent, with the
    step-0 equal-split baseline as a dotted line.
    """
    labels = agent_labels(df)
    if not labels:
        return go.Figure()

    fig = go.Figure()
    for i, label in enumerate(labels):
        color = PALETTE[i % len(PALETTE)]
        fig.add_trace(go.Scatter(
            x=df["step"], y=df[f"cost_{label}"], mode="lines",
            line=dict(color=color, width=1), opacity=0.25,
            name=f"{label} (per step)", showlegend=False,
        ))
        fig.add_trace(go.Scatter(
            x=df["step"], y=df[f"ma_{label}"], mode="lines",
            line=dict(color=color, width=2.5), name=label,
        ))
        baseline = df[f"baseline_{label}"].iloc[0]
        fig.add_hline(y=baseline, line_dash="dot", line_color=color, opacity=0.6)
    fig.update_layout(**LAYOUT_BASE, title=dict(text=title, font=dict(color=TEXT, size=14)),
                      xaxis_title="Step", yaxis_title="Seconds", height=420,
                      legend=dict(font=dict(color=TEXT)))
    return fig


def reduction_chart(df: pd.DataFrame, window: int = 100) -> go.Figure:
    """Delay reduction against the equal-split baseline, in percent, smoothed"""
    labels = agent_labels(df)
    if not labels:
        return go.Figure()

    fig = go.Figure()
    for i, label in enumerate(labels):
        smoothed = df[f"reduction_{label}"].rolling(window, min_periods=1).mean() * 100
        fig.add_trace(go.Scatter(
            x=df["step"], y=smoothed, mode="lines",
            line=dict(color=PALETTE[i % len(PALETTE)], width=2.5), name=label,
        ))
    fig.add_hline(y=0, line_dash="dot", line_color=AMBER,
                  annotation_text="Equal split", annotation_font_color=AMBER)
    fig.update_layout(**LAYOUT_BASE,
                      title=dict(text="Delay Reduction vs Equal Split",
                                 font=dict(color=TEXT, size=14)),
                      xaxis_title="Step", yaxis_title="%", height=380,
                      legend=dict(font=dict(color=TEXT)))
    return fig


def run_dashboard(df: pd.DataFrame, title: str = "") -> go.Figure:
    """Cost curves on top, reductions below, one shared step axis"""
    labels = agent_labels(df)
    fig = make_subplots(rows=2, cols=1, shared_xaxes=True, vertical_spacing=0.08,
                        subplot_titles=("Moving-average delay (s)", "Reduction vs equal split (%)"))
    for i, label in enumerate(labels):
        color = PALETTE[i % len(PALETTE)]
        fig.add_trace(go.Scatter(x=df["step"], y=df[f"ma_{label}"], mode="lines",
                                 line=dict(color=color, width=2), name=label), row=1, col=1)
        fig.add_trace(go.Scatter(x=df["step"], y=df[f"reduction_{label}"] * 100, mode="lines",
                                 line=dict(color=color, width=1), name=label, showlegend=False),
                      row=2, col=1)
    if "system_cost" in df.columns and len(labels) > 1:
        fig.add_trace(go.Scatter(x=df["step"],
                                 y=df["system_cost"].rolling(100, min_periods=1).mean(),
                                 mode="lines", line=dict(color=TEXT, width=1.5, dash="dash"),
                                 name="system"), row=1, col=1)
    fig.update_layout(paper_bgcolor=BG_CARD, plot_bgcolor=BG_CARD,
                      font=dict(color=TEXT), height=720,
                      title=dict(text=title, font=dict(color=TEXT, size=15)))
    fig.update_xaxes(gridcolor=GRID, zerolinecolor=GRID)
    fig.update_yaxes(gridcolor=GRID, zerolinecolor=GRID)
    return fig


def export_run_html(csv_path, output: Optional[str] = None) -> Path:
    """Write the dashboard of one metrics CSV next to it (or to `output`)"""
    csv_path = Path(csv_path)
    df = pd.read_csv(csv_path)
    if not agent_labels(df):
        raise ValueError(f"{csv_path} has no agent cost columns")
    out = Path(output) if output else csv_path.with_suffix(".html")
    run_dashboard(df, title=csv_path.stem).write_html(str(out), include_plotlyjs="cdn")
    logger.info("📈 Wrote plot %s", out)
    return out
