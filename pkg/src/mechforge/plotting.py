"""Static figures for human inspection: a two-pose SVG preview and a production stage chart.

Both renderers return SVG bytes that are identical across runs for identical
inputs (fixed hash salt, no timestamp metadata).
"""

from __future__ import annotations

import io
from typing import Mapping

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.figure import Figure  # noqa: E402
from matplotlib.patches import Circle as CirclePatch  # noqa: E402
from matplotlib.patches import PathPatch, Rectangle  # noqa: E402
from matplotlib.path import Path as MplPath  # noqa: E402

from .mesher import PolygonSet  # noqa: E402
from .sim import STAGE_LABELS, STAGES, SimTimeline  # noqa: E402

_SVG_SALT = "mechforge"
_RESOURCE_ORDER = ("designer", "printer", "transfer_arm", "drone", "R1", "R2")
_COLORS = ("#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860", "#da8bc3", "#8c8c8c", "#ccb974", "#64b5cd")


def _svg_bytes(fig: Figure) -> bytes:
    buf = io.BytesIO()
    with plt.rc_context({"svg.hashsalt": _SVG_SALT, "svg.fonttype": "path"}):
        fig.savefig(buf, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    return buf.getvalue()


def _polygon_patch(polys: PolygonSet, pose, color: str) -> PathPatch:
    verts, codes = [], []
    for loop in polys.contours:
        pts = pose.apply(loop)
        verts.extend(map(tuple, pts))
        verts.append(tuple(pts[0]))
        codes.extend([MplPath.MOVETO] + [MplPath.LINETO] * (len(pts) - 1) + [MplPath.CLOSEPOLY])
    return PathPatch(MplPath(verts, codes), facecolor=color, edgecolor="black", linewidth=0.4, alpha=0.6)


def render_preview(components, contours: Mapping[str, PolygonSet], bed: tuple[float, float]) -> bytes:
    """Contours of every component on the print bed (initial pose) and assembled (final pose).

    ``components`` are compiled parts (id, initial_pose, final_pose, features);
    ``contours`` maps component id to its local-frame outline.
    """
    fig, (ax_bed, ax_asm) = plt.subplots(1, 2, figsize=(11, 5.5))
    ax_bed.add_patch(Rectangle((0, 0), bed[0], bed[1], fill=False, linestyle="--", edgecolor="grey"))
    for k, comp in enumerate(components):
        color = _COLORS[k % len(_COLORS)]
        for ax, pose in ((ax_bed, comp.initial_pose), (ax_asm, comp.final_pose)):
            ax.add_patch(_polygon_patch(contours[comp.id], pose, color))
            for f in comp.features:
                if f.kind in ("pin", "grasp_pin"):
                    cx, cy = pose.apply(f.local_center)
                    ax.add_patch(CirclePatch((cx, cy), f.radius, facecolor="white", edgecolor="black", linewidth=0.4))
        cx, cy = comp.initial_pose.apply(contours[comp.id].bounds().corners().mean(axis=0))
        ax_bed.annotate(comp.id, (cx, cy), ha="center", va="center", fontsize=7)
    ax_bed.set_xlim(-0.05 * bed[0], 1.05 * bed[0])
    ax_bed.set_ylim(-0.05 * bed[1], 1.05 * bed[1])
    ax_bed.set_title("Print bed (initial poses)")
    ax_asm.autoscale_view()
    ax_asm.set_title("Assembled (final poses)")
    for ax in (ax_bed, ax_asm):
        ax.set_aspect("equal")
        ax.set_xlabel("x [mm]")
        ax.set_ylabel("y [mm]")
    fig.tight_layout()
    return _svg_bytes(fig)


def render_stage_chart(tl: SimTimeline) -> bytes:
    """Gantt chart of timeline events per resource, coloured by stage, in minutes."""
    fig, ax = plt.subplots(figsize=(10, 4))
    order = {r: i for i, r in enumerate(_RESOURCE_ORDER)}
    resources = sorted(tl.by_resource(), key=lambda r: (order.get(r, len(order)), r))[::-1]
    colors = {s: _COLORS[i] for i, s in enumerate(STAGES)}
    for row, r in enumerate(resources):
        evs = [e for e in tl.events if e.resource == r]
        for stage in STAGES:
            spans = [(e.t_start / 60.0, (e.t_end - e.t_start) / 60.0) for e in evs if e.stage == stage]
            if spans:
                ax.broken_barh(spans, (row - 0.4, 0.8), facecolors=colors[stage])
    ax.set_yticks(range(len(resources)), labels=resources)
    ax.set_xlabel("time [min]")
    handles = [Rectangle((0, 0), 1, 1, color=colors[s]) for s in STAGES]
    labels = [f"{STAGE_LABELS[s]} {tl.stage_durations[s] / 60.0:.2f} min" for s in STAGES]
    ax.legend(handles, labels, loc="upper left", bbox_to_anchor=(1.01, 1.0), fontsize=8)
    ax.set_title(f"Production timeline, makespan {tl.makespan_s / 60.0:.2f} min")
    ax.set_xlim(0, max(tl.makespan_s / 60.0, 1e-6) * 1.02)
    fig.tight_layout()
    return _svg_bytes(fig)
