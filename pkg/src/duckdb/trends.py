from .metrics import fetch_step_means

VARIANT_COLORS = {
    "fixed_frame": "#94a3b8",
    "deterministic": "#7dd3fc",
    "stochastic": "#2dd4bf",
    "refined": "#a78bfa",
}
FALLBACK_COLORS = ["#facc15", "#f472b6", "#fb7185", "#f97316"]


def _build_smooth_path(points: list[tuple[float, float]]) -> str:
    if not points:
        return ""
    if len(points) == 1:
        x, y = points[0]
        return f"M {x:.1f},{y:.1f}"
    if len(points) == 2:
        return f"M {points[0][0]:.1f},{points[0][1]:.1f} L {points[1][0]:.1f},{points[1][1]:.1f}"

    tension = 0.12
    commands = [f"M {points[0][0]:.1f},{points[0][1]:.1f}"]
    for idx in range(len(points) - 1):
        p0 = points[idx - 1] if idx > 0 else points[idx]
        p1 = points[idx]
        p2 = points[idx + 1]
        p3 = points[idx + 2] if idx + 2 < len(points) else p2

        cp1x = p1[0] + (p2[0] - p0[0]) * tension
        cp1y = p1[1] + (p2[1] - p0[1]) * tension
        cp2x = p2[0] - (p3[0] - p1[0]) * tension
        cp2y = p2[1] - (p3[1] - p1[1]) * tension
        commands.append(f"C {cp1x:.1f},{cp1y:.1f} {cp2x:.1f},{cp2y:.1f} {p2[0]:.1f},{p2[1]:.1f}")
    return " ".join(commands)


def build_trend_chart(lines: list[dict], total_steps: int, marker_step: int | None = None) -> dict:
    """SVG geometry for psi-vs-step lines; ``marker_step`` draws the end of the first rollout window."""
    width = 760
    height = 320
    pad_left = 52
    pad_right = 22
    pad_top = 24
    pad_bottom = 38
    inner_width = width - pad_left - pad_right
    inner_height = height - pad_top - pad_bottom

    all_points = [point for line in lines for point in line["points"]]
    if not all_points:
        return {"width": width, "height": height, "lines": [], "y_ticks": [], "x_ticks": [], "marker_x": None}

    all_values = [p["value"] for p in all_points]
    # psi is non-negative; the axis starts at zero
    chart_min = 0.0
    chart_max = max(all_values) * 1.12 or 1.0
    value_span = chart_max - chart_min
    max_step = max(total_steps, 1)

    def scale_x(step: int) -> float:
        return pad_left + ((step - 1) / max(max_step - 1, 1)) * inner_width

    def scale_y(value: float) -> float:
        return pad_top + (1 - ((value - chart_min) / value_span)) * inner_height

    rendered_lines: list[dict] = []
    for idx, line in enumerate(lines):
        points = line["points"]
        scaled_points = [(scale_x(p["step"]), scale_y(p["value"])) for p in points]
        last_point = points[-1]
        rendered_lines.append(
            {
                **line,
                "color": VARIANT_COLORS.get(line["variant"], FALLBACK_COLORS[idx % len(FALLBACK_COLORS)]),
                "polyline": " ".join(f"{x:.1f},{y:.1f}" for x, y in scaled_points),
                "path": _build_smooth_path(scaled_points),
                "end_x": round(scale_x(last_point["step"]), 1),
                "end_y": round(scale_y(last_point["value"]), 1),
            }
        )

    tick_count = 5
    y_ticks = []
    for idx in range(tick_count):
        value = chart_min + value_span * idx / (tick_count - 1)
        y_ticks.append({"value": f"{value:.2f}", "y": round(scale_y(value), 1)})

    x_tick_count = min(6, max_step)
    x_ticks = []
    for i in range(x_tick_count):
        step = 1 + round(i * (max_step - 1) / max(x_tick_count - 1, 1))
        anchor = "start" if i == 0 else ("end" if i == x_tick_count - 1 else "middle")
        x_ticks.append({"label": str(step), "x": round(scale_x(step), 1), "anchor": anchor})

    marker_x = round(scale_x(marker_step), 1) if marker_step is not None and marker_step < max_step else None
    return {
        "width": width,
        "height": height,
        "lines": rendered_lines,
        "y_ticks": y_ticks,
        "x_ticks": x_ticks,
        "marker_x": marker_x,
    }


def fetch_step_chart(sequence_id: int | None = None, marker_step: int | None = None) -> dict:
    by_variant = fetch_step_means(sequence_id)
    total_steps = max((p["step"] for points in by_variant.values() for p in points), default=0)
    lines = [
        {"variant": variant, "points": points, "latest_value": round(points[-1]["value"], 3)}
        for variant, points in by_variant.items()
    ]
    return build_trend_chart(lines, total_steps, marker_step)
