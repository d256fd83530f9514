/** The five figure builders. Each consumes parsed CSV rows and returns a
 * complete SVG document string; nothing here recomputes statistics. */

import { Row, num, requireColumns } from "./csv.js";
import {
  DEFAULT_FRAME,
  Frame,
  color,
  el,
  linearScale,
  plotArea,
  round2,
  svgDocument,
  text,
  ticks,
  yAxis,
} from "./svg.js";

const SHARE_METRICS = ["urm_share", "first_gen_share", "low_income_share"];
const METRIC_LABELS: Record<string, string> = {
  urm_share: "URM",
  first_gen_share: "First-gen",
  low_income_share: "Low-income",
  admitted_share: "Admitted",
  admitted_or_waitlisted_share: "Admitted or waitlisted",
  mean_test_percentile: "Mean test percentile",
};

interface Bar {
  group: string;
  series: string;
  value: number;
  ciLo: number | null;
  ciHi: number | null;
  starred: boolean;
}

function orderedUnique(values: string[]): string[] {
  return [...new Set(values)];
}

function legend(series: string[], x: number, y: number): string {
  return series
    .map((name, i) => {
      const rowY = y + i * 16;
      return (
        el("rect", { x, y: rowY - 9, width: 10, height: 10, fill: color(i) }) +
        text(name, x + 14, rowY, {})
      );
    })
    .join("");
}

function groupedBars(
  bars: Bar[],
  groups: string[],
  series: string[],
  frame: Frame,
  yDomain: [number, number],
  title: string,
  yLabel: string,
): string {
  const area = plotArea(frame);
  const y = linearScale(yDomain, [area.y0, area.y1]);
  const groupWidth = (area.x1 - area.x0) / groups.length;
  const barWidth = (groupWidth * 0.8) / series.length;
  const pieces: string[] = [yAxis(y, area.x0, area.x1)];
  bars.forEach((bar) => {
    const gi = groups.indexOf(bar.group);
    const si = series.indexOf(bar.series);
    if (gi < 0 || si < 0) return;
    const x = area.x0 + gi * groupWidth + groupWidth * 0.1 + si * barWidth;
    const top = y(bar.value);
    pieces.push(
      el("rect", {
        x: round2(x),
        y: round2(top),
        width: round2(barWidth * 0.92),
        height: round2(Math.max(0, area.y0 - top)),
        fill: color(si),
      }),
    );
    if (bar.ciLo !== null && bar.ciHi !== null) {
      const cx = x + (barWidth * 0.92) / 2;
      pieces.push(
        el("line", {
          x1: round2(cx), y1: round2(y(bar.ciLo)), x2: round2(cx), y2: round2(y(bar.ciHi)),
          stroke: "#222", "stroke-width": 1.2,
        }),
        el("line", {
          x1: round2(cx - 3), y1: round2(y(bar.ciLo)), x2: round2(cx + 3), y2: round2(y(bar.ciLo)),
          stroke: "#222", "stroke-width": 1.2,
        }),
        el("line", {
          x1: round2(cx - 3), y1: round2(y(bar.ciHi)), x2: round2(cx + 3), y2: round2(y(bar.ciHi)),
          stroke: "#222", "stroke-width": 1.2,
        }),
      );
    }
    if (bar.starred) {
      const starY = bar.ciHi !== null ? y(bar.ciHi) - 6 : top - 6;
      pieces.push(
        text("*", x + (barWidth * 0.92) / 2, starY, {
          "text-anchor": "middle",
          "font-size": 14,
          class: "significance-marker",
        }),
      );
    }
  });
  groups.forEach((group, gi) => {
    pieces.push(
      text(group, area.x0 + gi * groupWidth + groupWidth / 2, area.y0 + 18, {
        "text-anchor": "middle",
      }),
    );
  });
  pieces.push(
    text(title, frame.width / 2, 20, { "text-anchor": "middle", "font-size": 14 }),
    text(yLabel, 16, (area.y0 + area.y1) / 2, {
      "text-anchor": "middle",
      transform: `rotate(-90 16 ${round2((area.y0 + area.y1) / 2)})`,
    }),
    legend(series, area.x1 - 150, area.y1 + 12),
  );
  return svgDocument(frame, pieces.join(""));
}

/** Top-pool demographic shares per policy, with bootstrap CI whiskers. */
export function shareBars(rows: Row[], file: string): string {
  requireColumns(rows, ["policy", "metric", "value", "ci_lo", "ci_hi", "adjusted_significant"], file);
  const policies = orderedUnique(rows.map((r) => r.policy));
  const bars: Bar[] = [];
  let maxTop = 0;
  for (const row of rows) {
    if (!SHARE_METRICS.includes(row.metric)) continue;
    const value = num(row, "value");
    if (value === null) continue;
    const ciHi = num(row, "ci_hi");
    bars.push({
      group: METRIC_LABELS[row.metric],
      series: row.policy,
      value,
      ciLo: num(row, "ci_lo"),
      ciHi,
      starred: row.adjusted_significant === "true",
    });
    maxTop = Math.max(maxTop, value, ciHi ?? 0);
  }
  if (bars.length === 0) {
    throw new Error(`${file}: no share metrics found`);
  }
  const frame = { ...DEFAULT_FRAME, width: 720 };
  return groupedBars(
    bars,
    SHARE_METRICS.map((m) => METRIC_LABELS[m]),
    policies,
    frame,
    [0, Math.min(1, maxTop * 1.25 + 0.02)],
    "Top-pool composition by policy",
    "Share of top pool",
  );
}

/** Academic-merit proxies: admitted-or-waitlisted share and test percentile. */
export function meritBars(rows: Row[], file: string): string {
  requireColumns(rows, ["policy", "metric", "value", "ci_lo", "ci_hi", "adjusted_significant"], file);
  const policies = orderedUnique(rows.map((r) => r.policy));
  const frame: Frame = { ...DEFAULT_FRAME, width: 880 };
  const halves: string[] = [];
  const panels: Array<{ metric: string; domain: [number, number] }> = [
    { metric: "admitted_or_waitlisted_share", domain: [0, 1] },
    { metric: "mean_test_percentile", domain: [0, 100] },
  ];
  const panelWidth = (frame.width - 40) / 2;
  panels.forEach((panel, pi) => {
    const sub: Frame = {
      width: panelWidth,
      height: frame.height,
      margin: { ...DEFAULT_FRAME.margin, right: 10 },
    };
    const area = plotArea(sub);
    const y = linearScale(panel.domain, [area.y0, area.y1]);
    const slot = (area.x1 - area.x0) / policies.length;
    const pieces = [yAxis(y, area.x0, area.x1)];
    rows
      .filter((r) => r.metric === panel.metric)
      .forEach((row) => {
        const value = num(row, "value");
        if (value === null) return;
        const si = policies.indexOf(row.policy);
        const x = area.x0 + si * slot + slot * 0.15;
        pieces.push(
          el("rect", {
            x: round2(x),
            y: round2(y(value)),
            width: round2(slot * 0.7),
            height: round2(area.y0 - y(value)),
            fill: color(si),
          }),
        );
        const ciLo = num(row, "ci_lo");
        const ciHi = num(row, "ci_hi");
        if (ciLo !== null && ciHi !== null) {
          const cx = x + slot * 0.35;
          pieces.push(
            el("line", {
              x1: round2(cx), y1: round2(y(ciLo)), x2: round2(cx), y2: round2(y(ciHi)),
              stroke: "#222", "stroke-width": 1.2,
            }),
          );
        }
        if (row.adjusted_significant === "true") {
          pieces.push(
            text("*", x + slot * 0.35, y(ciHi ?? value) - 6, {
              "text-anchor": "middle",
              "font-size": 14,
              class: "significance-marker",
            }),
          );
        }
      });
    policies.forEach((policy, si) => {
      const cx = area.x0 + si * slot + slot / 2;
      pieces.push(
        text(policy, cx, area.y0 + 14, {
          "text-anchor": "end",
          transform: `rotate(-30 ${round2(cx)} ${round2(area.y0 + 14)})`,
          "font-size": 10,
        }),
      );
    });
    pieces.push(
      text(METRIC_LABELS[panel.metric], sub.width / 2, 20, {
        "text-anchor": "middle",
        "font-size": 13,
      }),
    );
    halves.push(el("g", { transform: `translate(${20 + pi * panelWidth} 0)` }, pieces.join("")));
  });
  return svgDocument(frame, halves.join(""));
}

/** Cumulative distribution of self-consistency per model set. */
export function scCdf(rows: Row[], file: string, tau = 0.95): string {
  requireColumns(rows, ["set_name", "sc"], file);
  const bySet = new Map<string, number[]>();
  for (const row of rows) {
    const sc = num(row, "sc");
    if (sc === null) continue;
    const values = bySet.get(row.set_name) ?? [];
    values.push(sc);
    bySet.set(row.set_name, values);
  }
  if (bySet.size === 0) throw new Error(`${file}: no self-consistency values`);
  const frame = { ...DEFAULT_FRAME, width: 720 };
  const area = plotArea(frame);
  let minSc = 1;
  for (const values of bySet.values()) minSc = Math.min(minSc, ...values);
  const x = linearScale([Math.min(minSc, tau) - 0.02, 1.0], [area.x0, area.x1]);
  const y = linearScale([0, 1], [area.y0, area.y1]);
  const pieces = [yAxis(y, area.x0, area.x1)];
  for (const value of ticks(x.domain, 6)) {
    pieces.push(
      el("line", {
        x1: round2(x(value)), y1: area.y0, x2: round2(x(value)), y2: area.y0 + 4,
        stroke: "#333", "stroke-width": 1,
      }),
      text(String(Number(value.toFixed(3))), x(value), area.y0 + 16, { "text-anchor": "middle" }),
    );
  }
  const sets = [...bySet.keys()];
  sets.forEach((name, si) => {
    const sorted = [...(bySet.get(name) as number[])].sort((a, b) => a - b);
    const n = sorted.length;
    let d = `M ${round2(x(x.domain[0]))} ${round2(y(0))}`;
    sorted.forEach((value, i) => {
      d += ` H ${round2(x(value))} V ${round2(y((i + 1) / n))}`;
    });
    d += ` H ${round2(x(1.0))}`;
    pieces.push(
      el("path", { d, fill: "none", stroke: color(si), "stroke-width": 1.8, class: "ecdf" }),
    );
  });
  pieces.push(
    el("line", {
      x1: round2(x(tau)), y1: area.y0, x2: round2(x(tau)), y2: area.y1,
      stroke: "black", "stroke-width": 1.2, "stroke-dasharray": "5 4", class: "tau-line",
    }),
    text(`sc = ${tau}`, x(tau) - 6, area.y1 + 12, { "text-anchor": "end" }),
    text("self-consistency", (area.x0 + area.x1) / 2, frame.height - 18, { "text-anchor": "middle" }),
    text("cumulative share of applicants", 16, (area.y0 + area.y1) / 2, {
      "text-anchor": "middle",
      transform: `rotate(-90 16 ${round2((area.y0 + area.y1) / 2)})`,
    }),
    text("Self-consistency CDF", frame.width / 2, 20, { "text-anchor": "middle", "font-size": 14 }),
    legend(sets, area.x0 + 10, area.y1 + 14),
  );
  return svgDocument(frame, pieces.join(""));
}

/** Arbitrariness ratios per demographic group with significance markers. */
export function arBars(rows: Row[], file: string): string {
  requireColumns(rows, ["comparison", "group", "ar", "p", "significant"], file);
  const withinRows = rows.filter((r) => r.comparison.startsWith("within_") && r.ar !== "");
  if (withinRows.length === 0) {
    throw new Error(`${file}: no within-policy comparisons to plot`);
  }
  const comparison = withinRows[0].comparison;
  const selected = withinRows.filter((r) => r.comparison === comparison);
  const groups = selected.map((r) => r.group);
  const values = selected.map((r) => num(r, "ar") as number);
  const frame = { ...DEFAULT_FRAME, width: Math.max(640, 90 * groups.length + 120) };
  const area = plotArea(frame);
  const maxAr = Math.max(1.5, ...values) * 1.15;
  const y = linearScale([0, maxAr], [area.y0, area.y1]);
  const slot = (area.x1 - area.x0) / groups.length;
  const pieces = [yAxis(y, area.x0, area.x1)];
  selected.forEach((row, i) => {
    const value = values[i];
    const x = area.x0 + i * slot + slot * 0.15;
    pieces.push(
      el("rect", {
        x: round2(x),
        y: round2(y(value)),
        width: round2(slot * 0.7),
        height: round2(area.y0 - y(value)),
        fill: color(0),
      }),
    );
    if (row.significant === "true") {
      const direction = value >= 1 ? "+" : "-";
      pieces.push(
        text(direction, x + slot * 0.35, y(value) - 6, {
          "text-anchor": "middle",
          "font-size": 14,
          class: "significance-marker",
        }),
      );
    }
    pieces.push(
      text(row.group, x + slot * 0.35, area.y0 + 14, {
        "text-anchor": "end",
        transform: `rotate(-30 ${round2(x + slot * 0.35)} ${round2(area.y0 + 14)})`,
        "font-size": 10,
      }),
    );
  });
  pieces.push(
    el("line", {
      x1: area.x0, y1: round2(y(1)), x2: area.x1, y2: round2(y(1)),
      stroke: "#555", "stroke-width": 1, "stroke-dasharray": "4 3", class: "unit-line",
    }),
    text(`Arbitrariness ratio: ${comparison.replace(/_/g, " ")}`, frame.width / 2, 20, {
      "text-anchor": "middle",
      "font-size": 14,
    }),
    text("arbitrariness ratio", 16, (area.y0 + area.y1) / 2, {
      "text-anchor": "middle",
      transform: `rotate(-90 16 ${round2((area.y0 + area.y1) / 2)})`,
    }),
  );
  return svgDocument(frame, pieces.join(""));
}

const SWEEP_METRICS = [
  "urm_share",
  "first_gen_share",
  "low_income_share",
  "admitted_or_waitlisted_share",
  "mean_test_percentile",
];

/** Top-pool composition as the cutoff decile sweeps 10 -> 1. */
export function sweepLines(rows: Row[], file: string): string {
  requireColumns(rows, ["cutoff", "policy", "metric", "value"], file);
  const policies = orderedUnique(rows.map((r) => r.policy));
  const panelW = 290;
  const panelH = 230;
  const columns = 3;
  const rowsOfPanels = Math.ceil(SWEEP_METRICS.length / columns);
  const frame: Frame = {
    width: panelW * columns + 40,
    height: panelH * rowsOfPanels + 60,
    margin: DEFAULT_FRAME.margin,
  };
  const panels: string[] = [];
  SWEEP_METRICS.forEach((metric, mi) => {
    const sub: Frame = {
      width: panelW,
      height: panelH,
      margin: { top: 28, right: 12, bottom: 34, left: 46 },
    };
    const area = plotArea(sub);
    const metricRows = rows.filter((r) => r.metric === metric && r.value !== "");
    const values = metricRows.map((r) => num(r, "value") as number);
    const lo = Math.min(0, ...values);
    const hi = Math.max(...values, 1e-9) * 1.1;
    const y = linearScale([lo, hi], [area.y0, area.y1]);
    // Cutoff axis runs 10 down to 1, highest cutoff (smallest pool) first.
    const x = linearScale([10, 1], [area.x0, area.x1]);
    const pieces = [yAxis(y, area.x0, area.x1, ticks([lo, hi], 4))];
    for (let cutoff = 10; cutoff >= 1; cutoff -= 3) {
      pieces.push(
        text(String(cutoff), x(cutoff), area.y0 + 14, { "text-anchor": "middle", "font-size": 9 }),
      );
    }
    policies.forEach((policy, pi) => {
      const points = metricRows
        .filter((r) => r.policy === policy)
        .map((r) => ({ cutoff: Number(r.cutoff), value: num(r, "value") as number }))
        .sort((a, b) => b.cutoff - a.cutoff);
      if (points.length === 0) return;
      const d = points
        .map((p, i) => `${i === 0 ? "M" : "L"} ${round2(x(p.cutoff))} ${round2(y(p.value))}`)
        .join(" ");
      pieces.push(
        el("path", { d, fill: "none", stroke: color(pi), "stroke-width": 1.6, class: "sweep-line" }),
      );
    });
    pieces.push(
      text(METRIC_LABELS[metric] ?? metric, sub.width / 2, 16, {
        "text-anchor": "middle",
        "font-size": 12,
      }),
    );
    const px = 20 + (mi % columns) * panelW;
    const py = 26 + Math.floor(mi / columns) * panelH;
    panels.push(el("g", { transform: `translate(${px} ${py})` }, pieces.join("")));
  });
  panels.push(
    text("cutoff decile (10 = narrowest top pool)", frame.width / 2, frame.height - 26, {
      "text-anchor": "middle",
    }),
    legend(policies, panelW * 2 + 60, panelH + 80),
  );
  return svgDocument(frame, panels.join(""));
}
