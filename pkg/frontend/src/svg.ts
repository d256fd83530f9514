/** Minimal SVG construction: string templates, linear scales, tick marks. */

export interface Scale {
  (value: number): number;
  domain: [number, number];
  range: [number, number];
}

export function linearScale(domain: [number, number], range: [number, number]): Scale {
  const [d0, d1] = domain;
  const [r0, r1] = range;
  const span = d1 - d0 || 1;
  const scale = ((value: number) => r0 + ((value - d0) / span) * (r1 - r0)) as Scale;
  scale.domain = domain;
  scale.range = range;
  return scale;
}

/** Round tick positions covering the domain, at most `count` of them. */
export function ticks(domain: [number, number], count = 5): number[] {
  const [lo, hi] = domain;
  const span = hi - lo || 1;
  const rawStep = span / Math.max(1, count);
  const power = Math.pow(10, Math.floor(Math.log10(rawStep)));
  const candidates = [1, 2, 2.5, 5, 10].map((m) => m * power);
  const step = candidates.find((c) => span / c <= count) ?? candidates[candidates.length - 1];
  const start = Math.ceil(lo / step) * step;
  const out: number[] = [];
  for (let v = start; v <= hi + 1e-9; v += step) {
    out.push(Number(v.toFixed(10)));
  }
  return out;
}

export function formatTick(value: number): string {
  if (Number.isInteger(value)) return String(value);
  return String(Number(value.toFixed(4)));
}

const ESCAPES: Record<string, string> = {
  "&": "&amp;",
  "<": "&lt;",
  ">": "&gt;",
  '"': "&quot;",
};

export function escapeText(text: string): string {
  return text.replace(/[&<>"]/g, (c) => ESCAPES[c]);
}

export function el(tag: string, attrs: Record<string, string | number>, children = ""): string {
  const parts = Object.entries(attrs)
    .map(([key, value]) => `${key}="${value}"`)
    .join(" ");
  return children === "" && tag !== "text"
    ? `<${tag} ${parts}/>`
    : `<${tag} ${parts}>${children}</${tag}>`;
}

export function text(
  content: string,
  x: number,
  y: number,
  attrs: Record<string, string | number> = {},
): string {
  return el(
    "text",
    { x: round2(x), y: round2(y), "font-family": "sans-serif", "font-size": 11, ...attrs },
    escapeText(content),
  );
}

export function round2(value: number): number {
  return Math.round(value * 100) / 100;
}

export interface Frame {
  width: number;
  height: number;
  margin: { top: number; right: number; bottom: number; left: number };
}

export const DEFAULT_FRAME: Frame = {
  width: 640,
  height: 400,
  margin: { top: 40, right: 20, bottom: 60, left: 60 },
};

export function plotArea(frame: Frame): { x0: number; x1: number; y0: number; y1: number } {
  return {
    x0: frame.margin.left,
    x1: frame.width - frame.margin.right,
    y0: frame.height - frame.margin.bottom,
    y1: frame.margin.top,
  };
}

/** Left axis with ticks plus a light horizontal grid. */
export function yAxis(scale: Scale, x0: number, x1: number, tickValues?: number[]): string {
  const values = tickValues ?? ticks(scale.domain);
  const pieces = [
    el("line", {
      x1: x0,
      y1: round2(scale(scale.domain[0])),
      x2: x0,
      y2: round2(scale(scale.domain[1])),
      stroke: "#333",
      "stroke-width": 1,
    }),
  ];
  for (const value of values) {
    const y = round2(scale(value));
    pieces.push(
      el("line", { x1: x0 - 4, y1: y, x2: x0, y2: y, stroke: "#333", "stroke-width": 1 }),
      el("line", { x1: x0, y1: y, x2: x1, y2: y, stroke: "#ddd", "stroke-width": 0.5 }),
      text(formatTick(value), x0 - 7, y + 3.5, { "text-anchor": "end" }),
    );
  }
  return pieces.join("");
}

export function svgDocument(frame: Frame, body: string): string {
  return (
    `<svg xmlns="http://www.w3.org/2000/svg" width="${frame.width}" height="${frame.height}" ` +
    `viewBox="0 0 ${frame.width} ${frame.height}">` +
    `<rect width="${frame.width}" height="${frame.height}" fill="white"/>` +
    body +
    "</svg>"
  );
}

export const PALETTE = ["#4C72B0", "#DD8452", "#55A868", "#C44E52", "#8172B3", "#937860", "#DA8BC3"];

export function color(index: number): string {
  return PALETTE[index % PALETTE.length];
}
