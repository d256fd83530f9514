import fs from "node:fs";
import path from "node:path";
import { Resvg } from "@resvg/resvg-js";

import { readCsv, readTau } from "./csv.js";
import { arBars, meritBars, scCdf, shareBars, sweepLines } from "./figures.js";

export const FIGURE_KINDS = [
  "share_bars",
  "merit_bars",
  "sc_cdf",
  "ar_bars",
  "sweep_lines",
] as const;

export type FigureKind = (typeof FIGURE_KINDS)[number];

const INPUT_FILES: Record<FigureKind, string> = {
  share_bars: "group_impact.csv",
  merit_bars: "group_impact.csv",
  sc_cdf: "consistency.csv",
  ar_bars: "arbitrariness.csv",
  sweep_lines: "sweep.csv",
};

/** Build one figure's SVG from an artifact directory. */
export function buildFigure(artifactDir: string, kind: FigureKind): string {
  const file = path.join(artifactDir, INPUT_FILES[kind]);
  if (!fs.existsSync(file)) {
    throw new Error(`missing input ${file} for figure '${kind}'`);
  }
  const rows = readCsv(file);
  switch (kind) {
    case "share_bars":
      return shareBars(rows, file);
    case "merit_bars":
      return meritBars(rows, file);
    case "sc_cdf":
      return scCdf(rows, file, readTau(artifactDir));
    case "ar_bars":
      return arBars(rows, file);
    case "sweep_lines":
      return sweepLines(rows, file);
  }
}

export function svgToPng(svg: string): Buffer {
  return new Resvg(svg).render().asPng();
}

/** Render every figure kind to <outDir>/<kind>.svg and .png. */
export function renderAll(artifactDir: string, outDir: string): string[] {
  fs.mkdirSync(outDir, { recursive: true });
  const written: string[] = [];
  for (const kind of FIGURE_KINDS) {
    const svg = buildFigure(artifactDir, kind);
    const svgPath = path.join(outDir, `${kind}.svg`);
    const pngPath = path.join(outDir, `${kind}.png`);
    fs.writeFileSync(svgPath, svg);
    fs.writeFileSync(pngPath, svgToPng(svg));
    written.push(svgPath, pngPath);
  }
  return written;
}
