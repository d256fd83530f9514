import fs from "node:fs";
import path from "node:path";
import Papa from "papaparse";

export type Row = Record<string, string>;

/** Parse one artifact CSV into string records; header row required. */
export function readCsv(filePath: string): Row[] {
  const text = fs.readFileSync(filePath, "utf-8");
  const parsed = Papa.parse<Row>(text.trim(), {
    header: true,
    skipEmptyLines: true,
  });
  if (parsed.errors.length > 0) {
    const first = parsed.errors[0];
    throw new Error(`${filePath}: parse error at row ${first.row}: ${first.message}`);
  }
  const rows = parsed.data;
  if (rows.length === 0) {
    throw new Error(`${filePath}: no data rows`);
  }
  return rows;
}

/** Fail fast with the missing column's name. */
export function requireColumns(rows: Row[], columns: string[], filePath: string): void {
  const present = new Set(Object.keys(rows[0]));
  for (const column of columns) {
    if (!present.has(column)) {
      throw new Error(`${filePath}: missing column '${column}'`);
    }
  }
}

export function num(row: Row, column: string): number | null {
  const raw = row[column];
  if (raw === undefined || raw === "") return null;
  const value = Number(raw);
  if (Number.isNaN(value)) {
    throw new Error(`cannot parse '${raw}' in column '${column}' as a number`);
  }
  return value;
}

/** tau for the CDF reference line; falls back to 0.95 without a manifest. */
export function readTau(artifactDir: string): number {
  const manifestPath = path.join(artifactDir, "manifest.json");
  if (!fs.existsSync(manifestPath)) return 0.95;
  const manifest = JSON.parse(fs.readFileSync(manifestPath, "utf-8"));
  const tau = manifest?.config?.tau;
  return typeof tau === "number" ? tau : 0.95;
}
