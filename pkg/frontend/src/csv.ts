import { readFileSync } from "node:fs";
import Papa from "papaparse";

export interface Table {
  columns: string[];
  rows: Record<string, string>[];
}

/** Read a CSV file produced by the simulator (plain header + rows). */
export function readCsv(path: string): Table {
  const text = readFileSync(path, "utf8");
  const parsed = Papa.parse<Record<string, string>>(text.trim(), {
    header: true,
    skipEmptyLines: true,
  });
  if (parsed.errors.length > 0) {
    const first = parsed.errors[0];
    throw new Error(`${path}: malformed CSV (${first.message})`);
  }
  const columns = parsed.meta.fields ?? [];
  return { columns, rows: parsed.data };
}

/** Fail with a descriptive message when required columns are missing. */
export function requireColumns(table: Table, needed: string[], path: string): void {
  const missing = needed.filter((c) => !table.columns.includes(c));
  if (missing.length > 0) {
    throw new Error(
      `${path}: missing column(s) ${missing.join(", ")} ` +
        `(found: ${table.columns.join(", ") || "none"})`,
    );
  }
}

export function toNumber(value: string, column: string): number {
  const num = Number(value);
  if (!Number.isFinite(num)) {
    throw new Error(`column ${column}: ${JSON.stringify(value)} is not a number`);
  }
  return num;
}
