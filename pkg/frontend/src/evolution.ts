import { writeFileSync } from "node:fs";
import { readCsv, requireColumns, toNumber } from "./csv.js";
import { lineChart, Series } from "./svg.js";

export interface EvolutionPlotOptions {
  input: string;
  metric: string; // e.g. best_criterion, energy_total_j, n_hosts, total_gflops
  out: string;
  exportData?: string; // optional JSON sidecar with the exact plotted values
}

export interface EvolutionData {
  /** group label -> [generation, value] pairs in generation order */
  series: Map<string, [number, number][]>;
}

/** Extract one series per configuration group from an evolution.csv. */
export function loadEvolution(input: string, metric: string): EvolutionData {
  const table = readCsv(input);
  requireColumns(table, ["generation", "group", metric], input);
  if (table.rows.length === 0) {
    throw new Error(`${input}: no data rows`);
  }
  const series = new Map<string, [number, number][]>();
  for (const row of table.rows) {
    const generation = toNumber(row.generation, "generation");
    const value = toNumber(row[metric], metric);
    if (!series.has(row.group)) {
      series.set(row.group, []);
    }
    series.get(row.group)!.push([generation, value]);
  }
  for (const points of series.values()) {
    points.sort((a, b) => a[0] - b[0]);
  }
  return { series };
}

/**
 * Render the per-group best-of-generation curves: one line per group,
 * x = generation, y = the requested metric, legend labelled
 * "topology/aggregator".  Values are plotted exactly as found in the CSV.
 */
export function plotEvolution(options: EvolutionPlotOptions): void {
  const data = loadEvolution(options.input, options.metric);
  const series: Series[] = [...data.series.entries()].map(
    ([label, points]) => ({ label, points }),
  );
  const svg = lineChart(series, "generation", options.metric);
  writeFileSync(options.out, svg, "utf8");
  if (options.exportData) {
    const payload = Object.fromEntries(data.series);
    writeFileSync(options.exportData, JSON.stringify(payload, null, 2), "utf8");
  }
}
