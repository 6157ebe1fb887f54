import { existsSync, writeFileSync } from "node:fs";
import { readCsv, requireColumns, toNumber, Table } from "./csv.js";
import { Bar, stackedBars } from "./svg.js";

export interface RunPlotOptions {
  input: string; // run .csv (with a sibling .hosts.csv) or the hosts table
  out: string;
  exportData?: string;
}

export interface HostEnergy {
  host: string;
  idle: number;
  busyExtra: number;
  total: number;
}

const HOST_COLUMNS = ["host", "idle_energy_j", "busy_extra_energy_j", "energy_j"];

function hostsTablePath(input: string): string {
  if (input.endsWith(".hosts.csv")) {
    return input;
  }
  const sibling = input.replace(/\.csv$/, ".hosts.csv");
  if (sibling !== input && existsSync(sibling)) {
    return sibling;
  }
  return input;
}

/** Load the per-host energy rows behind a single-run result. */
export function loadHostEnergy(input: string): HostEnergy[] {
  const path = hostsTablePath(input);
  const table: Table = readCsv(path);
  requireColumns(table, HOST_COLUMNS, path);
  if (table.rows.length === 0) {
    throw new Error(`${path}: no data rows`);
  }
  return table.rows.map((row) => ({
    host: row.host,
    idle: toNumber(row.idle_energy_j, "idle_energy_j"),
    busyExtra: toNumber(row.busy_extra_energy_j, "busy_extra_energy_j"),
    total: toNumber(row.energy_j, "energy_j"),
  }));
}

/**
 * Stacked per-host energy bars: the idle draw over the whole run and the
 * extra consumption caused by busy time.  Bar totals equal the run's
 * energy_hosts_j up to float precision.
 */
export function plotRunBreakdown(options: RunPlotOptions): void {
  const hosts = loadHostEnergy(options.input);
  const bars: Bar[] = hosts.map((h) => ({
    label: h.host,
    segments: [
      { name: "idle", value: h.idle, color: "#9ecae1" },
      { name: "busy_extra", value: h.busyExtra, color: "#de2d26" },
    ],
  }));
  const svg = stackedBars(bars, "energy (J)");
  writeFileSync(options.out, svg, "utf8");
  if (options.exportData) {
    writeFileSync(options.exportData, JSON.stringify(hosts, null, 2), "utf8");
  }
}
