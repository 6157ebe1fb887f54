#!/usr/bin/env node
import yargs from "yargs";
import { hideBin } from "yargs/helpers";
import { plotRunBreakdown } from "./runBreakdown.js";

const argv = yargs(hideBin(process.argv))
  .scriptName("plot-run")
  .option("input", { type: "string", demandOption: true,
                     describe: "run .csv (next to its .hosts.csv) or the "
                             + "per-host table itself" })
  .option("out", { type: "string", demandOption: true,
                   describe: "output image (SVG)" })
  .option("export-data", { type: "string",
                           describe: "also dump the plotted values as JSON" })
  .strict()
  .parseSync();

try {
  plotRunBreakdown({
    input: argv.input,
    out: argv.out,
    exportData: argv["export-data"],
  });
  console.log(`wrote ${argv.out}`);
} catch (err) {
  console.error(`error: ${(err as Error).message}`);
  process.exit(1);
}
