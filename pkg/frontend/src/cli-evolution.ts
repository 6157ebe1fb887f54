#!/usr/bin/env node
import yargs from "yargs";
import { hideBin } from "yargs/helpers";
import { plotEvolution } from "./evolution.js";

const argv = yargs(hideBin(process.argv))
  .scriptName("plot-evolution")
  .option("input", { type: "string", demandOption: true,
                     describe: "evolution.csv produced by the optimizer" })
  .option("metric", { type: "string", default: "best_criterion",
                      describe: "column to plot per group and generation" })
  .option("out", { type: "string", demandOption: true,
                   describe: "output image (SVG)" })
  .option("export-data", { type: "string",
                           describe: "also dump the plotted values as JSON" })
  .strict()
  .parseSync();

try {
  plotEvolution({
    input: argv.input,
    metric: argv.metric,
    out: argv.out,
    exportData: argv["export-data"],
  });
  console.log(`wrote ${argv.out}`);
} catch (err) {
  console.error(`error: ${(err as Error).message}`);
  process.exit(1);
}
