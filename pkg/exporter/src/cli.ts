#!/usr/bin/env node
/** Command-line entry points: export-masks and export-queries. */
import yargs from "yargs";
import { hideBin } from "yargs/helpers";

import { defaultJob, exportMasksAndFeatures, exportQueryEmbeddings } from "./export.js";

export async function main(argv: string[]): Promise<number> {
  try {
    await yargs(argv)
      .scriptName("semsplat-export")
      .command(
        "export-masks",
        "segment an image sequence and write a dataset",
        (y) =>
          y
            .option("images", { type: "string", demandOption: true })
            .option("out", { type: "string", demandOption: true })
            .option("sam-model", { type: "string", default: defaultJob.samModel })
            .option("clip-model", { type: "string", default: defaultJob.clipModel })
            .option("device", { type: "string", default: defaultJob.device })
            .option("grid-size", { type: "number", default: defaultJob.gridSize })
            .option("fixture", { type: "boolean", default: false })
            .option("force", { type: "boolean", default: false })
            .option("seed", { type: "number", default: 0 })
            .option("dim", { type: "number", default: 512 })
            .option("crop", {
              type: "boolean",
              default: false,
              describe: "embed a tight crop instead of the masked full image",
            }),
        (args) => {
          exportMasksAndFeatures({
            imageDir: args.images,
            outDir: args.out,
            samModel: args["sam-model"],
            clipModel: args["clip-model"],
            device: args.device,
            gridSize: args["grid-size"],
            fixture: args.fixture,
            force: args.force,
            seed: args.seed,
            dim: args.dim,
            maskedFullImage: !args.crop,
          });
          console.log(`dataset written to ${args.out}`);
        },
      )
      .command(
        "export-queries",
        "encode query phrases into an embedding file",
        (y) =>
          y
            .option("out", { type: "string", demandOption: true })
            .option("phrase", { type: "array", demandOption: true })
            .option("fixture", { type: "boolean", default: false })
            .option("seed", { type: "number", default: 0 })
            .option("dim", { type: "number", default: 512 }),
        (args) => {
          exportQueryEmbeddings(
            (args.phrase as Array<string | number>).map(String),
            args.out,
            { fixture: args.fixture, seed: args.seed, dim: args.dim },
          );
          console.log(`query embeddings written to ${args.out}.bin`);
        },
      )
      .demandCommand(1)
      .strict()
      .fail((msg, err) => {
        throw err ?? new Error(msg);
      })
      .parseAsync();
    return 0;
  } catch (err) {
    console.error(String(err instanceof Error ? err.message : err));
    return 1;
  }
}

const invokedDirectly =
  process.argv[1] && import.meta.url.endsWith(process.argv[1].split("/").pop() ?? "");
if (invokedDirectly) {
  main(hideBin(process.argv)).then((code) => {
    process.exitCode = code;
  });
}
