#!/usr/bin/env node
/** CLI: request documents from a running engine, printed as NDJSON. */

import yargs from "yargs";
import { hideBin } from "yargs/helpers";

import { connect } from "./client.js";
import { EngineRequestError } from "./errors.js";

async function main(): Promise<void> {
  await yargs(hideBin(process.argv))
    .command(
      "request",
      "request a protocol's documents and print them as JSON lines",
      (cmd) =>
        cmd
          .option("host", { type: "string", default: "127.0.0.1" })
          .option("port", { type: "number", demandOption: true })
          .option("protocol", { type: "string", demandOption: true })
          .option("param", {
            type: "string",
            array: true,
            default: [] as string[],
            describe: "extra k=v parameters, repeatable",
          })
          .option("start-date", { type: "string" })
          .option("end-date", { type: "string" })
          .option("destination", { type: "string", describe: "stream to another connection's key" }),
      async (argv) => {
        const params: Record<string, string> = {};
        for (const pair of argv.param) {
          const eq = pair.indexOf("=");
          if (eq < 1) throw new Error(`--param expects k=v, got ${pair}`);
          params[pair.slice(0, eq)] = pair.slice(eq + 1);
        }
        const session = await connect(argv.host, argv.port);
        try {
          const stream = session.request(argv.protocol, {
            params,
            startDate: argv.startDate,
            endDate: argv.endDate,
            destination: argv.destination,
          });
          for await (const doc of stream) {
            process.stdout.write(JSON.stringify(doc) + "\n");
          }
        } finally {
          session.close();
        }
      },
    )
    .demandCommand(1)
    .strict()
    .fail((message, error) => {
      if (error instanceof EngineRequestError) {
        process.stderr.write(`request failed: ${error.code} ${error.message}\n`);
      } else if (error) {
        process.stderr.write(`${error.message ?? String(error)}\n`);
      } else {
        process.stderr.write(`${message}\n`);
      }
      process.exit(1);
    })
    .parseAsync();
}

main().catch((error) => {
  process.stderr.write(`${String(error)}\n`);
  process.exit(1);
});
