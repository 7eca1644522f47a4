#!/usr/bin/env node
/**
 * Command-line entry point. Three subcommands, mirroring the export
 * operations:
 *
 *   export-docs       --checkpoint DIR --input TSV --out DIR
 *   export-queries    --checkpoint DIR --input TSV --out DIR
 *   export-hyperhead  --checkpoint DIR --out FILE [--mapping FILE]
 *
 * Exit codes: 0 success, 1 operational failure, 2 usage error. Diagnostics
 * go to stderr; files are the only data output.
 */

import { parseArgs } from "node:util";

import { exportDocEmbeddings, exportHyperhead, exportQueryTokens } from "./export.js";

export const VERSION = "1.0.0";

const USAGE = `usage: hyperscore-export <command> [options]

commands:
  export-docs       encode documents into a corpus embedding file + id map
                    --checkpoint DIR --input TSV --out DIR
                    [--batch-size N] [--max-seq-len N]
  export-queries    encode queries into per-query token embedding files
                    --checkpoint DIR --input TSV --out DIR
                    [--batch-size N] [--max-seq-len N]
  export-hyperhead  write checkpoint head parameters as a head file
                    --checkpoint DIR --out FILE [--mapping FILE]

  --help            show this message
  --version         print the tool version
`;

class UsageError extends Error {}

function positiveInt(name: string, raw: string | undefined, fallback: number): number {
  if (raw === undefined) {
    return fallback;
  }
  const value = Number(raw);
  if (!Number.isInteger(value) || value < 1) {
    throw new UsageError(`--${name} must be a positive integer, got ${JSON.stringify(raw)}`);
  }
  return value;
}

function requireOption(flags: Record<string, string | undefined>, name: string): string {
  const value = flags[name];
  if (value === undefined) {
    throw new UsageError(`missing required option --${name}`);
  }
  return value;
}

function parseFlags(
  args: string[],
  names: Record<string, { required?: boolean }>,
): Record<string, string | undefined> {
  const options: Record<string, { type: "string" }> = {};
  for (const name of Object.keys(names)) {
    options[name] = { type: "string" };
  }
  let parsed;
  try {
    parsed = parseArgs({ args, options, allowPositionals: false });
  } catch (err) {
    throw new UsageError((err as Error).message);
  }
  const flags = parsed.values as Record<string, string | undefined>;
  for (const [name, spec] of Object.entries(names)) {
    if (spec.required) {
      requireOption(flags, name);
    }
  }
  return flags;
}

function runEncodeCommand(
  kind: "docs" | "queries",
  args: string[],
  stderr: (m: string) => void,
): void {
  const flags = parseFlags(args, {
    checkpoint: { required: true },
    input: { required: true },
    out: { required: true },
    "batch-size": {},
    "max-seq-len": {},
  });
  const job = {
    checkpointDir: flags.checkpoint as string,
    inputTsv: flags.input as string,
    outDir: flags.out as string,
    batchSize: positiveInt("batch-size", flags["batch-size"], 32),
    maxSeqLen: positiveInt("max-seq-len", flags["max-seq-len"], 512),
    log: stderr,
  };
  const counts = kind === "docs" ? exportDocEmbeddings(job) : exportQueryTokens(job);
  stderr(`exported ${counts.written} ${kind} to ${job.outDir} (${counts.skipped} skipped)`);
}

export function main(argv: string[], stderr: (m: string) => void = (m) => process.stderr.write(m + "\n")): number {
  try {
    const [command, ...rest] = argv;
    if (command === undefined || command === "--help" || command === "-h") {
      stderr(USAGE);
      return command === undefined ? 2 : 0;
    }
    if (command === "--version") {
      process.stdout.write(VERSION + "\n");
      return 0;
    }
    switch (command) {
      case "export-docs":
        runEncodeCommand("docs", rest, stderr);
        return 0;
      case "export-queries":
        runEncodeCommand("queries", rest, stderr);
        return 0;
      case "export-hyperhead": {
        const flags = parseFlags(rest, {
          checkpoint: { required: true },
          out: { required: true },
          mapping: {},
        });
        const info = exportHyperhead(flags.checkpoint as string, flags.out as string, flags.mapping);
        stderr(
          `exported head (h=${info.h}, d=${info.d}, m=${info.m}, ${info.layers} layers) to ${flags.out}`,
        );
        return 0;
      }
      default:
        throw new UsageError(`unknown command ${JSON.stringify(command)}\n\n${USAGE}`);
    }
  } catch (err) {
    if (err instanceof UsageError) {
      stderr(`error: ${err.message}`);
      return 2;
    }
    stderr(`error: ${(err as Error).message}`);
    return 1;
  }
}

// Invoke only when run directly, not when imported by tests.
if (process.argv[1] && /cli\.(js|ts)$/.test(process.argv[1])) {
  process.exitCode = main(process.argv.slice(2));
}
