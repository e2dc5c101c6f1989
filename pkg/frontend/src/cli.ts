/** Process boundary to the compression engine: the installed `mtc` CLI. */

import { spawnSync } from "node:child_process";

export interface SaveOptions {
  mode?: "lossless" | "lossy";
  /** lossy precision: quantities below 2^-precisionBits are discarded */
  precisionBits?: number;
  groupBytes?: boolean;
  signSplit?: boolean;
  codec?: "zstd" | "lz4" | "store";
  level?: number;
  granularity?: "layer" | "model";
  threads?: number;
}

/** Path of the CLI binary; override with the MTC_CLI environment variable. */
export function cliPath(): string {
  return process.env.MTC_CLI ?? "mtc";
}

export function optionFlags(options: SaveOptions): string[] {
  const flags: string[] = [];
  if (options.mode !== undefined) {
    flags.push("--mode", options.mode);
  }
  if (options.precisionBits !== undefined) {
    flags.push("--precision-bits", String(options.precisionBits));
  }
  if (options.groupBytes !== undefined) {
    flags.push(options.groupBytes ? "--group-bytes" : "--no-group-bytes");
  }
  if (options.signSplit !== undefined) {
    flags.push(options.signSplit ? "--sign-split" : "--no-sign-split");
  }
  if (options.codec !== undefined) {
    flags.push("--codec", options.codec);
  }
  if (options.level !== undefined) {
    flags.push("--level", String(options.level));
  }
  if (options.granularity !== undefined) {
    flags.push("--granularity", options.granularity);
  }
  if (options.threads !== undefined) {
    flags.push("--threads", String(options.threads));
  }
  return flags;
}

export function runCli(args: string[]): void {
  const result = spawnSync(cliPath(), args, { encoding: "utf-8" });
  if (result.error) {
    throw new Error(
      `could not run ${cliPath()} (install the Python package or set MTC_CLI): ${result.error.message}`,
    );
  }
  if (result.status !== 0) {
    const detail = (result.stderr || result.stdout || "").trim();
    throw new Error(`${cliPath()} ${args[0]} failed (exit ${result.status}): ${detail}`);
  }
}
