/**
 * Array-level bindings for the mtc compressor: named arrays in, `.mtc`
 * archives out. All compression happens in the mtc CLI; this package only
 * serializes the weight-file container and drives the process boundary, so
 * archives are byte-identical to what the CLI produces on the equivalent
 * weight file.
 */

import { mkdtempSync, readFileSync, rmSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { optionFlags, runCli, type SaveOptions } from "./cli.js";
import {
  buildWeightFile,
  parseWeightFile,
  type ArrayBundle,
  type ArrayEntry,
  type DTypeString,
} from "./weightfile.js";

export type { ArrayBundle, ArrayEntry, DTypeString, SaveOptions };
export { buildWeightFile, parseWeightFile };

function withTempDir<T>(fn: (dir: string) => T): T {
  const dir = mkdtempSync(join(tmpdir(), "mtc-"));
  try {
    return fn(dir);
  } finally {
    rmSync(dir, { recursive: true, force: true });
  }
}

/**
 * Compress a bundle of named arrays into an `.mtc` archive at `path`.
 *
 * Arrays are written in insertion order; dtypes are limited to F32, F16,
 * BF16 and RAW8. Options mirror the CLI flags; omitted options use the
 * CLI defaults (lossless, byte grouping on, zstd level 3, per-layer).
 */
export function saveArrays(
  bundle: ArrayBundle,
  path: string,
  options: SaveOptions = {},
): void {
  const fileBytes = buildWeightFile(bundle);
  withTempDir((dir) => {
    const weightPath = join(dir, "model.safetensors");
    writeFileSync(weightPath, fileBytes);
    runCli(["compress", weightPath, "-o", path, ...optionFlags(options)]);
  });
}

/**
 * Load an `.mtc` archive back into named arrays.
 *
 * The inverse of {@link saveArrays} for lossless archives; lossy archives
 * come back as their quantized reconstruction.
 */
export function loadArrays(path: string): ArrayBundle {
  return withTempDir((dir) => {
    const weightPath = join(dir, "model.safetensors");
    runCli(["decompress", path, "-o", weightPath]);
    return parseWeightFile(new Uint8Array(readFileSync(weightPath)));
  });
}
