// Request side of the evaluator's file protocol: a manifest of
// "<frame id> <cloud path>" lines, one reply file per frame expected
// under pred/ next to the manifest.

import fs from "fs";

export type RequestEntry = { frameId: string; cloudPath: string };

export function parseManifest(text: string, where: string): RequestEntry[] {
  const out: RequestEntry[] = [];
  text.split(/\r?\n/).forEach((raw, lineIdx) => {
    const line = raw.trim();
    if (!line || line.startsWith("#")) return;
    const space = line.indexOf(" ");
    if (space <= 0) {
      throw new Error(`${where}:${lineIdx + 1}: expected "<frame id> <cloud path>"`);
    }
    out.push({ frameId: line.slice(0, space), cloudPath: line.slice(space + 1).trim() });
  });
  return out;
}

/** Point records are four little-endian float32s; anything else is a broken request. */
export function cloudPointCount(cloudPath: string): number {
  const size = fs.statSync(cloudPath).size;
  if (size % 16 !== 0) {
    throw new Error(`${cloudPath}: ${size} bytes is not a whole number of point records`);
  }
  return size / 16;
}
