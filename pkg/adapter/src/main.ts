// Bridge a directory of KITTI-format detections into the evaluator's
// subprocess protocol: read the request manifest (last argument), look up
// each frame's exported labels and calibration, and write sensor-frame
// prediction files next to the manifest.  A frame with no export gets an
// empty reply; anything malformed kills the run with a nonzero exit so
// the evaluator reports it instead of scoring garbage.

import fs from "fs";
import path from "path";
import process from "process";
import { pathToFileURL } from "url";

import { parseCalibration, parseLabels, predictionLine } from "./kitti.js";
import { cloudPointCount, parseManifest } from "./protocol.js";

type Args = { labels: string; calib: string; manifest: string };

export function parseArgs(argv: string[]): Args {
  let labels: string | undefined;
  let calib: string | undefined;
  const positional: string[] = [];
  for (let i = 0; i < argv.length; i++) {
    const arg = argv[i]!;
    if (arg === "--labels") labels = argv[++i];
    else if (arg === "--calib") calib = argv[++i];
    else if (arg.startsWith("--")) throw new Error(`unknown option ${arg}`);
    else positional.push(arg);
  }
  if (!labels || !calib || positional.length !== 1) {
    throw new Error("usage: main.js --labels <dir> --calib <dir> <request manifest>");
  }
  return { labels, calib, manifest: positional[0]! };
}

export function run(args: Args): void {
  const envManifest = process.env.SCALEADV_REQUEST_MANIFEST;
  if (envManifest && path.resolve(envManifest) !== path.resolve(args.manifest)) {
    throw new Error("request manifest argument disagrees with SCALEADV_REQUEST_MANIFEST");
  }
  const entries = parseManifest(fs.readFileSync(args.manifest, "utf8"), args.manifest);
  const predDir = path.join(path.dirname(path.resolve(args.manifest)), "pred");
  fs.mkdirSync(predDir, { recursive: true });
  for (const { frameId, cloudPath } of entries) {
    cloudPointCount(cloudPath);
    const labelPath = path.join(args.labels, `${frameId}.txt`);
    let lines: string[] = [];
    if (fs.existsSync(labelPath)) {
      const calibPath = path.join(args.calib, `${frameId}.txt`);
      const calib = parseCalibration(fs.readFileSync(calibPath, "utf8"), calibPath);
      const labels = parseLabels(fs.readFileSync(labelPath, "utf8"), labelPath);
      lines = labels.map((label) => predictionLine(label, calib));
    }
    const reply = lines.length ? lines.join("\n") + "\n" : "";
    fs.writeFileSync(path.join(predDir, `${frameId}.txt`), reply);
  }
}

if (process.argv[1] && import.meta.url === pathToFileURL(process.argv[1]).href) {
  try {
    run(parseArgs(process.argv.slice(2)));
  } catch (err) {
    console.error(err instanceof Error ? err.message : String(err));
    process.exit(1);
  }
}
