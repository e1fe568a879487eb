// KITTI text formats and the camera -> sensor frame change.
//
// Labels carry the box pose in rectified camera coordinates (x right,
// y down, z forward; x/y/z is the bottom-center point); the evaluator
// wants sensor coordinates (x forward, y left, z up, bottom-center).
// The chain is p_cam = R_rect * (R * p_sensor + t), so going back is
// two small inverses.  Heading swaps axes the same way:
// yaw_sensor = wrap(-ry - pi/2), which is its own inverse.

export type Vec3 = [number, number, number];

/** Row-major 3x3 matrix. */
export type Mat3 = number[];

export type Calibration = {
  rect: Mat3;
  veloRot: Mat3;
  veloT: Vec3;
};

export type CamLabel = {
  cls: string;
  /** trunc occl alpha bbox, kept verbatim; the evaluator ignores them. */
  extras: string[];
  h: number;
  w: number;
  l: number;
  x: number;
  y: number;
  z: number;
  ry: number;
  score: number;
};

const TAU = 2 * Math.PI;

/** Wrap an angle in radians to (-pi, pi]. */
export function wrapAngle(angle: number): number {
  let wrapped = angle - TAU * Math.round(angle / TAU);
  if (wrapped <= -Math.PI) wrapped += TAU;
  return wrapped;
}

export function yawCamToSensor(ry: number): number {
  return wrapAngle(-ry - Math.PI / 2);
}

export function invert3(m: Mat3): Mat3 {
  const [a, b, c, d, e, f, g, h, i] = m as [
    number, number, number, number, number, number, number, number, number,
  ];
  const det = a * (e * i - f * h) - b * (d * i - f * g) + c * (d * h - e * g);
  if (!Number.isFinite(det) || Math.abs(det) < 1e-12) {
    throw new Error(`matrix is singular (det ${det})`);
  }
  return [
    (e * i - f * h) / det, (c * h - b * i) / det, (b * f - c * e) / det,
    (f * g - d * i) / det, (a * i - c * g) / det, (c * d - a * f) / det,
    (d * h - e * g) / det, (b * g - a * h) / det, (a * e - b * d) / det,
  ];
}

export function apply3(m: Mat3, v: Vec3): Vec3 {
  return [
    m[0]! * v[0] + m[1]! * v[1] + m[2]! * v[2],
    m[3]! * v[0] + m[4]! * v[1] + m[5]! * v[2],
    m[6]! * v[0] + m[7]! * v[1] + m[8]! * v[2],
  ];
}

export function camToSensor(calib: Calibration, p: Vec3): Vec3 {
  const unrect = apply3(invert3(calib.rect), p);
  const shifted: Vec3 = [
    unrect[0] - calib.veloT[0],
    unrect[1] - calib.veloT[1],
    unrect[2] - calib.veloT[2],
  ];
  return apply3(invert3(calib.veloRot), shifted);
}

function numbersAfterColon(line: string): number[] {
  return line.slice(line.indexOf(":") + 1).trim().split(/\s+/).map(Number);
}

export function parseCalibration(text: string, where: string): Calibration {
  const rows = new Map<string, number[]>();
  for (const raw of text.split(/\r?\n/)) {
    const line = raw.trim();
    if (!line || !line.includes(":")) continue;
    rows.set(line.slice(0, line.indexOf(":")).trim(), numbersAfterColon(line));
  }
  const rect = rows.get("R0_rect") ?? rows.get("R_rect");
  if (!rect || rect.length !== 9 || rect.some(Number.isNaN)) {
    throw new Error(`${where}: missing or malformed R0_rect`);
  }
  const tr = rows.get("Tr_velo_to_cam");
  if (!tr || tr.length !== 12 || tr.some(Number.isNaN)) {
    throw new Error(`${where}: missing or malformed Tr_velo_to_cam`);
  }
  return {
    rect,
    veloRot: [tr[0]!, tr[1]!, tr[2]!, tr[4]!, tr[5]!, tr[6]!, tr[8]!, tr[9]!, tr[10]!],
    veloT: [tr[3]!, tr[7]!, tr[11]!],
  };
}

export function parseLabels(text: string, where: string): CamLabel[] {
  const out: CamLabel[] = [];
  text.split(/\r?\n/).forEach((raw, lineIdx) => {
    const fields = raw.trim().split(/\s+/).filter(Boolean);
    if (fields.length === 0 || fields[0] === "DontCare") return;
    if (fields.length !== 15 && fields.length !== 16) {
      throw new Error(`${where}:${lineIdx + 1}: expected 15 or 16 fields, got ${fields.length}`);
    }
    const nums = fields.slice(8).map(Number);
    if (nums.some(Number.isNaN)) {
      throw new Error(`${where}:${lineIdx + 1}: non-numeric box field`);
    }
    out.push({
      cls: fields[0]!,
      extras: fields.slice(1, 8),
      h: nums[0]!, w: nums[1]!, l: nums[2]!,
      x: nums[3]!, y: nums[4]!, z: nums[5]!,
      ry: nums[6]!,
      score: fields.length === 16 ? nums[7]! : 1.0,
    });
  });
  return out;
}

/** One prediction reply line: KITTI layout plus score, pose in the sensor frame. */
export function predictionLine(label: CamLabel, calib: Calibration): string {
  const [sx, sy, sz] = camToSensor(calib, [label.x, label.y, label.z]);
  const values = [label.h, label.w, label.l, sx, sy, sz, yawCamToSensor(label.ry), label.score];
  return [label.cls, ...label.extras, ...values.map((v) => v.toFixed(6))].join(" ");
}
