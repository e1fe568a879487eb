import { describe, expect, it } from "vitest";

import {
  apply3,
  camToSensor,
  invert3,
  parseCalibration,
  parseLabels,
  predictionLine,
  wrapAngle,
  yawCamToSensor,
  type Calibration,
  type Mat3,
  type Vec3,
} from "../dist/kitti.js";

const IDENTITY: Mat3 = [1, 0, 0, 0, 1, 0, 0, 0, 1];

// The usual KITTI mounting: camera x = -sensor y, camera y = -sensor z,
// camera z = sensor x, plus a small lever arm.
const KITTI_LIKE: Calibration = {
  rect: IDENTITY,
  veloRot: [0, -1, 0, 0, 0, -1, 1, 0, 0],
  veloT: [0.02, -0.06, 0.27],
};

function sensorToCam(calib: Calibration, p: Vec3): Vec3 {
  const rotated = apply3(calib.veloRot, p);
  const unrect: Vec3 = [
    rotated[0] + calib.veloT[0],
    rotated[1] + calib.veloT[1],
    rotated[2] + calib.veloT[2],
  ];
  return apply3(calib.rect, unrect);
}

describe("wrapAngle", () => {
  it("maps into (-pi, pi]", () => {
    expect(wrapAngle(0)).toBe(0);
    expect(wrapAngle((3 * Math.PI) / 2)).toBeCloseTo(-Math.PI / 2, 12);
    expect(wrapAngle(-Math.PI)).toBeCloseTo(Math.PI, 12);
    expect(wrapAngle(7 * Math.PI)).toBeCloseTo(Math.PI, 12);
  });

  it("is idempotent on in-range values", () => {
    for (const a of [-3.1, -1.0, 0.0, 0.5, 3.14]) {
      expect(wrapAngle(a)).toBeCloseTo(a, 12);
    }
  });
});

describe("yawCamToSensor", () => {
  it("is its own inverse", () => {
    for (const ry of [-2.8, -1.2, 0.0, 0.3, 1.9, 3.0]) {
      expect(yawCamToSensor(yawCamToSensor(ry))).toBeCloseTo(wrapAngle(ry), 12);
    }
  });

  it("sends camera zero heading to -pi/2", () => {
    expect(yawCamToSensor(0)).toBeCloseTo(-Math.PI / 2, 12);
  });
});

describe("invert3", () => {
  it("inverts a rotation", () => {
    const inv = invert3(KITTI_LIKE.veloRot);
    const product = [0, 1, 2].map((row) =>
      apply3(inv, [
        KITTI_LIKE.veloRot[row]!,
        KITTI_LIKE.veloRot[row + 3]!,
        KITTI_LIKE.veloRot[row + 6]!,
      ]),
    );
    // columns of R fed through R^-1 give the unit basis
    for (let row = 0; row < 3; row++) {
      for (let col = 0; col < 3; col++) {
        expect(product[row]![col]).toBeCloseTo(row === col ? 1 : 0, 12);
      }
    }
  });

  it("rejects singular input", () => {
    expect(() => invert3([1, 2, 3, 2, 4, 6, 0, 0, 1])).toThrow(/singular/);
  });
});

describe("camToSensor", () => {
  it("is the identity under identity calibration", () => {
    const calib: Calibration = { rect: IDENTITY, veloRot: IDENTITY, veloT: [0, 0, 0] };
    expect(camToSensor(calib, [1.5, -2.0, 0.25])).toEqual([1.5, -2.0, 0.25]);
  });

  it("inverts sensorToCam on the KITTI-like mount", () => {
    const p: Vec3 = [12.5, -3.25, -0.875];
    const back = camToSensor(KITTI_LIKE, sensorToCam(KITTI_LIKE, p));
    for (let axis = 0; axis < 3; axis++) {
      expect(back[axis]).toBeCloseTo(p[axis]!, 10);
    }
  });
});

describe("parseCalibration", () => {
  const text = [
    "P2: 7.2 0 6.1 0 0 7.2 1.8 0 0 0 1 0",
    "R0_rect: 1 0 0 0 1 0 0 0 1",
    "Tr_velo_to_cam: 0 -1 0 0.02 0 0 -1 -0.06 1 0 0 0.27",
  ].join("\n");

  it("extracts the two matrices it needs", () => {
    const calib = parseCalibration(text, "calib.txt");
    expect(calib.rect).toEqual(IDENTITY);
    expect(calib.veloRot).toEqual(KITTI_LIKE.veloRot);
    expect(calib.veloT).toEqual(KITTI_LIKE.veloT);
  });

  it("accepts the R_rect spelling", () => {
    const calib = parseCalibration(text.replace("R0_rect", "R_rect"), "calib.txt");
    expect(calib.rect).toEqual(IDENTITY);
  });

  it("names the file on missing keys", () => {
    expect(() => parseCalibration("P2: 1 2 3", "odd.txt")).toThrow(/odd\.txt.*R0_rect/);
    expect(() => parseCalibration("R0_rect: 1 0 0 0 1 0 0 0 1", "odd.txt")).toThrow(
      /Tr_velo_to_cam/,
    );
  });
});

describe("parseLabels", () => {
  const line15 = "Car 0 0 -1.5 0 0 50 50 1.56 1.6 3.9 2.0 1.4 10.0 0.3";

  it("reads 15-field rows with score defaulting to 1", () => {
    const labels = parseLabels(line15, "l.txt");
    expect(labels).toHaveLength(1);
    const label = labels[0]!;
    expect(label.cls).toBe("Car");
    expect([label.h, label.w, label.l]).toEqual([1.56, 1.6, 3.9]);
    expect([label.x, label.y, label.z]).toEqual([2.0, 1.4, 10.0]);
    expect(label.ry).toBe(0.3);
    expect(label.score).toBe(1.0);
  });

  it("passes a 16th field through as score", () => {
    expect(parseLabels(`${line15} 0.62`, "l.txt")[0]!.score).toBe(0.62);
  });

  it("skips DontCare and blank rows", () => {
    const text = `\nDontCare -1 -1 -10 0 0 0 0 -1 -1 -1 -1000 -1000 -1000 -10\n${line15}\n`;
    expect(parseLabels(text, "l.txt")).toHaveLength(1);
  });

  it("reports the offending line on bad field counts", () => {
    expect(() => parseLabels(`${line15}\nCar 1 2 3`, "l.txt")).toThrow(/l\.txt:2.*got 4/);
  });

  it("rejects non-numeric box fields", () => {
    expect(() => parseLabels(line15.replace("3.9", "wide"), "l.txt")).toThrow(/non-numeric/);
  });
});

describe("predictionLine", () => {
  it("emits 16 fields with converted pose and fixed precision", () => {
    const calib: Calibration = { rect: IDENTITY, veloRot: IDENTITY, veloT: [0, 0, 0] };
    const label = parseLabels("Car 0 0 0 0 0 0 0 1.56 1.6 3.9 10.0 3.0 -1.0 0.3", "l.txt")[0]!;
    const fields = predictionLine(label, calib).split(" ");
    expect(fields).toHaveLength(16);
    expect(fields.slice(8, 14)).toEqual([
      "1.560000", "1.600000", "3.900000", "10.000000", "3.000000", "-1.000000",
    ]);
    expect(Number(fields[14])).toBeCloseTo(yawCamToSensor(0.3), 6);
    expect(fields[15]).toBe("1.000000");
  });

  it("moves the pose through the mount transform", () => {
    const sensor: Vec3 = [15.0, 2.0, -0.8];
    const cam = sensorToCam(KITTI_LIKE, sensor);
    const label = parseLabels(
      `Car 0 0 0 0 0 0 0 1.5 1.6 3.9 ${cam[0]} ${cam[1]} ${cam[2]} 0.0`,
      "l.txt",
    )[0]!;
    const fields = predictionLine(label, KITTI_LIKE).split(" ");
    expect(Number(fields[11])).toBeCloseTo(sensor[0], 6);
    expect(Number(fields[12])).toBeCloseTo(sensor[1], 6);
    expect(Number(fields[13])).toBeCloseTo(sensor[2], 6);
  });
});
