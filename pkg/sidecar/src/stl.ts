/** Binary STL writer (80-byte header, 50-byte records, zero attributes). */

import * as fs from "fs";
import { Triangle } from "./kernel";

export function writeBinaryStl(triangles: Triangle[], hostPath: string): void {
  const buf = Buffer.alloc(84 + 50 * triangles.length);
  buf.write("cadsmith sidecar binary stl", 0, "ascii");
  buf.writeUInt32LE(triangles.length, 80);
  let off = 84;
  for (const t of triangles) {
    const n = normal(t);
    buf.writeFloatLE(n[0], off); buf.writeFloatLE(n[1], off + 4);
    buf.writeFloatLE(n[2], off + 8);
    let v = off + 12;
    for (const p of [t.a, t.b, t.c]) {
      buf.writeFloatLE(p[0], v); buf.writeFloatLE(p[1], v + 4);
      buf.writeFloatLE(p[2], v + 8);
      v += 12;
    }
    buf.writeUInt16LE(0, off + 48);
    off += 50;
  }
  fs.writeFileSync(hostPath, buf);
}

function normal(t: Triangle): [number, number, number] {
  const ux = t.b[0] - t.a[0], uy = t.b[1] - t.a[1], uz = t.b[2] - t.a[2];
  const vx = t.c[0] - t.a[0], vy = t.c[1] - t.a[1], vz = t.c[2] - t.a[2];
  const nx = uy * vz - uz * vy;
  const ny = uz * vx - ux * vz;
  const nz = ux * vy - uy * vx;
  const len = Math.hypot(nx, ny, nz);
  if (len === 0) return [0, 0, 0];
  return [nx / len, ny / len, nz / len];
}
