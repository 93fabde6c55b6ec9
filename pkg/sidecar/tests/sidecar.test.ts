/**
 * End-to-end tests against the built CLI (dist/main.js), exercising the
 * documented contract: argument shape, exit codes, result.json schema,
 * kernel measurements, artifacts, and the caller-enforced timeout.
 */

import { spawnSync, spawn } from "child_process";
import * as fs from "fs";
import * as os from "os";
import * as path from "path";
import { describe, expect, it } from "vitest";

const MAIN = path.resolve(__dirname, "..", "dist", "main.js");

interface RunOutcome {
  code: number | null;
  outDir: string;
  result: any | null;
  stderr: string;
}

function runScript(script: string): RunOutcome {
  const outDir = fs.mkdtempSync(path.join(os.tmpdir(), "sidecar-"));
  const scriptPath = path.join(outDir, "script.py");
  fs.writeFileSync(scriptPath, script);
  const proc = spawnSync("node", [MAIN, "--script", scriptPath, "--out", outDir],
                         { timeout: 120_000 });
  const resultPath = path.join(outDir, "result.json");
  const result = fs.existsSync(resultPath)
    ? JSON.parse(fs.readFileSync(resultPath, "utf8"))
    : null;
  return { code: proc.status, outDir, result, stderr: String(proc.stderr) };
}

const CUBE_SCRIPT = `import cadquery as cq

result = cq.Workplane("XY").box(10, 10, 10)

cq.exporters.export(result, "model.step")
cq.exporters.export(result, "model.stl")
`;

describe("cube script", () => {
  const run = runScript(CUBE_SCRIPT);

  it("exits 0 with an ok result", () => {
    expect(run.code).toBe(0);
    expect(run.result.status).toBe("ok");
  });

  it("reports exact B-rep topology: 6 faces, 12 edges, 8 vertices", () => {
    expect(run.result.kernel.face_count).toBe(6);
    expect(run.result.kernel.edge_count).toBe(12);
    expect(run.result.kernel.vertex_count).toBe(8);
  });

  it("reports volume 1000 and a valid solid", () => {
    expect(Math.abs(run.result.kernel.volume_mm3 - 1000)).toBeLessThan(1e-6);
    expect(run.result.kernel.is_valid_solid).toBe(true);
  });

  it("centers the box on the origin", () => {
    const { min, max } = run.result.kernel.bbox;
    for (let axis = 0; axis < 3; axis++) {
      expect(min[axis]).toBeCloseTo(-5, 3);
      expect(max[axis]).toBeCloseTo(5, 3);
    }
  });

  it("writes STEP and binary STL artifacts", () => {
    const step = fs.readFileSync(path.join(run.outDir, run.result.step_path));
    expect(step.toString("ascii", 0, 13)).toBe("ISO-10303-21;");
    const stl = fs.readFileSync(path.join(run.outDir, run.result.stl_path));
    const count = stl.readUInt32LE(80);
    expect(stl.length).toBe(84 + 50 * count);
    expect(count).toBe(12); // a box tessellates to exactly 12 triangles
  });

  it("keeps the STL bbox within tessellation tolerance of the kernel bbox", () => {
    const stl = fs.readFileSync(path.join(run.outDir, run.result.stl_path));
    const count = stl.readUInt32LE(80);
    let lo = [Infinity, Infinity, Infinity];
    let hi = [-Infinity, -Infinity, -Infinity];
    for (let i = 0; i < count; i++) {
      for (let v = 0; v < 3; v++) {
        const base = 84 + i * 50 + 12 + v * 12;
        for (let axis = 0; axis < 3; axis++) {
          const value = stl.readFloatLE(base + axis * 4);
          lo[axis] = Math.min(lo[axis], value);
          hi[axis] = Math.max(hi[axis], value);
        }
      }
    }
    for (let axis = 0; axis < 3; axis++) {
      expect(Math.abs(lo[axis] - run.result.kernel.bbox.min[axis])).toBeLessThan(0.1);
      expect(Math.abs(hi[axis] - run.result.kernel.bbox.max[axis])).toBeLessThan(0.1);
    }
  });
});

describe("cylinder script", () => {
  const run = runScript(`import cadquery as cq
result = cq.Workplane("XY").cylinder(10, 5)
cq.exporters.export(result, "model.step")
cq.exporters.export(result, "model.stl")
`);

  it("reports the exact B-rep volume 250*pi", () => {
    expect(run.code).toBe(0);
    expect(Math.abs(run.result.kernel.volume_mm3 - 250 * Math.PI)).toBeLessThan(1e-6);
  });

  it("has 3 faces", () => {
    expect(run.result.kernel.face_count).toBe(3);
  });

  it("is centered along Z", () => {
    expect(run.result.kernel.bbox.min[2]).toBeCloseTo(-5, 3);
    expect(run.result.kernel.bbox.max[2]).toBeCloseTo(5, 3);
  });
});

describe("booleans", () => {
  it("computes exact volumes through union and cut", () => {
    const run = runScript(`import cadquery as cq
flange = cq.Workplane("XY").cylinder(10, 25, centered=(True, True, False))
hub = cq.Workplane("XY").workplane(offset=10).cylinder(40, 14, centered=(True, True, False))
body = flange.union(hub)
bore = cq.Workplane("XY").cylinder(120, 7)
result = body.cut(bore)
`);
    expect(run.code).toBe(0);
    const expected = Math.PI * ((25 ** 2 - 7 ** 2) * 10 + (14 ** 2 - 7 ** 2) * 40);
    expect(Math.abs(run.result.kernel.volume_mm3 - expected)).toBeLessThan(1e-6);
    expect(run.result.kernel.is_valid_solid).toBe(true);
  });
});

describe("script failures", () => {
  it("NameError exits 2 with a traceback naming the line", () => {
    const run = runScript(`import cadquery as cq
result = cq.Workplane("XY").box(10, 10, 10)
oops = undefined_name
`);
    expect(run.code).toBe(2);
    expect(run.result.status).toBe("error");
    expect(run.result.error_type).toBe("NameError");
    expect(run.result.traceback).toContain('line 3');
    expect(run.result.traceback).toContain("undefined_name");
  });

  it("syntax errors exit 2 and name the line", () => {
    const run = runScript(`import cadquery as cq
result = = cq.Workplane("XY")
`);
    expect(run.code).toBe(2);
    expect(run.result.error_type).toBe("SyntaxError");
    expect(run.result.traceback).toContain("line 2");
  });

  it("unsupported API raises AttributeError naming the method", () => {
    const run = runScript(`import cadquery as cq
result = cq.Workplane("XY").box(10, 10, 10).fillet(2)
`);
    expect(run.code).toBe(2);
    expect(run.result.error_type).toBe("AttributeError");
    expect(run.result.traceback).toContain("fillet");
  });

  it("missing import gives NameError on cq", () => {
    const run = runScript(`result = cq.Workplane("XY").box(1, 1, 1)\n`);
    expect(run.code).toBe(2);
    expect(run.result.error_type).toBe("NameError");
    expect(run.result.traceback).toContain("'cq'");
  });

  it("a script that produces no solid exits 2 with no_solid", () => {
    const run = runScript(`import cadquery as cq
x = 41 + 1
`);
    expect(run.code).toBe(2);
    expect(run.result.error_type).toBe("no_solid");
  });

  it("invalid dimensions surface as kernel construction errors", () => {
    const run = runScript(`import cadquery as cq
result = cq.Workplane("XY").cylinder(10, -5)
`);
    expect(run.code).toBe(2);
    expect(run.result.traceback).toContain("radius");
  });
});

describe("timeout contract", () => {
  it("a sleeping script is killed by the caller within budget", async () => {
    const outDir = fs.mkdtempSync(path.join(os.tmpdir(), "sidecar-"));
    const scriptPath = path.join(outDir, "script.py");
    fs.writeFileSync(scriptPath, `import time
time.sleep(30)
`);
    const start = Date.now();
    // Mirror the pipeline executor: spawn, wait 1 s, kill the process group.
    const child = spawn("node", [MAIN, "--script", scriptPath, "--out", outDir],
                        { detached: true, stdio: "ignore" });
    const exited = new Promise<void>((resolve) => child.on("exit", () => resolve()));
    await new Promise((r) => setTimeout(r, 1000));
    process.kill(-child.pid!, "SIGKILL");
    await exited;
    const wall = (Date.now() - start) / 1000;
    expect(wall).toBeLessThan(1.5);
    expect(fs.existsSync(path.join(outDir, "result.json"))).toBe(false);
  }, 20_000);
});

describe("result.json contract", () => {
  it("is written atomically (no .tmp leftover) and carries every field", () => {
    const run = runScript(CUBE_SCRIPT);
    expect(fs.existsSync(path.join(run.outDir, "result.json.tmp"))).toBe(false);
    const kernel = run.result.kernel;
    for (const key of ["volume_mm3", "bbox", "center_of_mass", "face_count",
                       "edge_count", "vertex_count", "is_valid_solid",
                       "tessellation_note"]) {
      expect(kernel).toHaveProperty(key);
    }
    expect(run.result.stl_path).toBe("model.stl");
    expect(run.result.step_path).toBe("model.step");
  });

  it("error results also validate against the schema", () => {
    const run = runScript("import cadquery as cq\nboom =\n");
    expect(run.result.status).toBe("error");
    expect(typeof run.result.error_type).toBe("string");
    expect(typeof run.result.traceback).toBe("string");
  });
});

describe("math and arithmetic in scripts", () => {
  it("evaluates numeric expressions and math constants", () => {
    const run = runScript(`import cadquery as cq
import math
size = 2 * 5.0
result = cq.Workplane("XY").box(size, size, math.sqrt(100))
`);
    expect(run.code).toBe(0);
    expect(Math.abs(run.result.kernel.volume_mm3 - 1000)).toBeLessThan(1e-6);
  });

  it("supports translate and multi-line chains", () => {
    const run = runScript(`import cadquery as cq
result = (
    cq.Workplane("XY")
    .box(10, 10, 10)
    .translate((0, 0, 20))
)
`);
    expect(run.code).toBe(0);
    expect(run.result.kernel.bbox.min[2]).toBeCloseTo(15, 3);
    expect(run.result.kernel.bbox.max[2]).toBeCloseTo(25, 3);
  });
});
