/**
 * Sidecar entry point.
 *
 * Usage: node dist/main.js --script <path> --out <dir>
 * Exit codes: 0 success, 2 script error, 3 internal error.
 *
 * Executes one script in a fresh environment, locates the `result` solid,
 * exports model.step + model.stl, measures the solid with the geometry
 * kernel, and writes result.json (atomically) describing the outcome.
 */

import * as fs from "fs";
import * as path from "path";
import { buildCadqueryModule, buildMathModule, buildTimeModule, Workplane } from "./cadquery";
import { Interpreter, ScriptError, Value, formatTraceback } from "./interpret";
import { Kernel, KernelError, loadKernel } from "./kernel";
import { writeBinaryStl } from "./stl";
import { writeResultAtomic } from "./result";

function parseArgs(argv: string[]): { script: string; out: string } {
  let script = "";
  let out = "";
  for (let i = 0; i < argv.length; i++) {
    if (argv[i] === "--script") script = argv[++i] || "";
    else if (argv[i] === "--out") out = argv[++i] || "";
    else {
      process.stderr.write(`unknown argument: ${argv[i]}\n`);
      process.exit(3);
    }
  }
  if (!script || !out) {
    process.stderr.write("usage: sidecar --script <path> --out <dir>\n");
    process.exit(3);
  }
  return { script, out };
}

async function main(): Promise<number> {
  const { script: scriptPath, out: outDir } = parseArgs(process.argv.slice(2));
  fs.mkdirSync(outDir, { recursive: true });

  let source: string;
  try {
    source = fs.readFileSync(scriptPath, "utf8");
  } catch (err) {
    writeResultAtomic(outDir, {
      status: "error",
      error_type: "sidecar_internal",
      traceback: `cannot read script ${scriptPath}: ${String(err)}`,
    });
    return 3;
  }

  let kernel: Kernel;
  try {
    kernel = await loadKernel();
  } catch (err: any) {
    writeResultAtomic(outDir, {
      status: "error",
      error_type: "sidecar_internal",
      traceback: `geometry kernel failed to initialize: ${String(err && err.stack || err)}`,
    });
    return 3;
  }

  try {
    const env = new Map<string, Value>([
      ["__module_cadquery__", buildCadqueryModule(kernel, outDir)],
      ["__module_math__", buildMathModule()],
      ["__module_time__", buildTimeModule()],
    ]);
    new Interpreter(env).run(source);

    const result = env.get("result");
    if (!(result instanceof Workplane) || !result.shape) {
      writeResultAtomic(outDir, {
        status: "error",
        error_type: "no_solid",
        traceback:
          "script finished without assigning a solid to `result` " +
          "(expected: result = cq.Workplane(\"XY\")...)",
      });
      return 2;
    }

    const stepPath = path.join(outDir, "model.step");
    const stlPath = path.join(outDir, "model.stl");
    kernel.writeStep(result.shape, stepPath);
    writeBinaryStl(kernel.tessellate(result.shape), stlPath);
    const metrics = kernel.measure(result.shape);
    writeResultAtomic(outDir, {
      status: "ok",
      kernel: metrics,
      stl_path: "model.stl",
      step_path: "model.step",
    });
    return 0;
  } catch (err: any) {
    if (err instanceof ScriptError) {
      writeResultAtomic(outDir, {
        status: "error",
        error_type: err.pyType,
        traceback: formatTraceback(err, source),
      });
      return 2;
    }
    if (err instanceof KernelError) {
      writeResultAtomic(outDir, {
        status: "error",
        error_type: err.occtType,
        traceback: `${err.occtType}: ${err.message}`,
      });
      return 2;
    }
    writeResultAtomic(outDir, {
      status: "error",
      error_type: "sidecar_internal",
      traceback: String(err && err.stack || err),
    });
    return 3;
  }
}

main().then(
  (code) => process.exit(code),
  (err) => {
    process.stderr.write(String(err && err.stack || err) + "\n");
    process.exit(3);
  },
);
