/**
 * The `cq` module surface exposed to scripts: Workplane chains over the
 * OCCT kernel plus cq.exporters.export. Only the linear subset the pipeline
 * emits is implemented; anything else raises AttributeError so the caller's
 * error-refinement loop gets a precise signal.
 */

import * as path from "path";
import { Kernel, KernelError, Triangle } from "./kernel";
import { writeBinaryStl } from "./stl";
import {
  CallContext,
  NativeObject,
  ScriptError,
  Value,
  asNumber,
  asVec3,
  native,
  typeName,
} from "./interpret";

export class Workplane extends NativeObject {
  constructor(public kernel: Kernel, public shape: any | null,
              public zOffset: number) {
    super("Workplane");
  }

  getattr(attr: string, line: number): Value {
    const method = (METHODS as any)[attr];
    if (!method) {
      throw new ScriptError(
        "AttributeError",
        `'Workplane' object has no attribute '${attr}' ` +
        `(supported subset: ${Object.keys(METHODS).sort().join(", ")})`,
        line,
      );
    }
    return native(`Workplane.${attr}`, (args, kwargs, ctx) =>
      method(this, args, kwargs, ctx));
  }

  derive(shape: any | null, zOffset = this.zOffset): Workplane {
    return new Workplane(this.kernel, shape, zOffset);
  }

  placed(shape: any): any {
    return this.zOffset !== 0
      ? this.kernel.translate(shape, [0, 0, this.zOffset])
      : shape;
  }

  combined(newSolid: any, combine: boolean, ctx: CallContext): Workplane {
    if (this.shape && combine) {
      return this.derive(kernelCall(ctx, () => this.kernel.fuse(this.shape, newSolid)));
    }
    return this.derive(newSolid);
  }
}

function kernelCall<T>(ctx: CallContext, fn: () => T): T {
  try {
    return fn();
  } catch (err) {
    if (err instanceof KernelError) {
      throw new ScriptError(err.occtType, err.message, ctx.line);
    }
    throw err;
  }
}

function centeredFlags(value: Value | undefined,
                       line: number): [boolean, boolean, boolean] {
  if (value === undefined || value === null) return [true, true, true];
  if (typeof value === "boolean") return [value, value, value];
  if (Array.isArray(value) && value.length === 3 &&
      value.every((v) => typeof v === "boolean")) {
    return [value[0] as boolean, value[1] as boolean, value[2] as boolean];
  }
  throw new ScriptError("TypeError",
    "centered must be a bool or a 3-tuple of bools", line);
}

function wantWorkplane(v: Value, what: string, line: number): Workplane {
  if (v instanceof Workplane) return v;
  throw new ScriptError("TypeError",
    `${what} expects a Workplane, got ${typeName(v)}`, line);
}

function solidOf(wp: Workplane, what: string, line: number): any {
  if (!wp.shape) {
    throw new ScriptError("ValueError", `${what}: workplane holds no solid yet`, line);
  }
  return wp.shape;
}

type Method = (wp: Workplane, args: Value[], kwargs: Map<string, Value>,
               ctx: CallContext) => Value;

const METHODS: Record<string, Method> = {
  box(wp, args, kwargs, ctx) {
    if (args.length !== 3) {
      throw new ScriptError("TypeError",
        `box() takes 3 dimensions, got ${args.length}`, ctx.line);
    }
    const [l, w, h] = args.map((a) => asNumber(a, "box dimension", ctx.line));
    const centered = centeredFlags(kwargs.get("centered"), ctx.line);
    const combine = kwargs.get("combine") !== false;
    const solid = wp.placed(kernelCall(ctx, () =>
      wp.kernel.makeBox(l, w, h, centered)));
    return wp.combined(solid, combine, ctx);
  },

  cylinder(wp, args, kwargs, ctx) {
    if (args.length !== 2) {
      throw new ScriptError("TypeError",
        "cylinder() takes (height, radius)", ctx.line);
    }
    const height = asNumber(args[0], "cylinder height", ctx.line);
    const radius = asNumber(args[1], "cylinder radius", ctx.line);
    const centered = centeredFlags(kwargs.get("centered"), ctx.line);
    const combine = kwargs.get("combine") !== false;
    const solid = wp.placed(kernelCall(ctx, () =>
      wp.kernel.makeCylinder(radius, height, centered[2])));
    return wp.combined(solid, combine, ctx);
  },

  sphere(wp, args, kwargs, ctx) {
    if (args.length !== 1) {
      throw new ScriptError("TypeError", "sphere() takes (radius)", ctx.line);
    }
    const radius = asNumber(args[0], "sphere radius", ctx.line);
    const combine = kwargs.get("combine") !== false;
    const solid = wp.placed(kernelCall(ctx, () => wp.kernel.makeSphere(radius)));
    return wp.combined(solid, combine, ctx);
  },

  translate(wp, args, _kwargs, ctx) {
    const vec = asVec3(args[0], "translate", ctx.line);
    const solid = solidOf(wp, "translate", ctx.line);
    return wp.derive(kernelCall(ctx, () => wp.kernel.translate(solid, vec)));
  },

  rotate(wp, args, _kwargs, ctx) {
    if (args.length !== 3) {
      throw new ScriptError("TypeError",
        "rotate() takes (axisStartPoint, axisEndPoint, angleDegrees)", ctx.line);
    }
    const start = asVec3(args[0], "rotate axis start", ctx.line);
    const end = asVec3(args[1], "rotate axis end", ctx.line);
    const angle = asNumber(args[2], "rotate angle", ctx.line);
    const solid = solidOf(wp, "rotate", ctx.line);
    return wp.derive(kernelCall(ctx, () =>
      wp.kernel.rotate(solid, start, end, angle)));
  },

  union(wp, args, _kwargs, ctx) {
    const other = wantWorkplane(args[0], "union()", ctx.line);
    const a = solidOf(wp, "union", ctx.line);
    const b = solidOf(other, "union argument", ctx.line);
    return wp.derive(kernelCall(ctx, () => wp.kernel.fuse(a, b)));
  },

  cut(wp, args, _kwargs, ctx) {
    const other = wantWorkplane(args[0], "cut()", ctx.line);
    const a = solidOf(wp, "cut", ctx.line);
    const b = solidOf(other, "cut argument", ctx.line);
    return wp.derive(kernelCall(ctx, () => wp.kernel.cut(a, b)));
  },

  intersect(wp, args, _kwargs, ctx) {
    const other = wantWorkplane(args[0], "intersect()", ctx.line);
    const a = solidOf(wp, "intersect", ctx.line);
    const b = solidOf(other, "intersect argument", ctx.line);
    return wp.derive(kernelCall(ctx, () => wp.kernel.common(a, b)));
  },

  workplane(wp, _args, kwargs, ctx) {
    const offset = kwargs.has("offset")
      ? asNumber(kwargs.get("offset")!, "workplane offset", ctx.line)
      : 0.0;
    return wp.derive(wp.shape, wp.zOffset + offset);
  },
};

export function buildCadqueryModule(kernel: Kernel, outDir: string): NativeObject {
  const workplaneCtor = native("Workplane", (args, _kwargs, ctx) => {
    const plane = args.length ? args[0] : "XY";
    if (plane !== "XY" && plane !== "front") {
      throw new ScriptError("ValueError",
        `only the "XY" base workplane is supported, got ${JSON.stringify(plane)}`,
        ctx.line);
    }
    return new Workplane(kernel, null, 0.0);
  });

  const exportFn = native("export", (args, _kwargs, ctx) => {
    if (args.length !== 2 || typeof args[1] !== "string") {
      throw new ScriptError("TypeError",
        "export() takes (shape, filename)", ctx.line);
    }
    const wp = wantWorkplane(args[0], "export()", ctx.line);
    const solid = solidOf(wp, "export", ctx.line);
    const filename = args[1] as string;
    const target = path.resolve(outDir, filename);
    if (!target.startsWith(path.resolve(outDir) + path.sep)) {
      throw new ScriptError("ValueError",
        `export path ${JSON.stringify(filename)} escapes the output directory`,
        ctx.line);
    }
    const ext = path.extname(filename).toLowerCase();
    if (ext === ".stl") {
      const tris = kernelCall(ctx, (): Triangle[] => kernel.tessellate(solid));
      writeBinaryStl(tris, target);
    } else if (ext === ".step" || ext === ".stp") {
      kernelCall(ctx, () => kernel.writeStep(solid, target));
    } else {
      throw new ScriptError("ValueError",
        `unsupported export format ${JSON.stringify(ext)} (use .stl or .step)`,
        ctx.line);
    }
    return null;
  });

  const exporters = new NativeObject("exporters", new Map([["export", exportFn]]));
  return new NativeObject("cadquery", new Map<string, Value>([
    ["Workplane", workplaneCtor],
    ["exporters", exporters],
  ]));
}

export function buildMathModule(): NativeObject {
  const unary = (name: string, fn: (x: number) => number) =>
    native(`math.${name}`, (args, _kwargs, ctx) =>
      fn(asNumber(args[0], `math.${name}`, ctx.line)));
  return new NativeObject("math", new Map<string, Value>([
    ["pi", Math.PI],
    ["e", Math.E],
    ["sqrt", unary("sqrt", Math.sqrt)],
    ["sin", unary("sin", Math.sin)],
    ["cos", unary("cos", Math.cos)],
    ["tan", unary("tan", Math.tan)],
    ["radians", unary("radians", (x) => (x * Math.PI) / 180)],
    ["degrees", unary("degrees", (x) => (x * 180) / Math.PI)],
  ]));
}

export function buildTimeModule(): NativeObject {
  const sleep = native("time.sleep", (args, _kwargs, ctx) => {
    const seconds = asNumber(args[0], "time.sleep", ctx.line);
    const end = Date.now() + seconds * 1000;
    while (Date.now() < end) { /* single-shot process; busy wait is fine */ }
    return null;
  });
  return new NativeObject("time", new Map<string, Value>([["sleep", sleep]]));
}
