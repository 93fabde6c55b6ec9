/**
 * Thin wrapper over the OpenCASCADE WASM kernel: primitive construction,
 * booleans, exact measurements, validity analysis, tessellation and STEP
 * export. Every measurement comes from the kernel itself (BRepGProp,
 * BRepBndLib, BRepCheck), never from the tessellated mesh.
 */

import * as fs from "fs";
import * as path from "path";

export const LINEAR_DEFLECTION_MM = 0.1;
export const ANGULAR_DEFLECTION_RAD = 0.5;

export class KernelError extends Error {
  constructor(public occtType: string, message: string) {
    super(message);
  }
}

export interface Measurements {
  volume_mm3: number;
  bbox: { min: [number, number, number]; max: [number, number, number] };
  center_of_mass: [number, number, number];
  face_count: number;
  edge_count: number;
  vertex_count: number;
  is_valid_solid: boolean;
  tessellation_note: string;
}

export interface Triangle {
  a: [number, number, number];
  b: [number, number, number];
  c: [number, number, number];
}

let kernelPromise: Promise<Kernel> | null = null;

export function loadKernel(): Promise<Kernel> {
  if (!kernelPromise) kernelPromise = initKernel();
  return kernelPromise;
}

async function initKernel(): Promise<Kernel> {
  // The WASM loader was transpiled to ESM and resolves __dirname/require
  // through the scope chain; provide globals so it works from CommonJS.
  const g = globalThis as any;
  if (typeof g.__dirname === "undefined") g.__dirname = __dirname;
  if (typeof g.require === "undefined") g.require = require;

  const distDir = path.dirname(
    require.resolve("opencascade.js/dist/opencascade.wasm.js"),
  );
  const factory = require("opencascade.js/dist/opencascade.wasm.js").default;
  const wasmBinary = fs.readFileSync(path.join(distDir, "opencascade.wasm.wasm"));
  const oc = await factory({ wasmBinary });
  return new Kernel(oc);
}

function wrap<T>(what: string, fn: () => T): T {
  try {
    return fn();
  } catch (err: any) {
    let message = err && err.message ? String(err.message) : String(err);
    if (/^\d+$/.test(message.trim())) {
      // Embind surfaces OCCT exceptions as raw pointers; use the canonical
      // phrase so error-pattern matching downstream still works.
      message = "BRep_API: command not done";
    }
    throw new KernelError("StdFail_NotDone", `${what} failed in the kernel: ${message}`);
  }
}

export class Kernel {
  constructor(public oc: any) {}

  makeBox(l: number, w: number, h: number,
          centered: [boolean, boolean, boolean]): any {
    if (l <= 0 || w <= 0 || h <= 0) {
      throw new KernelError("Standard_ConstructionError",
        `box dimensions must be positive, got (${l}, ${w}, ${h})`);
    }
    const shape = wrap("box construction", () =>
      new this.oc.BRepPrimAPI_MakeBox_1(l, w, h).Shape());
    const dx = centered[0] ? -l / 2 : 0;
    const dy = centered[1] ? -w / 2 : 0;
    const dz = centered[2] ? -h / 2 : 0;
    return this.translate(shape, [dx, dy, dz]);
  }

  makeCylinder(radius: number, height: number, centeredZ: boolean): any {
    if (radius <= 0 || height <= 0) {
      throw new KernelError("Standard_ConstructionError",
        `cylinder needs positive radius and height, got r=${radius}, h=${height}`);
    }
    const shape = wrap("cylinder construction", () =>
      new this.oc.BRepPrimAPI_MakeCylinder_1(radius, height).Shape());
    return centeredZ ? this.translate(shape, [0, 0, -height / 2]) : shape;
  }

  makeSphere(radius: number): any {
    if (radius <= 0) {
      throw new KernelError("Standard_ConstructionError",
        `sphere needs a positive radius, got ${radius}`);
    }
    return wrap("sphere construction", () =>
      new this.oc.BRepPrimAPI_MakeSphere_1(radius).Shape());
  }

  translate(shape: any, vec: [number, number, number]): any {
    return wrap("translate", () => {
      const trsf = new this.oc.gp_Trsf_1();
      trsf.SetTranslation_1(new this.oc.gp_Vec_4(vec[0], vec[1], vec[2]));
      return new this.oc.BRepBuilderAPI_Transform_2(shape, trsf, true).Shape();
    });
  }

  rotate(shape: any, axisStart: [number, number, number],
         axisEnd: [number, number, number], angleDeg: number): any {
    return wrap("rotate", () => {
      const dir = [axisEnd[0] - axisStart[0], axisEnd[1] - axisStart[1],
                   axisEnd[2] - axisStart[2]];
      const axis = new this.oc.gp_Ax1_2(
        new this.oc.gp_Pnt_3(axisStart[0], axisStart[1], axisStart[2]),
        new this.oc.gp_Dir_4(dir[0], dir[1], dir[2]));
      const trsf = new this.oc.gp_Trsf_1();
      trsf.SetRotation_1(axis, (angleDeg * Math.PI) / 180.0);
      return new this.oc.BRepBuilderAPI_Transform_2(shape, trsf, true).Shape();
    });
  }

  fuse(a: any, b: any): any {
    return wrap("union (fuse)", () => new this.oc.BRepAlgoAPI_Fuse_3(a, b).Shape());
  }

  cut(a: any, b: any): any {
    return wrap("cut", () => new this.oc.BRepAlgoAPI_Cut_3(a, b).Shape());
  }

  common(a: any, b: any): any {
    return wrap("intersect (common)", () =>
      new this.oc.BRepAlgoAPI_Common_3(a, b).Shape());
  }

  private uniqueCount(shape: any, shapeType: any): number {
    const seen: any[] = [];
    const ex = new this.oc.TopExp_Explorer_2(
      shape, shapeType, this.oc.TopAbs_ShapeEnum.TopAbs_SHAPE);
    while (ex.More()) {
      const cur = ex.Current();
      if (!seen.some((s) => s.IsSame(cur))) seen.push(cur);
      ex.Next();
    }
    return seen.length;
  }

  measure(shape: any): Measurements {
    const oc = this.oc;
    const props = new oc.GProp_GProps_1();
    oc.BRepGProp.VolumeProperties_1(shape, props, false, false, false);
    const volume = props.Mass();
    const com = props.CentreOfMass();

    const bb = new oc.Bnd_Box_1();
    oc.BRepBndLib.Add(shape, bb, false);
    const mn = bb.CornerMin();
    const mx = bb.CornerMax();

    const kinds = oc.TopAbs_ShapeEnum;
    const analyzerValid = new oc.BRepCheck_Analyzer(shape, true).IsValid_2();
    const isValid = Boolean(analyzerValid) && volume > 1e-9;

    return {
      volume_mm3: volume,
      bbox: {
        min: [mn.X(), mn.Y(), mn.Z()],
        max: [mx.X(), mx.Y(), mx.Z()],
      },
      center_of_mass: [com.X(), com.Y(), com.Z()],
      face_count: this.uniqueCount(shape, kinds.TopAbs_FACE),
      edge_count: this.uniqueCount(shape, kinds.TopAbs_EDGE),
      vertex_count: this.uniqueCount(shape, kinds.TopAbs_VERTEX),
      is_valid_solid: isValid,
      tessellation_note:
        `BRepMesh_IncrementalMesh linear deflection ${LINEAR_DEFLECTION_MM} mm, ` +
        `angular ${ANGULAR_DEFLECTION_RAD} rad`,
    };
  }

  /** Triangulate every face (meshing the shape first) into world-space triangles. */
  tessellate(shape: any): Triangle[] {
    const oc = this.oc;
    wrap("tessellation", () => new oc.BRepMesh_IncrementalMesh_2(
      shape, LINEAR_DEFLECTION_MM, false, ANGULAR_DEFLECTION_RAD, false));

    const triangles: Triangle[] = [];
    const kinds = oc.TopAbs_ShapeEnum;
    const ex = new oc.TopExp_Explorer_2(shape, kinds.TopAbs_FACE, kinds.TopAbs_SHAPE);
    const reversed = oc.TopAbs_Orientation.TopAbs_REVERSED;
    while (ex.More()) {
      const faceShape = ex.Current();
      const face = oc.TopoDS.Face_1(faceShape);
      const loc = new oc.TopLoc_Location_1();
      const handle = oc.BRep_Tool.Triangulation(face, loc);
      const poly = handle && !handle.IsNull() ? handle.get() : null;
      if (poly) {
        const trsf = loc.Transformation();
        const flip = faceShape.Orientation_1().value === reversed.value;
        const nodes: [number, number, number][] = [];
        for (let i = 1; i <= poly.NbNodes(); i++) {
          const p = poly.Node(i).Transformed(trsf);
          nodes.push([p.X(), p.Y(), p.Z()]);
        }
        for (let i = 1; i <= poly.NbTriangles(); i++) {
          const tri = poly.Triangle(i);
          let ia = tri.Value(1), ib = tri.Value(2), ic = tri.Value(3);
          if (flip) [ib, ic] = [ic, ib];
          triangles.push({ a: nodes[ia - 1], b: nodes[ib - 1], c: nodes[ic - 1] });
        }
      }
      ex.Next();
    }
    if (triangles.length === 0) {
      throw new KernelError("StdFail_NotDone", "tessellation produced no triangles");
    }
    return triangles;
  }

  /** Write the shape as STEP (AP203/214 via STEPControl) to a host path. */
  writeStep(shape: any, hostPath: string): void {
    const oc = this.oc;
    // The WASM build mis-marshals path strings longer than 10 characters in
    // this binding, so write to a short scratch name in the in-memory FS and
    // copy the bytes out through Node.
    const scratch = "/o.step";
    wrap("STEP export", () => {
      const writer = new oc.STEPControl_Writer_1();
      writer.Transfer(shape, oc.STEPControl_StepModelType.STEPControl_AsIs, true);
      const status = writer.Write(scratch);
      const done = oc.IFSelect_ReturnStatus.IFSelect_RetDone;
      if (status && status.value !== undefined && done.value !== undefined &&
          status.value !== done.value) {
        throw new Error(`STEP writer returned status ${status.value}`);
      }
    });
    const data = this.oc.FS.readFile(scratch);
    this.oc.FS.unlink(scratch);
    fs.writeFileSync(hostPath, Buffer.from(data));
  }
}
