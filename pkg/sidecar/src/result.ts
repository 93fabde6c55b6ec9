/** result.json schema shared with the pipeline's executor, written atomically. */

import * as fs from "fs";
import * as path from "path";
import { Measurements } from "./kernel";

export interface ResultJson {
  status: "ok" | "error";
  kernel?: Measurements;
  stl_path?: string;
  step_path?: string;
  error_type?: string;
  traceback?: string;
}

export function writeResultAtomic(outDir: string, result: ResultJson): void {
  const target = path.join(outDir, "result.json");
  const tmp = target + ".tmp";
  fs.writeFileSync(tmp, JSON.stringify(result, null, 2) + "\n");
  fs.renameSync(tmp, target);
}
