/**
 * Interpreter for the linear CadQuery script subset the pipeline generates.
 *
 * Supported: `import cadquery as cq` (plus math/time), assignments, method
 * chains on cq.Workplane with literal arguments, tuples/lists, arithmetic,
 * and cq.exporters.export. Control flow and function definitions are out of
 * scope by design; anything unsupported raises a Python-style error whose
 * traceback names the offending line, which is exactly what the pipeline's
 * error-refinement loop consumes.
 */

export class ScriptError extends Error {
  constructor(public pyType: string, message: string, public line: number) {
    super(message);
  }
}

export function formatTraceback(err: ScriptError, source: string): string {
  const lines = source.split("\n");
  const srcLine = (lines[err.line - 1] || "").trim();
  return (
    "Traceback (most recent call last):\n" +
    `  File "script.py", line ${err.line}, in <module>\n` +
    `    ${srcLine}\n` +
    `${err.pyType}: ${err.message}`
  );
}

// ----------------------------------------------------------------------
// Values

export type Value =
  | number
  | string
  | boolean
  | null
  | Value[]
  | NativeObject;

export interface CallContext {
  line: number;
}

export type NativeFn = (
  args: Value[],
  kwargs: Map<string, Value>,
  ctx: CallContext,
) => Value;

/** Anything with attributes and/or callability (modules, classes, methods). */
export class NativeObject {
  constructor(
    public name: string,
    public attrs: Map<string, Value> = new Map(),
    public callFn: NativeFn | null = null,
  ) {}

  getattr(attr: string, line: number): Value {
    const v = this.attrs.get(attr);
    if (v === undefined) {
      throw new ScriptError(
        "AttributeError",
        `'${this.name}' object has no attribute '${attr}'`,
        line,
      );
    }
    return v;
  }
}

export function native(name: string, fn: NativeFn): NativeObject {
  return new NativeObject(name, new Map(), fn);
}

// ----------------------------------------------------------------------
// Tokenizer

type TokKind = "num" | "str" | "ident" | "op" | "newline" | "eof";

interface Tok {
  kind: TokKind;
  text: string;
  line: number;
}

const OPS = ["**", "==", "(", ")", "[", "]", ",", ".", "=", "+", "-", "*", "/"];

export function tokenize(source: string): Tok[] {
  const toks: Tok[] = [];
  let i = 0;
  let line = 1;
  let depth = 0;
  const n = source.length;
  while (i < n) {
    const c = source[i];
    if (c === "\n") {
      line++;
      i++;
      if (depth === 0 && toks.length && toks[toks.length - 1].kind !== "newline") {
        toks.push({ kind: "newline", text: "\n", line: line - 1 });
      }
      continue;
    }
    if (c === " " || c === "\t" || c === "\r") {
      i++;
      continue;
    }
    if (c === "\\" && source[i + 1] === "\n") {
      i += 2;
      line++;
      continue;
    }
    if (c === "#") {
      while (i < n && source[i] !== "\n") i++;
      continue;
    }
    if (c === '"' || c === "'") {
      const quote = c;
      let j = i + 1;
      let out = "";
      while (j < n && source[j] !== quote) {
        if (source[j] === "\n") {
          throw new ScriptError("SyntaxError", "unterminated string literal", line);
        }
        if (source[j] === "\\" && j + 1 < n) {
          const esc = source[j + 1];
          out += esc === "n" ? "\n" : esc === "t" ? "\t" : esc;
          j += 2;
        } else {
          out += source[j];
          j++;
        }
      }
      if (j >= n) {
        throw new ScriptError("SyntaxError", "unterminated string literal", line);
      }
      toks.push({ kind: "str", text: out, line });
      i = j + 1;
      continue;
    }
    if (/[0-9]/.test(c) || (c === "." && /[0-9]/.test(source[i + 1] || ""))) {
      const match = /^[0-9]*\.?[0-9]+(?:[eE][+-]?[0-9]+)?/.exec(source.slice(i));
      if (!match) throw new ScriptError("SyntaxError", `bad number at '${c}'`, line);
      toks.push({ kind: "num", text: match[0], line });
      i += match[0].length;
      continue;
    }
    if (/[A-Za-z_]/.test(c)) {
      const match = /^[A-Za-z_][A-Za-z0-9_]*/.exec(source.slice(i))!;
      toks.push({ kind: "ident", text: match[0], line });
      i += match[0].length;
      continue;
    }
    const op = OPS.find((o) => source.startsWith(o, i));
    if (op) {
      if (op === "(" || op === "[") depth++;
      if (op === ")" || op === "]") depth = Math.max(0, depth - 1);
      toks.push({ kind: "op", text: op, line });
      i += op.length;
      continue;
    }
    throw new ScriptError("SyntaxError", `unexpected character ${JSON.stringify(c)}`, line);
  }
  toks.push({ kind: "eof", text: "", line });
  return toks;
}

// ----------------------------------------------------------------------
// Parser + evaluator (single pass; statements are evaluated as parsed)

export class Interpreter {
  private toks: Tok[] = [];
  private pos = 0;

  constructor(public env: Map<string, Value>) {}

  run(source: string): void {
    this.toks = tokenize(source);
    this.pos = 0;
    while (this.peek().kind !== "eof") {
      if (this.peek().kind === "newline") {
        this.pos++;
        continue;
      }
      this.statement();
      const tok = this.peek();
      if (tok.kind === "newline") this.pos++;
      else if (tok.kind !== "eof") {
        throw new ScriptError("SyntaxError", `unexpected ${JSON.stringify(tok.text)}`, tok.line);
      }
    }
  }

  private peek(ahead = 0): Tok {
    return this.toks[Math.min(this.pos + ahead, this.toks.length - 1)];
  }

  private next(): Tok {
    return this.toks[this.pos++];
  }

  private expectOp(text: string): Tok {
    const tok = this.next();
    if (tok.kind !== "op" || tok.text !== text) {
      throw new ScriptError("SyntaxError", `expected '${text}', got '${tok.text}'`, tok.line);
    }
    return tok;
  }

  private statement(): void {
    const tok = this.peek();
    if (tok.kind === "ident" && tok.text === "import") {
      this.importStatement();
      return;
    }
    if (tok.kind === "ident" && tok.text === "from") {
      throw new ScriptError("SyntaxError",
        "from-imports are not supported; use 'import cadquery as cq'", tok.line);
    }
    if (tok.kind === "ident" &&
        ["def", "for", "while", "if", "class", "with", "try", "return", "lambda"]
          .includes(tok.text)) {
      throw new ScriptError("SyntaxError",
        `'${tok.text}' statements are not supported by this executor`, tok.line);
    }
    // assignment: IDENT '=' expr  (but not '==')
    if (tok.kind === "ident" && this.peek(1).kind === "op" &&
        this.peek(1).text === "=" ) {
      const name = this.next().text;
      this.expectOp("=");
      const value = this.expression();
      this.env.set(name, value);
      return;
    }
    this.expression(); // bare expression (export calls)
  }

  private importStatement(): void {
    const kw = this.next(); // 'import'
    const moduleTok = this.next();
    if (moduleTok.kind !== "ident") {
      throw new ScriptError("SyntaxError", "expected a module name", kw.line);
    }
    let alias = moduleTok.text;
    if (this.peek().kind === "ident" && this.peek().text === "as") {
      this.next();
      const aliasTok = this.next();
      if (aliasTok.kind !== "ident") {
        throw new ScriptError("SyntaxError", "expected an alias name", kw.line);
      }
      alias = aliasTok.text;
    }
    const mod = this.env.get(`__module_${moduleTok.text}__`);
    if (mod === undefined) {
      throw new ScriptError("ModuleNotFoundError",
        `No module named '${moduleTok.text}'`, kw.line);
    }
    this.env.set(alias, mod);
  }

  private expression(): Value {
    let left = this.term();
    while (this.peek().kind === "op" && ["+", "-"].includes(this.peek().text)) {
      const op = this.next();
      const right = this.term();
      left = this.arith(left, right, op.text, op.line);
    }
    return left;
  }

  private term(): Value {
    let left = this.power();
    while (this.peek().kind === "op" && ["*", "/"].includes(this.peek().text)) {
      const op = this.next();
      const right = this.power();
      left = this.arith(left, right, op.text, op.line);
    }
    return left;
  }

  private power(): Value {
    const base = this.unary();
    if (this.peek().kind === "op" && this.peek().text === "**") {
      const op = this.next();
      const exp = this.power();
      return this.arith(base, exp, "**", op.line);
    }
    return base;
  }

  private unary(): Value {
    if (this.peek().kind === "op" && this.peek().text === "-") {
      const op = this.next();
      const v = this.unary();
      if (typeof v !== "number") {
        throw new ScriptError("TypeError", "unary minus needs a number", op.line);
      }
      return -v;
    }
    return this.postfix();
  }

  private arith(a: Value, b: Value, op: string, line: number): Value {
    if (typeof a !== "number" || typeof b !== "number") {
      throw new ScriptError("TypeError",
        `unsupported operand type(s) for ${op}`, line);
    }
    switch (op) {
      case "+": return a + b;
      case "-": return a - b;
      case "*": return a * b;
      case "/":
        if (b === 0) throw new ScriptError("ZeroDivisionError", "division by zero", line);
        return a / b;
      case "**": return a ** b;
    }
    throw new ScriptError("SyntaxError", `unknown operator ${op}`, line);
  }

  private postfix(): Value {
    let value = this.atom();
    for (;;) {
      const tok = this.peek();
      if (tok.kind === "op" && tok.text === ".") {
        this.next();
        const attr = this.next();
        if (attr.kind !== "ident") {
          throw new ScriptError("SyntaxError", "expected an attribute name", attr.line);
        }
        if (!(value instanceof NativeObject)) {
          throw new ScriptError("AttributeError",
            `value of type ${typeName(value)} has no attribute '${attr.text}'`,
            attr.line);
        }
        value = value.getattr(attr.text, attr.line);
      } else if (tok.kind === "op" && tok.text === "(") {
        const open = this.next();
        const { args, kwargs } = this.callArgs();
        if (!(value instanceof NativeObject) || !value.callFn) {
          throw new ScriptError("TypeError",
            `'${typeName(value)}' object is not callable`, open.line);
        }
        value = value.callFn(args, kwargs, { line: open.line });
      } else {
        return value;
      }
    }
  }

  private callArgs(): { args: Value[]; kwargs: Map<string, Value> } {
    const args: Value[] = [];
    const kwargs = new Map<string, Value>();
    if (this.peek().kind === "op" && this.peek().text === ")") {
      this.next();
      return { args, kwargs };
    }
    for (;;) {
      if (this.peek().kind === "ident" && this.peek(1).kind === "op" &&
          this.peek(1).text === "=") {
        const name = this.next().text;
        this.next(); // '='
        kwargs.set(name, this.expression());
      } else {
        if (kwargs.size > 0) {
          throw new ScriptError("SyntaxError",
            "positional argument follows keyword argument", this.peek().line);
        }
        args.push(this.expression());
      }
      const tok = this.next();
      if (tok.kind === "op" && tok.text === ")") break;
      if (!(tok.kind === "op" && tok.text === ",")) {
        throw new ScriptError("SyntaxError", `expected ',' or ')', got '${tok.text}'`, tok.line);
      }
      if (this.peek().kind === "op" && this.peek().text === ")") {
        this.next();
        break;
      }
    }
    return { args, kwargs };
  }

  private atom(): Value {
    const tok = this.next();
    if (tok.kind === "num") return parseFloat(tok.text);
    if (tok.kind === "str") return tok.text;
    if (tok.kind === "ident") {
      if (tok.text === "True") return true;
      if (tok.text === "False") return false;
      if (tok.text === "None") return null;
      const v = this.env.get(tok.text);
      if (v === undefined) {
        throw new ScriptError("NameError", `name '${tok.text}' is not defined`, tok.line);
      }
      return v;
    }
    if (tok.kind === "op" && tok.text === "(") {
      const items: Value[] = [];
      if (this.peek().kind === "op" && this.peek().text === ")") {
        this.next();
        return items;
      }
      items.push(this.expression());
      let isTuple = false;
      while (this.peek().kind === "op" && this.peek().text === ",") {
        this.next();
        isTuple = true;
        if (this.peek().kind === "op" && this.peek().text === ")") break;
        items.push(this.expression());
      }
      this.expectOp(")");
      return isTuple ? items : items[0];
    }
    if (tok.kind === "op" && tok.text === "[") {
      const items: Value[] = [];
      if (this.peek().kind === "op" && this.peek().text === "]") {
        this.next();
        return items;
      }
      for (;;) {
        items.push(this.expression());
        const sep = this.next();
        if (sep.kind === "op" && sep.text === "]") break;
        if (!(sep.kind === "op" && sep.text === ",")) {
          throw new ScriptError("SyntaxError", `expected ',' or ']'`, sep.line);
        }
        if (this.peek().kind === "op" && this.peek().text === "]") {
          this.next();
          break;
        }
      }
      return items;
    }
    throw new ScriptError("SyntaxError", `unexpected '${tok.text}'`, tok.line);
  }
}

export function typeName(v: Value): string {
  if (v === null) return "NoneType";
  if (typeof v === "number") return "float";
  if (typeof v === "string") return "str";
  if (typeof v === "boolean") return "bool";
  if (Array.isArray(v)) return "tuple";
  return v.name;
}

/** Coerce a tuple/list of 3 numbers; used by translate and friends. */
export function asVec3(v: Value, what: string, line: number): [number, number, number] {
  if (Array.isArray(v) && v.length === 3 && v.every((x) => typeof x === "number")) {
    return [v[0] as number, v[1] as number, v[2] as number];
  }
  throw new ScriptError("TypeError", `${what} expects a 3-tuple of numbers`, line);
}

export function asNumber(v: Value, what: string, line: number): number {
  if (typeof v === "number") return v;
  if (typeof v === "boolean") return v ? 1 : 0;
  throw new ScriptError("TypeError", `${what} expects a number, got ${typeName(v)}`, line);
}
