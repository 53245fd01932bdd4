import { describe, expect, it } from "vitest";
import { parsePly } from "../src/ply";

function buildBinaryPly(vertices: number[][], faces: number[][]): ArrayBuffer {
  const header = [
    "ply",
    "format binary_little_endian 1.0",
    `element vertex ${vertices.length}`,
    "property float x",
    "property float y",
    "property float z",
    `element face ${faces.length}`,
    "property list uchar int vertex_indices",
    "end_header",
    "",
  ].join("\n");
  const headerBytes = new TextEncoder().encode(header);
  const size = headerBytes.length + vertices.length * 12 + faces.length * 13;
  const buffer = new ArrayBuffer(size);
  const bytes = new Uint8Array(buffer);
  bytes.set(headerBytes, 0);
  const view = new DataView(buffer);
  let at = headerBytes.length;
  for (const v of vertices) {
    view.setFloat32(at, v[0], true);
    view.setFloat32(at + 4, v[1], true);
    view.setFloat32(at + 8, v[2], true);
    at += 12;
  }
  for (const f of faces) {
    view.setUint8(at, 3);
    view.setInt32(at + 1, f[0], true);
    view.setInt32(at + 5, f[1], true);
    view.setInt32(at + 9, f[2], true);
    at += 13;
  }
  return buffer;
}

describe("parsePly", () => {
  it("parses vertices and triangle indices", () => {
    const buf = buildBinaryPly(
      [[0, 0, 0], [10, 0, 0], [0, 20, 5]],
      [[0, 1, 2]],
    );
    const mesh = parsePly(buf);
    expect(Array.from(mesh.positions)).toEqual([0, 0, 0, 10, 0, 0, 0, 20, 5]);
    expect(Array.from(mesh.indices)).toEqual([0, 1, 2]);
  });

  it("rejects ascii files", () => {
    const text = new TextEncoder().encode("ply\nformat ascii 1.0\nend_header\n");
    expect(() => parsePly(text.buffer as ArrayBuffer)).toThrow(/binary/);
  });

  it("rejects non-ply payloads", () => {
    const text = new TextEncoder().encode("hello\nworld\nend_header\n");
    expect(() => parsePly(text.buffer as ArrayBuffer)).toThrow(/not a PLY/);
  });
});
