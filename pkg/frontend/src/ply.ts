// Minimal parser for the service's binary little-endian PLY meshes
// (float32 x/y/z vertices, faces as uchar count + 3 int32 indices).

export interface ParsedMesh {
  positions: Float32Array;
  indices: Uint32Array;
}

export function parsePly(buffer: ArrayBuffer): ParsedMesh {
  const bytes = new Uint8Array(buffer);
  const headerEnd = findHeaderEnd(bytes);
  const header = new TextDecoder().decode(bytes.subarray(0, headerEnd));
  const lines = header.split("\n").map((l) => l.trim());
  if (lines[0] !== "ply") throw new Error("not a PLY file");
  if (!lines.some((l) => l.startsWith("format binary_little_endian"))) {
    throw new Error("expected binary_little_endian PLY");
  }

  let nVertices = 0;
  let nFaces = 0;
  let vertexProps = 0;
  let inVertex = false;
  for (const line of lines) {
    if (line.startsWith("element vertex")) {
      nVertices = parseInt(line.split(/\s+/)[2], 10);
      inVertex = true;
    } else if (line.startsWith("element face")) {
      nFaces = parseInt(line.split(/\s+/)[2], 10);
      inVertex = false;
    } else if (line.startsWith("property") && inVertex) {
      if (!line.split(/\s+/)[1].match(/^(float|float32|uchar|uint8)$/)) {
        throw new Error(`unsupported vertex property: ${line}`);
      }
      vertexProps += line.includes("uchar") || line.includes("uint8") ? 0.25 : 1;
    }
  }

  const view = new DataView(buffer);
  let offset = headerEnd;
  const positions = new Float32Array(nVertices * 3);
  const floatProps = Math.floor(vertexProps);
  const byteProps = Math.round((vertexProps - floatProps) * 4);
  const stride = floatProps * 4 + byteProps;
  for (let i = 0; i < nVertices; i++) {
    positions[i * 3] = view.getFloat32(offset, true);
    positions[i * 3 + 1] = view.getFloat32(offset + 4, true);
    positions[i * 3 + 2] = view.getFloat32(offset + 8, true);
    offset += stride;
  }
  const indices = new Uint32Array(nFaces * 3);
  for (let i = 0; i < nFaces; i++) {
    const count = view.getUint8(offset);
    if (count !== 3) throw new Error("only triangle faces supported");
    offset += 1;
    indices[i * 3] = view.getInt32(offset, true);
    indices[i * 3 + 1] = view.getInt32(offset + 4, true);
    indices[i * 3 + 2] = view.getInt32(offset + 8, true);
    offset += 12;
  }
  return { positions, indices };
}

function findHeaderEnd(bytes: Uint8Array): number {
  const marker = "end_header\n";
  const probe = new TextDecoder().decode(bytes.subarray(0, Math.min(bytes.length, 4096)));
  const at = probe.indexOf(marker);
  if (at < 0) throw new Error("PLY header terminator not found");
  return at + marker.length;
}
