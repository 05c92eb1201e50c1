/**
 * Minimal 8-bit grayscale PNG encoder.
 *
 * The service accepts any valid PNG, so the image data is wrapped in
 * uncompressed deflate blocks (zlib "stored" mode). That keeps the encoder
 * free of compression code and of any runtime dependency, and it works the
 * same in the browser and under Node. A 64x64 sketch comes out around 4 KB,
 * far below the service's 1 MiB request cap.
 */

const CRC_TABLE = (() => {
  const table = new Uint32Array(256);
  for (let n = 0; n < 256; n++) {
    let c = n;
    for (let k = 0; k < 8; k++) {
      c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
    }
    table[n] = c >>> 0;
  }
  return table;
})();

function crc32(bytes: Uint8Array): number {
  let c = 0xffffffff;
  for (let i = 0; i < bytes.length; i++) {
    c = CRC_TABLE[(c ^ bytes[i]!) & 0xff]! ^ (c >>> 8);
  }
  return (c ^ 0xffffffff) >>> 0;
}

function adler32(bytes: Uint8Array): number {
  let a = 1;
  let b = 0;
  for (let i = 0; i < bytes.length; i++) {
    a = (a + bytes[i]!) % 65521;
    b = (b + a) % 65521;
  }
  return ((b << 16) | a) >>> 0;
}

function u32(value: number): Uint8Array {
  return new Uint8Array([
    (value >>> 24) & 0xff, (value >>> 16) & 0xff,
    (value >>> 8) & 0xff, value & 0xff,
  ]);
}

function chunk(type: string, body: Uint8Array): Uint8Array {
  const tag = new TextEncoder().encode(type);
  const payload = new Uint8Array(tag.length + body.length);
  payload.set(tag);
  payload.set(body, tag.length);
  const out = new Uint8Array(4 + payload.length + 4);
  out.set(u32(body.length));
  out.set(payload, 4);
  out.set(u32(crc32(payload)), 4 + payload.length);
  return out;
}

/** zlib stream with stored (uncompressed) deflate blocks. */
function zlibStored(raw: Uint8Array): Uint8Array {
  const MAX_BLOCK = 65535;
  const blocks: Uint8Array[] = [new Uint8Array([0x78, 0x01])];
  for (let off = 0; off < raw.length; off += MAX_BLOCK) {
    const part = raw.subarray(off, Math.min(off + MAX_BLOCK, raw.length));
    const last = off + MAX_BLOCK >= raw.length ? 1 : 0;
    const header = new Uint8Array([
      last,
      part.length & 0xff, (part.length >>> 8) & 0xff,
      ~part.length & 0xff, (~part.length >>> 8) & 0xff,
    ]);
    blocks.push(header, part);
  }
  blocks.push(u32(adler32(raw)));
  return concat(blocks);
}

function concat(parts: Uint8Array[]): Uint8Array {
  const total = parts.reduce((n, p) => n + p.length, 0);
  const out = new Uint8Array(total);
  let off = 0;
  for (const p of parts) {
    out.set(p, off);
    off += p.length;
  }
  return out;
}

/**
 * Encode a binary raster (0 = ink, 1 = background) as a grayscale PNG,
 * mapping ink to black (0) and background to white (255).
 */
export function encodePng(pixels: Uint8Array, size: number): Uint8Array {
  if (pixels.length !== size * size) {
    throw new Error(`expected ${size * size} pixels, got ${pixels.length}`);
  }
  // One filter byte (0 = None) in front of every scanline.
  const raw = new Uint8Array(size * (size + 1));
  for (let y = 0; y < size; y++) {
    const row = y * (size + 1);
    raw[row] = 0;
    for (let x = 0; x < size; x++) {
      raw[row + 1 + x] = pixels[y * size + x] ? 255 : 0;
    }
  }
  const ihdr = new Uint8Array(13);
  ihdr.set(u32(size), 0);
  ihdr.set(u32(size), 4);
  ihdr[8] = 8;  // bit depth
  ihdr[9] = 0;  // grayscale
  const signature = new Uint8Array([137, 80, 78, 71, 13, 10, 26, 10]);
  return concat([
    signature,
    chunk("IHDR", ihdr),
    chunk("IDAT", zlibStored(raw)),
    chunk("IEND", new Uint8Array(0)),
  ]);
}

export function toBase64(bytes: Uint8Array): string {
  if (typeof Buffer !== "undefined") {
    return Buffer.from(bytes).toString("base64");
  }
  let binary = "";
  for (let i = 0; i < bytes.length; i++) {
    binary += String.fromCharCode(bytes[i]!);
  }
  return btoa(binary);
}
