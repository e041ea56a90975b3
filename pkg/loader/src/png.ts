import { readFileSync } from 'node:fs';
import { inflateSync } from 'node:zlib';
import { FormatError } from './errors.js';

const PNG_SIG = Buffer.from([0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a]);

export interface DecodedImage {
  width: number;
  height: number;
  /** Row-major RGB bytes, height * width * 3 entries. */
  pixels: Uint8Array;
}

/**
 * Decode an 8-bit RGB non-interlaced PNG.
 *
 * Handles all five scanline filters, so files from other encoders with the
 * same color layout also parse.
 */
export function decodePng(data: Uint8Array): DecodedImage {
  const buf = Buffer.isBuffer(data) ? data : Buffer.from(data.buffer, data.byteOffset, data.byteLength);
  if (buf.length < 8 || !buf.subarray(0, 8).equals(PNG_SIG)) {
    throw new FormatError('not a PNG file');
  }
  let pos = 8;
  let width = -1;
  let height = -1;
  const idatParts: Buffer[] = [];
  while (pos + 8 <= buf.length) {
    const length = buf.readUInt32BE(pos);
    const tag = buf.toString('latin1', pos + 4, pos + 8);
    const payload = buf.subarray(pos + 8, pos + 8 + length);
    if (payload.length !== length) {
      throw new FormatError('truncated PNG chunk');
    }
    if (tag === 'IHDR') {
      width = payload.readUInt32BE(0);
      height = payload.readUInt32BE(4);
      const bitDepth = payload[8];
      const colorType = payload[9];
      const interlace = payload[12];
      if (bitDepth !== 8 || colorType !== 2 || interlace !== 0) {
        throw new FormatError(
          `unsupported PNG layout: depth=${bitDepth} color=${colorType} interlace=${interlace}`,
        );
      }
    } else if (tag === 'IDAT') {
      idatParts.push(payload);
    } else if (tag === 'IEND') {
      break;
    }
    pos += 12 + length;
  }
  if (width < 0) {
    throw new FormatError('PNG missing IHDR');
  }
  let raw: Buffer;
  try {
    raw = inflateSync(Buffer.concat(idatParts));
  } catch (err) {
    throw new FormatError(`corrupt PNG pixel stream: ${(err as Error).message}`);
  }
  const stride = width * 3;
  if (raw.length !== height * (stride + 1)) {
    throw new FormatError(`PNG data length ${raw.length} does not match ${width}x${height}`);
  }
  const pixels = new Uint8Array(height * stride);
  let prevRow = new Uint8Array(stride);
  for (let y = 0; y < height; y++) {
    const rowStart = y * (stride + 1);
    const ftype = raw[rowStart];
    const line = raw.subarray(rowStart + 1, rowStart + 1 + stride);
    const cur = pixels.subarray(y * stride, (y + 1) * stride);
    switch (ftype) {
      case 0:
        cur.set(line);
        break;
      case 1:
        for (let x = 0; x < stride; x++) {
          const a = x >= 3 ? cur[x - 3] : 0;
          cur[x] = (line[x] + a) & 0xff;
        }
        break;
      case 2:
        for (let x = 0; x < stride; x++) {
          cur[x] = (line[x] + prevRow[x]) & 0xff;
        }
        break;
      case 3:
        for (let x = 0; x < stride; x++) {
          const a = x >= 3 ? cur[x - 3] : 0;
          cur[x] = (line[x] + ((a + prevRow[x]) >> 1)) & 0xff;
        }
        break;
      case 4:
        for (let x = 0; x < stride; x++) {
          const a = x >= 3 ? cur[x - 3] : 0;
          const b = prevRow[x];
          const c = x >= 3 ? prevRow[x - 3] : 0;
          const p = a + b - c;
          const pa = Math.abs(p - a);
          const pb = Math.abs(p - b);
          const pc = Math.abs(p - c);
          const pred = pa <= pb && pa <= pc ? a : pb <= pc ? b : c;
          cur[x] = (line[x] + pred) & 0xff;
        }
        break;
      default:
        throw new FormatError(`unknown PNG filter type ${ftype}`);
    }
    prevRow = cur;
  }
  return { width, height, pixels };
}

export function readPng(path: string): DecodedImage {
  return decodePng(readFileSync(path));
}
