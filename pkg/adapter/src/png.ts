/** Minimal PNG header inspection: enough to size masks without a decoder. */

const PNG_SIGNATURE = Buffer.from([0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a]);

export class PngError extends Error {}

export interface PngSize {
  width: number;
  height: number;
}

export function pngSize(data: Buffer): PngSize {
  if (data.length < 24 || !data.subarray(0, 8).equals(PNG_SIGNATURE)) {
    throw new PngError("not a PNG stream");
  }
  // IHDR is mandatory first chunk: length(4) type(4) width(4) height(4)
  if (data.toString("latin1", 12, 16) !== "IHDR") {
    throw new PngError("missing IHDR chunk");
  }
  const width = data.readUInt32BE(16);
  const height = data.readUInt32BE(20);
  if (width <= 0 || height <= 0) throw new PngError(`bad dimensions ${width}x${height}`);
  return { width, height };
}

export function pngSizeFromBase64(b64: string): PngSize {
  let buf: Buffer;
  try {
    buf = Buffer.from(b64, "base64");
  } catch (err) {
    throw new PngError(`bad base64: ${err}`);
  }
  return pngSize(buf);
}
