/** Image decoding (PNG/JPEG) and bilinear resize to the encoder input. */

import * as fs from 'fs'
import * as path from 'path'
import { PNG } from 'pngjs'
import * as jpeg from 'jpeg-js'

export interface RgbaImage {
  width: number
  height: number
  data: Uint8Array // RGBA, 4 bytes per pixel
}

export const IMAGE_EXTENSIONS = new Set(['.png', '.jpg', '.jpeg'])

export function loadImage(filePath: string): RgbaImage {
  const ext = path.extname(filePath).toLowerCase()
  const blob = fs.readFileSync(filePath)
  if (ext === '.png') {
    const png = PNG.sync.read(blob)
    return { width: png.width, height: png.height, data: png.data }
  }
  if (ext === '.jpg' || ext === '.jpeg') {
    const img = jpeg.decode(blob, { useTArray: true })
    return { width: img.width, height: img.height, data: img.data }
  }
  throw new Error(`unsupported image type: ${filePath}`)
}

/**
 * Bilinear resize to side x side, returning RGB channels-last floats in
 * [0, 1].  Alpha is dropped.
 */
export function resizeToSquare(image: RgbaImage, side: number): Float64Array {
  const out = new Float64Array(side * side * 3)
  const xScale = image.width / side
  const yScale = image.height / side
  for (let y = 0; y < side; y++) {
    const srcY = Math.min((y + 0.5) * yScale - 0.5, image.height - 1)
    const y0 = Math.max(Math.floor(srcY), 0)
    const y1 = Math.min(y0 + 1, image.height - 1)
    const wy = srcY - y0
    for (let x = 0; x < side; x++) {
      const srcX = Math.min((x + 0.5) * xScale - 0.5, image.width - 1)
      const x0 = Math.max(Math.floor(srcX), 0)
      const x1 = Math.min(x0 + 1, image.width - 1)
      const wx = srcX - x0
      for (let c = 0; c < 3; c++) {
        const p00 = image.data[(y0 * image.width + x0) * 4 + c]
        const p01 = image.data[(y0 * image.width + x1) * 4 + c]
        const p10 = image.data[(y1 * image.width + x0) * 4 + c]
        const p11 = image.data[(y1 * image.width + x1) * 4 + c]
        const top = p00 * (1 - wx) + p01 * wx
        const bottom = p10 * (1 - wx) + p11 * wx
        out[(y * side + x) * 3 + c] = (top * (1 - wy) + bottom * wy) / 255.0
      }
    }
  }
  return out
}
