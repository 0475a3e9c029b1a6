/** Deterministic PNG fixtures: one subdirectory per class, patterned pixels. */

import * as fs from 'fs'
import * as path from 'path'
import { PNG } from 'pngjs'

export function writePng(filePath: string, side: number, painter: (x: number, y: number) => [number, number, number]): void {
  const png = new PNG({ width: side, height: side })
  for (let y = 0; y < side; y++) {
    for (let x = 0; x < side; x++) {
      const [r, g, b] = painter(x, y)
      const idx = (y * side + x) * 4
      png.data[idx] = r
      png.data[idx + 1] = g
      png.data[idx + 2] = b
      png.data[idx + 3] = 255
    }
  }
  fs.writeFileSync(filePath, PNG.sync.write(png))
}

/** 2 classes x 3 images: warm gradients vs cool checkerboards. */
export function buildSixImageFixture(rootDir: string): void {
  const healthy = path.join(rootDir, 'healthy')
  const tumor = path.join(rootDir, 'tumor')
  fs.mkdirSync(healthy, { recursive: true })
  fs.mkdirSync(tumor, { recursive: true })
  for (let i = 0; i < 3; i++) {
    writePng(path.join(healthy, `img${i}.png`), 40, (x, y) => [
      (x * 6 + i * 40) % 256,
      (y * 3) % 256,
      40,
    ])
    writePng(path.join(tumor, `img${i}.png`), 40, (x, y) => [
      30,
      ((x >> 2) + (y >> 2) + i) % 2 === 0 ? 220 : 60,
      (y * 5 + i * 25) % 256,
    ])
  }
}
