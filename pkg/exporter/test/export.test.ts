import { execFileSync } from 'child_process'
import * as fs from 'fs'
import * as os from 'os'
import * as path from 'path'
import { afterEach, beforeEach, describe, expect, it } from 'vitest'
import { main } from '../src/cli'
import { exportDataset } from '../src/export'
import { readGlrf } from '../src/glrf'
import { buildSixImageFixture } from './fixtures'

let dir: string
beforeEach(() => {
  dir = fs.mkdtempSync(path.join(os.tmpdir(), 'glrf-export-'))
})
afterEach(() => {
  fs.rmSync(dir, { recursive: true, force: true })
})

describe('six-image fixture contract', () => {
  it('exports n=6 with labels in sorted-directory order', () => {
    const imagesDir = path.join(dir, 'images')
    buildSixImageFixture(imagesDir)
    const out = path.join(dir, 'features.glrf')
    const { dataset } = exportDataset({
      inputDir: imagesDir,
      outputPath: out,
      imageSide: 64,
    })
    expect(dataset.n).toBe(6)
    expect(dataset.dim).toBe(64)
    expect(dataset.numClasses).toBe(2)
    // "healthy" sorts before "tumor"
    expect(Array.from(dataset.labels)).toEqual([0, 0, 0, 1, 1, 1])

    const parsed = readGlrf(out)
    expect(parsed.n).toBe(6)
    expect(parsed.dim).toBe(64)
    expect(Array.from(parsed.labels)).toEqual([0, 0, 0, 1, 1, 1])
    for (const value of parsed.features) {
      expect(Number.isFinite(value)).toBe(true)
    }
  })

  it('re-export of identical inputs is feature-identical', () => {
    const imagesDir = path.join(dir, 'images')
    buildSixImageFixture(imagesDir)
    const outA = path.join(dir, 'a.glrf')
    const outB = path.join(dir, 'b.glrf')
    exportDataset({ inputDir: imagesDir, outputPath: outA, imageSide: 64 })
    exportDataset({ inputDir: imagesDir, outputPath: outB, imageSide: 64 })
    const a = fs.readFileSync(outA)
    const b = fs.readFileSync(outB)
    expect(a.equals(b)).toBe(true)
    // spec tolerance is 1e-5 per element; identical bytes clears it
    const fa = readGlrf(outA).features
    const fb = readGlrf(outB).features
    for (let i = 0; i < fa.length; i++) {
      expect(Math.abs(fa[i] - fb[i])).toBeLessThanOrEqual(1e-5)
    }
  })

  it('rejects empty class directories', () => {
    const imagesDir = path.join(dir, 'images')
    fs.mkdirSync(path.join(imagesDir, 'empty_class'), { recursive: true })
    expect(() =>
      exportDataset({ inputDir: imagesDir, outputPath: path.join(dir, 'x.glrf') }),
    ).toThrow(/no images/)
  })
})

describe('cli', () => {
  it('exports via flags and reports a summary', () => {
    const imagesDir = path.join(dir, 'images')
    buildSixImageFixture(imagesDir)
    const out = path.join(dir, 'cli.glrf')
    const code = main(['--in', imagesDir, '--out', out, '--size', '64'])
    expect(code).toBe(0)
    expect(readGlrf(out).n).toBe(6)
  })

  it('fails cleanly on bad flags', () => {
    expect(main(['--wat'])).toBe(1)
    expect(main(['--in', 'somewhere'])).toBe(1)
  })
})

describe('engine integration', () => {
  it('engine loads the exported file and trains naive end-to-end', () => {
    const imagesDir = path.join(dir, 'images')
    buildSixImageFixture(imagesDir)
    const out = path.join(dir, 'features.glrf')
    exportDataset({ inputDir: imagesDir, outputPath: out, imageSide: 64 })

    const outDir = path.join(dir, 'run')
    const config = {
      seed: 1,
      method: 'naive',
      stream: { files: [out, out] }, // same file as train and eval
      train: { epochs: 2, batch_size: 4, hidden_dims: [16, 8] },
      out_dir: outDir,
    }
    const configPath = path.join(dir, 'config.json')
    fs.writeFileSync(configPath, JSON.stringify(config))
    execFileSync('python3', ['-m', 'glrcl', 'run', '--config', configPath], {
      stdio: 'pipe',
    })
    const matrix = fs.readFileSync(path.join(outDir, 'accuracy_matrix.csv'), 'utf-8')
    expect(matrix.trim().split('\n')).toHaveLength(1)
    const metrics = JSON.parse(
      fs.readFileSync(path.join(outDir, 'metrics.json'), 'utf-8'),
    )
    expect(metrics.T).toBe(1)
    expect(metrics.avg_accuracy).toBeGreaterThanOrEqual(0)
  }, 60_000)
})
