#!/usr/bin/env node
/**
 * glrf-export --in <dir> --out <file> [--encoder <name>] [--size 256]
 *
 * Encodes a class-labeled image folder (one subdirectory per class) into a
 * .glrf feature file the engine ingests directly.
 */

import { DEFAULT_ENCODER } from './encoder'
import { exportDataset } from './export'

interface CliArgs {
  inputDir: string
  outputPath: string
  encoderName: string
  imageSide: number
}

export function parseArgs(argv: string[]): CliArgs {
  let inputDir: string | undefined
  let outputPath: string | undefined
  let encoderName = DEFAULT_ENCODER
  let imageSide = 256
  for (let i = 0; i < argv.length; i++) {
    const flag = argv[i]
    const value = () => {
      const v = argv[++i]
      if (v === undefined) throw new Error(`missing value for ${flag}`)
      return v
    }
    switch (flag) {
      case '--in':
        inputDir = value()
        break
      case '--out':
        outputPath = value()
        break
      case '--encoder':
        encoderName = value()
        break
      case '--size':
        imageSide = Number(value())
        if (!Number.isInteger(imageSide) || imageSide < 8) {
          throw new Error('--size expects an integer >= 8')
        }
        break
      default:
        throw new Error(`unknown flag ${flag}`)
    }
  }
  if (!inputDir || !outputPath) {
    throw new Error('usage: glrf-export --in <dir> --out <file> [--encoder <name>] [--size 256]')
  }
  return { inputDir, outputPath, encoderName, imageSide }
}

export function main(argv: string[]): number {
  let args: CliArgs
  try {
    args = parseArgs(argv)
  } catch (err) {
    console.error(`error: ${(err as Error).message}`)
    return 1
  }
  try {
    const before = Date.now()
    const result = exportDataset({
      inputDir: args.inputDir,
      outputPath: args.outputPath,
      encoderName: args.encoderName,
      imageSide: args.imageSide,
    })
    const { dataset } = result
    console.log(
      `wrote ${args.outputPath}: n=${dataset.n} d=${dataset.dim} ` +
        `classes=${dataset.numClasses} [${result.classNames.join(', ')}] ` +
        `encoder=${result.encoder.name} in ${Date.now() - before}ms`,
    )
    return 0
  } catch (err) {
    console.error(`error: ${(err as Error).message}`)
    return 1
  }
}

if (require.main === module) {
  process.exit(main(process.argv.slice(2)))
}
