#!/usr/bin/env node
/** render_figures <artifact_dir> <out_dir> */

import { renderAll } from "./render.js";

function main(argv: string[]): number {
  const args = argv.slice(2);
  if (args.length !== 2) {
    console.error("usage: render_figures <artifact_dir> <out_dir>");
    return 2;
  }
  const [artifactDir, outDir] = args;
  try {
    const written = renderAll(artifactDir, outDir);
    for (const file of written) {
      console.log(file);
    }
  } catch (err) {
    console.error(`render_figures: ${err instanceof Error ? err.message : err}`);
    return 1;
  }
  return 0;
}

process.exit(main(process.argv));
