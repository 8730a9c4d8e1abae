#!/usr/bin/env node
/**
 * visaug-adapter serve       --config adapter.yaml [--transport http|stdio]
 *                            [--host 127.0.0.1] [--port 8802]
 * visaug-adapter conformance --endpoint http://host:port [--out report.json]
 */

import * as fs from "fs";

import { loadConfig, ConfigError } from "./config";
import { buildDrivers, ModelLoadError } from "./drivers";
import { conformanceCheck } from "./conformance";
import { serveHttp, serveStdio } from "./server";

interface Args {
  _: string[];
  [key: string]: string | string[] | boolean;
}

function parseArgs(argv: string[]): Args {
  const args: Args = { _: [] };
  for (let i = 0; i < argv.length; i++) {
    const token = argv[i];
    if (token.startsWith("--")) {
      const key = token.slice(2);
      const next = argv[i + 1];
      if (next !== undefined && !next.startsWith("--")) {
        args[key] = next;
        i++;
      } else {
        args[key] = true;
      }
    } else {
      args._.push(token);
    }
  }
  return args;
}

async function main(): Promise<number> {
  const args = parseArgs(process.argv.slice(2));
  const command = args._[0];

  if (command === "serve") {
    let drivers;
    try {
      const config = loadConfig(typeof args.config === "string" ? args.config : undefined);
      drivers = buildDrivers(config);
    } catch (err) {
      if (err instanceof ConfigError || err instanceof ModelLoadError) {
        process.stderr.write(`startup error: ${err.message}\n`);
        return 1;
      }
      throw err;
    }
    const transport = typeof args.transport === "string" ? args.transport : "http";
    if (transport === "stdio") {
      await serveStdio(drivers);
      return 0;
    }
    const host = typeof args.host === "string" ? args.host : "127.0.0.1";
    const port = typeof args.port === "string" ? parseInt(args.port, 10) : 8802;
    await serveHttp(drivers, host, port);
    process.stderr.write(`adapter listening on http://${host}:${port}\n`);
    return new Promise(() => undefined); // run until killed
  }

  if (command === "conformance") {
    const endpoint = typeof args.endpoint === "string" ? args.endpoint : "http://127.0.0.1:8802";
    const opts: { probePngB64?: string } = {};
    if (typeof args.probe === "string") {
      opts.probePngB64 = fs.readFileSync(args.probe).toString("base64");
    }
    const report = await conformanceCheck(endpoint, opts);
    const text = JSON.stringify(report, null, 2);
    if (typeof args.out === "string") fs.writeFileSync(args.out, text + "\n");
    process.stdout.write(text + "\n");
    return report.pass ? 0 : 2;
  }

  process.stderr.write("usage: visaug-adapter <serve|conformance> [options]\n");
  return 1;
}

main().then(
  (code) => {
    if (code !== 0) process.exitCode = code;
  },
  (err) => {
    process.stderr.write(`fatal: ${err?.stack ?? err}\n`);
    process.exitCode = 1;
  },
);
