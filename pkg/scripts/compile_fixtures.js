// Recompile the fixture corpus with solc-js 0.5.12 (npm install solc@0.5.12).
// Usage: NODE_PATH=<dir containing node_modules> node scripts/compile_fixtures.js fixtures
const fs = require('fs');
const path = require('path');
const solc = require('solc');

const root = process.argv[2] || 'fixtures';
for (const name of fs.readdirSync(root).sort()) {
  const dir = path.join(root, name);
  if (!fs.statSync(dir).isDirectory()) continue;
  const sources = fs.readdirSync(dir).filter((f) => f.endsWith('.sol'));
  if (sources.length !== 1) continue;
  const file = sources[0];
  const input = {
    language: 'Solidity',
    sources: { [file]: { content: fs.readFileSync(path.join(dir, file), 'utf8') } },
    settings: {
      optimizer: { enabled: false },
      outputSelection: { '*': { '*': ['abi', 'evm.bytecode.object', 'evm.deployedBytecode.object'] } },
    },
  };
  const out = JSON.parse(solc.compile(JSON.stringify(input)));
  for (const err of out.errors || []) {
    if (err.severity === 'error') throw new Error(err.formattedMessage);
  }
  const contracts = out.contracts[file];
  const cname = Object.keys(contracts)[0];
  const c = contracts[cname];
  fs.writeFileSync(path.join(dir, 'deploy.hex'), c.evm.bytecode.object + '\n');
  fs.writeFileSync(path.join(dir, 'runtime.hex'), c.evm.deployedBytecode.object + '\n');
  fs.writeFileSync(path.join(dir, 'abi.json'), JSON.stringify(c.abi, null, 2) + '\n');
  console.log(`${name}: ${cname} runtime ${c.evm.deployedBytecode.object.length / 2} bytes`);
}
