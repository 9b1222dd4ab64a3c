import { defineConfig } from "vitest/config";

export default defineConfig({
  resolve: {
    // source files import with explicit .js for native browser ESM; map the
    // relative specifiers back onto the .ts sources for the test runner
    alias: [{ find: /^(\.{1,2}\/.*)\.js$/, replacement: "$1" }],
  },
  test: {
    include: ["tests/**/*.test.ts"],
    testTimeout: 120_000,
    hookTimeout: 60_000,
  },
});
