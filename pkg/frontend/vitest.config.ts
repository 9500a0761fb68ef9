import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    environment: "node",
    testTimeout: 120_000,
    hookTimeout: 90_000,
    // the e2e suite owns one uvicorn child process; keep runs serial
    fileParallelism: false,
  },
});
