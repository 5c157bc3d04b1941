import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    environment: "node",
    // e2e tests spawn the Python service and replay real audio
    testTimeout: 120_000,
    hookTimeout: 120_000,
  },
});
