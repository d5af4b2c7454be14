import { defineConfig } from 'vitest/config';

export default defineConfig({
  test: {
    testTimeout: 120_000,
    hookTimeout: 120_000,
    // tf.LayersModel instances leak between reused workers; keep runs clean
    pool: 'forks',
    // training and latency tests are timing-sensitive; avoid CPU contention
    fileParallelism: false,
  },
});
